#pragma once

#include <string>

#include "sketchime/knowledge.hpp"
#include "sketchime/model.hpp"

namespace sketchime {

struct Checkpoint {
  ModelState state;
  KnowledgeMatrix km;
};

/// Binary layout: magic "SKIMCKPT", u32 version, u64 header length, JSON
/// header (model config, knowledge matrix, parameter names and shapes), then
/// the raw little-endian doubles of every parameter in header order.
void save_checkpoint(const std::string& path, const ModelState& state, const KnowledgeMatrix& km);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sketchime
