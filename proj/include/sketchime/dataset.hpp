#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sketchime/knowledge.hpp"
#include "sketchime/model.hpp"
#include "sketchime/raster.hpp"
#include "sketchime/sketch.hpp"

namespace sketchime {

/// A sketch turned into both model inputs: resampled points and raster.
struct Sample {
  ResampledSketch rs;
  RasterImage img;
  int category = -1;
  std::vector<int> semantic;  // per point, empty when unlabeled
  std::string source_id;
  std::uint64_t hash = 0;     // of the canonical record
};

/// clean -> normalize -> resample(point_count) -> rasterize.
Sample prepare_sample(const Sketch& sketch, const ModelConfig& config);
std::vector<Sample> prepare_dataset(const std::vector<Sketch>& sketches, const ModelConfig& config);

/// FNV-1a over the canonical NDJSON line.
std::uint64_t record_hash(const Sketch& sketch);

/// Order-independent digest of a set of record hashes.
std::string manifest_digest(const std::vector<Sample>& samples);

/// Labels must be in range and every stroke's component must belong to its
/// category according to the knowledge matrix. Category-only samples pass
/// when `require_semantics` is false.
void validate_labels(const std::vector<Sample>& samples, const KnowledgeMatrix& km, bool require_semantics = true);

/// Split each category's samples: the first `per_class_train` go to `train`.
void split_per_class(const std::vector<Sketch>& all, int per_class_train, std::vector<Sketch>& train,
                     std::vector<Sketch>& test);

}  // namespace sketchime
