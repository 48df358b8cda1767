#pragma once

#include <map>
#include <string>
#include <vector>

#include "sketchime/knowledge.hpp"
#include "sketchime/sketch.hpp"

namespace sketchime {

/// SPG-style part-labelled sketches laid out as <root>/<category>/<id>.svg,
/// one stroke per path or polyline, the part name in a per-element attribute.
struct SpgImportOptions {
  std::vector<std::string> categories;  // explicit selection; empty keeps all
  int max_categories = 0;               // first N by name after selection; 0 keeps all
  std::string part_attribute = "class";
};

struct SpgDataset {
  std::vector<Sketch> sketches;                 // category-major, file names sorted
  std::vector<std::string> category_names;      // id = index
  std::vector<std::string> component_names;     // sorted union of part labels
  std::map<int, std::vector<int>> category_components;

  KnowledgeMatrix knowledge(double gamma_r) const;
};

/// Errors name the offending record as "<category>/<file>".
SpgDataset import_spg(const std::string& root, const SpgImportOptions& options = {});

/// Writes the same layout back, part names in `part_attribute`.
void export_spg(const SpgDataset& data, const std::string& root, const std::string& part_attribute = "class");

}  // namespace sketchime
