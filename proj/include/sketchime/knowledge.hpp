#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "sketchime/matrix.hpp"

namespace sketchime {

inline constexpr double kDefaultGammaR = 0.9;

/// Category-to-component translation matrix. Entry (i, j) is gamma_r when
/// category i contains component j and 1 - gamma_r otherwise.
struct KnowledgeMatrix {
  Matrix c_r2s;
  double gamma_r = kDefaultGammaR;
  std::vector<std::string> category_names;
  std::vector<std::string> component_names;

  int num_categories() const { return static_cast<int>(c_r2s.rows()); }
  int num_components() const { return static_cast<int>(c_r2s.cols()); }
  bool contains(int category, int component) const { return c_r2s(category, component) == gamma_r; }
  std::vector<int> components_of(int category) const;

  /// Rows `categories`, columns `components`, in the given order.
  KnowledgeMatrix restrict_to(const std::vector<int>& categories, const std::vector<int>& components) const;
};

/// `category_components` must cover categories 0..C_R-1. `num_components`
/// of -1 infers C_S as the largest referenced component id + 1.
KnowledgeMatrix build_knowledge_matrix(const std::map<int, std::vector<int>>& category_components, double gamma_r,
                                       int num_components = -1);

/// NDJSON metadata, one line per category:
///   {"category": 3, "components": [0, 4], "name": "optional"}
/// plus optional lines {"component": 4, "name": "..."} and {"num_components": 139}.
KnowledgeMatrix read_knowledge_metadata(std::istream& in, double gamma_r);
KnowledgeMatrix load_knowledge_metadata(const std::string& path, double gamma_r);
void write_knowledge_metadata(std::ostream& out, const KnowledgeMatrix& km);

}  // namespace sketchime
