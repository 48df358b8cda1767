#pragma once

#include <random>

#include "sketchime/dataset.hpp"
#include "sketchime/knowledge.hpp"
#include "sketchime/model.hpp"
#include "sketchime/synth.hpp"

namespace testing {

using namespace sketchime;

// N=12, C_R=3, C_S=4, every feature width 8.
inline ModelConfig tiny_config(int categories = 3, int components = 4) {
  ModelConfig c;
  c.cnn_channels = {4, 8};
  c.image_size = 8;
  c.line_width = 1.0;
  c.point_count = 12;
  c.sketch_feature_dim = 8;
  c.gnn_blocks = 2;
  c.per_block_dim = 4;
  c.dilations = {1, 2};
  c.knn_k = 3;
  c.spool_hidden = 8;
  c.seg_hidden = 8;
  c.num_categories = categories;
  c.num_components = components;
  return c;
}

// Categories 0:{0,1} 1:{2} 2:{1,3}.
inline KnowledgeMatrix tiny_knowledge() { return build_knowledge_matrix({{0, {0, 1}}, {1, {2}}, {2, {1, 3}}}, 0.9); }

// A labeled random sketch whose strokes follow `tiny_knowledge`.
inline Sketch tiny_sketch(std::mt19937_64& rng) {
  static const std::vector<std::vector<int>> comps{{0, 1}, {2}, {1, 3}};
  std::uniform_real_distribution<double> u(0.0, 10.0);
  Sketch s;
  const int cat = static_cast<int>(rng() % 3);
  s.category = cat;
  s.source_id = "t" + std::to_string(rng() % 100000);
  for (int c : comps[cat]) {
    Stroke st;
    st.semantic_label = c;
    const int n = 2 + static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) st.points.push_back({u(rng), u(rng)});
    s.strokes.push_back(st);
  }
  return s;
}

inline Sample tiny_sample(std::mt19937_64& rng, const ModelConfig& c) { return prepare_sample(tiny_sketch(rng), c); }

}  // namespace testing
