#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sketchime/autograd.hpp"
#include "sketchime/knowledge.hpp"
#include "sketchime/raster.hpp"
#include "sketchime/sketch.hpp"

namespace sketchime {

enum class Backbone { SmallCnn, ResNet18 };
enum class HeadKind { Linear, Cosine };

struct ModelConfig {
  Backbone cnn_backbone = Backbone::SmallCnn;
  std::vector<int> cnn_channels{8, 16, 32, 64};  // small CNN, one entry per block
  int resnet_width = 64;                         // first ResNet stage width
  int image_size = 224;
  double line_width = 2.0;
  int point_count = kDefaultPointCount;

  int sketch_feature_dim = 128;
  int gnn_blocks = 4;
  int per_block_dim = 32;
  int knn_k = 10;
  std::vector<int> dilations{1, 1, 2, 2};
  int spool_hidden = 128;
  int seg_hidden = 64;

  int num_categories = 0;
  int num_components = 0;
  int topk = 3;
  double rec_confidence_threshold = 0.5;
  bool use_cfa = true;

  HeadKind head = HeadKind::Linear;
  double cosine_scale = 16.0;
  int virtual_categories = 0;
  int virtual_components = 0;

  int gnn_feature_dim() const { return gnn_blocks * per_block_dim; }
  int fused_dim() const { return sketch_feature_dim + 2 * gnn_feature_dim(); }
  RenderConfig render() const { return {image_size, image_size, line_width}; }
  void validate() const;

  /// Full-scale profile: 300 points, 224x224 images, ResNet18 stream.
  static ModelConfig full(int num_categories, int num_components);
  /// CPU-feasible profile used by tests and the synthetic corpus.
  static ModelConfig desk(int num_categories, int num_components);
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Named parameter arrays plus the config that shaped them.
struct ModelState {
  ModelConfig config;
  std::vector<std::pair<std::string, ag::Var>> params;

  const ag::Var& param(std::string_view name) const;
  bool has_param(std::string_view name) const;
  void set_param(const std::string& name, Matrix value);
  void erase_param(std::string_view name);
  std::vector<ag::Var> vars() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
  void zero_grad();
  /// Deep copy; the clone shares no storage with this state.
  ModelState clone() const;
};

ModelState init_model(const ModelConfig& config, std::uint64_t seed);

/// Autodiff view of one forward pass. Probabilities are pre-gating.
struct ForwardGraph {
  ag::Var f_c;        // 1 x sketch_feature_dim
  ag::Var f_g;        // N x gnn_feature_dim
  ag::Var f_s;        // strokes x gnn_feature_dim
  ag::Var f_sg;       // N x 2*gnn_feature_dim
  ag::Var f_csg;      // N x fused_dim
  ag::Var seg_embed;  // N x seg_hidden
  ag::Var rec_logits; // 1 x C_R (+ virtual)
  ag::Var seg_logits; // N x C_S (+ virtual)
  ag::Var p_r;
  ag::Var p_s;
};

/// Plain-value forward result; `p_s_final` is gated and renormalized when
/// `rsm_applied`, otherwise equal to `p_s`.
struct ForwardOutput {
  Matrix f_c, f_g, f_sg, f_csg;
  Matrix p_r, p_s, p_s_final;
  Matrix gamma;  // 1 x C_S, all ones when gating did not fire
  bool rsm_applied = false;
};

/// Intermediate activations at the mixing layer (CNN block 2, GNN block 2).
struct MidFeatures {
  ag::Var cnn;
  ag::ImageShape cnn_shape;
  std::vector<ag::Var> gnn;  // outputs of the first two graph blocks
};

MidFeatures forward_front(const ModelState& state, const ResampledSketch& rs, const RasterImage& img);
/// Continues from the mixing layer; `rs` supplies the stroke structure.
ForwardGraph forward_back(const ModelState& state, const ResampledSketch& rs, const MidFeatures& mid,
                          bool include_virtual = false);
ForwardGraph forward_graph(const ModelState& state, const ResampledSketch& rs, const RasterImage& img,
                           bool include_virtual = false);

ForwardOutput forward(const ResampledSketch& rs, const RasterImage& img, const ModelState& state,
                      const KnowledgeMatrix& km, bool enable_rsm = true);

using NodeMlp = std::function<ag::Var(const ag::Var&)>;

/// Stroke-level pooling: f_s[j] = max over nodes i of stroke j of mlp(f_g[i]);
/// f_sg[i] = [f_s[stroke(i)], f_g[i]].
std::pair<ag::Var, ag::Var> spool(const ag::Var& f_g, std::span<const int> stroke_of_node, const NodeMlp& mlp);

struct RsmResult {
  Matrix gamma;      // 1 x C_S
  Matrix p_s_final;  // N x C_S, rows sum to 1
};

/// Column-wise max over the top-k rows of C_r2s picked by P_r (ties: lower
/// index), then row-wise Hadamard product with P_s and renormalization.
RsmResult rsm_gate(const Matrix& p_r, const Matrix& p_s, const KnowledgeMatrix& km, int topk);

/// Indices of the k largest entries of a row, descending, ties by lower index.
std::vector<int> top_k(const Matrix& row, int k);

}  // namespace sketchime
