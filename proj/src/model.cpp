#include "sketchime/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "sketchime/errors.hpp"
#include "sketchime/graph.hpp"

namespace sketchime {

using ag::Var;
using nlohmann::json;

void ModelConfig::validate() const {
  if (num_categories < 1 || num_components < 1) throw ConfigError("model needs at least one category and component");
  if (gnn_blocks != static_cast<int>(dilations.size()))
    throw ConfigError("one dilation per graph block is required");
  if (gnn_blocks < 2) throw ConfigError("at least two graph blocks are required");
  if (cnn_backbone == Backbone::SmallCnn && cnn_channels.size() < 2)
    throw ConfigError("small CNN needs at least two blocks");
  if (per_block_dim < 1 || sketch_feature_dim < 1 || spool_hidden < 1 || seg_hidden < 1 || knn_k < 1)
    throw ConfigError("layer widths must be positive");
  for (int d : dilations)
    if (d < 1) throw ConfigError("dilation must be >= 1");
  if (image_size < 8) throw ConfigError("image_size must be >= 8");
  if (topk < 1) throw ConfigError("topk must be >= 1");
  if (rec_confidence_threshold < 0.0 || rec_confidence_threshold > 1.0)
    throw ConfigError("rec_confidence_threshold must lie in [0,1]");
  if (virtual_categories < 0 || virtual_components < 0) throw ConfigError("virtual prototype counts must be >= 0");
  if (head == HeadKind::Linear && (virtual_categories > 0 || virtual_components > 0))
    throw ConfigError("virtual prototypes require the cosine head");
}

ModelConfig ModelConfig::full(int num_categories, int num_components) {
  ModelConfig c;
  c.cnn_backbone = Backbone::ResNet18;
  c.num_categories = num_categories;
  c.num_components = num_components;
  return c;
}

ModelConfig ModelConfig::desk(int num_categories, int num_components) {
  ModelConfig c;
  c.image_size = 32;
  c.line_width = 1.5;
  c.point_count = 64;
  c.knn_k = 8;
  c.num_categories = num_categories;
  c.num_components = num_components;
  return c;
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"cnn_backbone", c.cnn_backbone == Backbone::SmallCnn ? "small_cnn" : "resnet18"},
           {"cnn_channels", c.cnn_channels},
           {"resnet_width", c.resnet_width},
           {"image_size", c.image_size},
           {"line_width", c.line_width},
           {"point_count", c.point_count},
           {"sketch_feature_dim", c.sketch_feature_dim},
           {"gnn_blocks", c.gnn_blocks},
           {"per_block_dim", c.per_block_dim},
           {"knn_k", c.knn_k},
           {"dilations", c.dilations},
           {"spool_hidden", c.spool_hidden},
           {"seg_hidden", c.seg_hidden},
           {"num_categories", c.num_categories},
           {"num_components", c.num_components},
           {"topk", c.topk},
           {"rec_confidence_threshold", c.rec_confidence_threshold},
           {"use_cfa", c.use_cfa},
           {"head", c.head == HeadKind::Linear ? "linear" : "cosine"},
           {"cosine_scale", c.cosine_scale},
           {"virtual_categories", c.virtual_categories},
           {"virtual_components", c.virtual_components}};
}

void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  const std::string backbone = j.value("cnn_backbone", std::string("small_cnn"));
  if (backbone != "small_cnn" && backbone != "resnet18") throw ConfigError("unknown cnn_backbone " + backbone);
  c.cnn_backbone = backbone == "resnet18" ? Backbone::ResNet18 : Backbone::SmallCnn;
  c.cnn_channels = j.value("cnn_channels", d.cnn_channels);
  c.resnet_width = j.value("resnet_width", d.resnet_width);
  c.image_size = j.value("image_size", d.image_size);
  c.line_width = j.value("line_width", d.line_width);
  c.point_count = j.value("point_count", d.point_count);
  c.sketch_feature_dim = j.value("sketch_feature_dim", d.sketch_feature_dim);
  c.gnn_blocks = j.value("gnn_blocks", d.gnn_blocks);
  c.per_block_dim = j.value("per_block_dim", d.per_block_dim);
  c.knn_k = j.value("knn_k", d.knn_k);
  c.dilations = j.value("dilations", d.dilations);
  c.spool_hidden = j.value("spool_hidden", d.spool_hidden);
  c.seg_hidden = j.value("seg_hidden", d.seg_hidden);
  c.num_categories = j.value("num_categories", d.num_categories);
  c.num_components = j.value("num_components", d.num_components);
  c.topk = j.value("topk", d.topk);
  c.rec_confidence_threshold = j.value("rec_confidence_threshold", d.rec_confidence_threshold);
  c.use_cfa = j.value("use_cfa", d.use_cfa);
  const std::string head = j.value("head", std::string("linear"));
  if (head != "linear" && head != "cosine") throw ConfigError("unknown head " + head);
  c.head = head == "cosine" ? HeadKind::Cosine : HeadKind::Linear;
  c.cosine_scale = j.value("cosine_scale", d.cosine_scale);
  c.virtual_categories = j.value("virtual_categories", d.virtual_categories);
  c.virtual_components = j.value("virtual_components", d.virtual_components);
}

// ---------------------------------------------------------------------------
// ModelState

const Var& ModelState::param(std::string_view name) const {
  for (const auto& [n, v] : params)
    if (n == name) return v;
  throw ConfigError("missing parameter '" + std::string(name) + "'");
}

bool ModelState::has_param(std::string_view name) const {
  return std::any_of(params.begin(), params.end(), [&](const auto& p) { return p.first == name; });
}

void ModelState::set_param(const std::string& name, Matrix value) {
  for (auto& [n, v] : params)
    if (n == name) {
      v = ag::parameter(std::move(value));
      return;
    }
  params.emplace_back(name, ag::parameter(std::move(value)));
}

void ModelState::erase_param(std::string_view name) {
  std::erase_if(params, [&](const auto& p) { return p.first == name; });
}

std::vector<Var> ModelState::vars() const {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const auto& [n, v] : params) out.push_back(v);
  return out;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params) n += static_cast<std::size_t>(v.value().size());
  return n;
}

bool ModelState::all_finite() const {
  return std::all_of(params.begin(), params.end(), [](const auto& p) { return p.second.value().allFinite(); });
}

void ModelState::zero_grad() {
  for (auto& [n, v] : params) v.zero_grad();
}

ModelState ModelState::clone() const {
  ModelState out;
  out.config = config;
  out.params.reserve(params.size());
  for (const auto& [n, v] : params) out.params.emplace_back(n, ag::parameter(v.value()));
  return out;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Matrix uniform(Eigen::Index rows, Eigen::Index cols, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng_);
    return m;
  }

  Matrix normal(Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng_);
    return m;
  }

  // He-uniform for ReLU layers.
  Matrix he(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
    return uniform(rows, cols, std::sqrt(6.0 / static_cast<double>(fan_in)));
  }

 private:
  std::mt19937_64 rng_;
};

void add_linear(ModelState& s, Initializer& init, const std::string& name, int in, int out) {
  s.params.emplace_back(name + ".w", ag::parameter(init.he(in, out, in)));
  s.params.emplace_back(name + ".b", ag::parameter(Matrix::Zero(1, out)));
}

void add_conv(ModelState& s, Initializer& init, const std::string& name, int in, int out, int k, bool zero = false) {
  const int fan_in = in * k * k;
  s.params.emplace_back(name + ".w", ag::parameter(zero ? Matrix::Zero(out, fan_in) : init.he(out, fan_in, fan_in)));
  s.params.emplace_back(name + ".b", ag::parameter(Matrix::Zero(1, out)));
}

int resnet_stage_width(const ModelConfig& c, int stage) { return c.resnet_width << stage; }

void add_resnet(ModelState& s, Initializer& init, const ModelConfig& c) {
  add_conv(s, init, "cnn.stem", 3, c.resnet_width, 7);
  int in = c.resnet_width;
  for (int stage = 0; stage < 4; ++stage) {
    const int width = resnet_stage_width(c, stage);
    for (int blk = 0; blk < 2; ++blk) {
      const std::string p = "cnn.s" + std::to_string(stage) + "b" + std::to_string(blk);
      add_conv(s, init, p + ".conv1", in, width, 3);
      // Zero-initialized residual branch: every block starts as the identity.
      add_conv(s, init, p + ".conv2", width, width, 3, true);
      if (in != width || (blk == 0 && stage > 0)) add_conv(s, init, p + ".proj", in, width, 1);
      in = width;
    }
  }
  add_linear(s, init, "cnn.fc", in, c.sketch_feature_dim);
}

}  // namespace

ModelState init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Initializer init(seed);
  ModelState s;
  s.config = config;

  if (config.cnn_backbone == Backbone::SmallCnn) {
    int in = 3;
    for (std::size_t b = 0; b < config.cnn_channels.size(); ++b) {
      add_conv(s, init, "cnn.conv" + std::to_string(b), in, config.cnn_channels[b], 3);
      in = config.cnn_channels[b];
    }
    add_linear(s, init, "cnn.fc", in, config.sketch_feature_dim);
  } else {
    add_resnet(s, init, config);
  }

  int in = 2;
  for (int b = 0; b < config.gnn_blocks; ++b) {
    const std::string p = "gnn.block" + std::to_string(b);
    s.params.emplace_back(p + ".theta", ag::parameter(init.he(in, config.per_block_dim, 2 * in)));
    s.params.emplace_back(p + ".phi", ag::parameter(init.he(in, config.per_block_dim, 2 * in)));
    s.params.emplace_back(p + ".b", ag::parameter(Matrix::Zero(1, config.per_block_dim)));
    in = config.per_block_dim;
  }
  const int fg = config.gnn_feature_dim();
  add_linear(s, init, "spool.fc1", fg, config.spool_hidden);
  add_linear(s, init, "spool.fc2", config.spool_hidden, fg);
  add_linear(s, init, "seg.fc1", config.fused_dim(), config.seg_hidden);

  if (config.head == HeadKind::Linear) {
    s.params.emplace_back("rec_head.w", ag::parameter(init.uniform(config.sketch_feature_dim, config.num_categories,
                                                                   1.0 / std::sqrt(config.sketch_feature_dim))));
    s.params.emplace_back("rec_head.b", ag::parameter(Matrix::Zero(1, config.num_categories)));
    s.params.emplace_back("seg_head.w", ag::parameter(init.uniform(config.seg_hidden, config.num_components,
                                                                   1.0 / std::sqrt(config.seg_hidden))));
    s.params.emplace_back("seg_head.b", ag::parameter(Matrix::Zero(1, config.num_components)));
  } else {
    s.params.emplace_back("rec_proto", ag::parameter(init.normal(config.num_categories, config.sketch_feature_dim)));
    s.params.emplace_back("seg_proto", ag::parameter(init.normal(config.num_components, config.seg_hidden)));
    if (config.virtual_categories > 0)
      s.params.emplace_back("rec_virtual",
                            ag::parameter(init.normal(config.virtual_categories, config.sketch_feature_dim)));
    if (config.virtual_components > 0)
      s.params.emplace_back("seg_virtual", ag::parameter(init.normal(config.virtual_components, config.seg_hidden)));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

Var linear(const ModelState& s, const std::string& name, const Var& x) {
  return ag::add_row(ag::matmul(x, s.param(name + ".w")), s.param(name + ".b"));
}

Var conv(const ModelState& s, const std::string& name, const Var& x, ag::ImageShape& shape, int k, int stride,
         int pad) {
  ag::ImageShape out;
  Var y = ag::conv2d(x, shape, s.param(name + ".w"), s.param(name + ".b"), k, stride, pad, &out);
  shape = out;
  return y;
}

Var image_var(const RasterImage& img) {
  Matrix x(img.channels, static_cast<Eigen::Index>(img.height) * img.width);
  std::copy(img.values.begin(), img.values.end(), x.data());
  return ag::constant(std::move(x));
}

Var resnet_block(const ModelState& s, const std::string& p, const Var& x, ag::ImageShape& shape, int stride) {
  ag::ImageShape in = shape;
  ag::ImageShape mid = shape;
  Var h = ag::relu(conv(s, p + ".conv1", x, mid, 3, stride, 1));
  Var branch = conv(s, p + ".conv2", h, mid, 3, 1, 1);
  Var skip = x;
  if (s.has_param(p + ".proj.w")) {
    ag::ImageShape proj = in;
    skip = conv(s, p + ".proj", x, proj, 1, stride, 0);
  }
  shape = mid;
  return ag::relu(ag::add(branch, skip));
}

// Stages [first, last) of the CNN stream. Small CNN: one stage per conv block,
// 2x2 max-pool after every block but the last. ResNet: stem + 4 stages.
Var cnn_stages(const ModelState& s, Var x, ag::ImageShape& shape, int first, int last) {
  const auto& c = s.config;
  if (c.cnn_backbone == Backbone::SmallCnn) {
    const int blocks = static_cast<int>(c.cnn_channels.size());
    for (int b = first; b < std::min(last, blocks); ++b) {
      x = ag::relu(conv(s, "cnn.conv" + std::to_string(b), x, shape, 3, 1, 1));
      if (b + 1 < blocks && shape.height >= 2 && shape.width >= 2) {
        ag::ImageShape out;
        x = ag::max_pool2d(x, shape, 2, &out);
        shape = out;
      }
    }
    return x;
  }
  for (int stage = first; stage < std::min(last, 4); ++stage) {
    if (stage == 0) {
      x = ag::relu(conv(s, "cnn.stem", x, shape, 7, 2, 3));
      if (shape.height >= 2 && shape.width >= 2) {
        ag::ImageShape out;
        x = ag::max_pool2d(x, shape, 2, &out);
        shape = out;
      }
    }
    for (int blk = 0; blk < 2; ++blk) {
      const int stride = (blk == 0 && stage > 0 && shape.height > 1) ? 2 : 1;
      x = resnet_block(s, "cnn.s" + std::to_string(stage) + "b" + std::to_string(blk), x, shape, stride);
    }
  }
  return x;
}

int cnn_stage_count(const ModelConfig& c) {
  return c.cnn_backbone == Backbone::SmallCnn ? static_cast<int>(c.cnn_channels.size()) : 4;
}

// EdgeConv: h_i = max_j lrelu(phi x_i + theta (x_j - x_i) + b).
Var edge_conv(const ModelState& s, int block, const Var& x, const std::vector<int>& center,
              const std::vector<int>& neighbor, int nodes) {
  const std::string p = "gnn.block" + std::to_string(block);
  const Var& theta = s.param(p + ".theta");
  const Var self_part = ag::matmul(x, ag::sub(s.param(p + ".phi"), theta));
  const Var nbr_part = ag::matmul(x, theta);
  Var e = ag::add(ag::gather_rows(self_part, center), ag::gather_rows(nbr_part, neighbor));
  e = ag::leaky_relu(ag::add_row(e, s.param(p + ".b")), 0.2);
  return ag::segment_max(e, center, nodes);
}

void append_knn(const NeighborIndex& knn, std::vector<std::vector<int>>& table) {
  for (int i = 0; i < knn.node_count(); ++i)
    for (int j = 0; j < knn.k; ++j) table[i].push_back(knn.at(i, j));
}

Var gnn_block(const ModelState& s, int block, const Var& x, const ResampledSketch& rs) {
  const int n = static_cast<int>(rs.size());
  const auto& c = s.config;
  std::vector<std::vector<int>> table(n);
  if (block == 0) {
    // Initial stroke edges (previous/next point, self when absent) plus
    // dilated k-NN on coordinates.
    for (int i = 0; i < n; ++i) {
      const bool has_prev = i > 0 && rs.stroke_of_point[i - 1] == rs.stroke_of_point[i];
      const bool has_next = i + 1 < n && rs.stroke_of_point[i + 1] == rs.stroke_of_point[i];
      table[i] = {has_prev ? i - 1 : i, has_next ? i + 1 : i};
    }
  }
  append_knn(dilated_knn(x.value(), c.knn_k, c.dilations[block]), table);
  std::vector<int> center, neighbor;
  center.reserve(static_cast<std::size_t>(n) * table[0].size());
  neighbor.reserve(center.capacity());
  for (int i = 0; i < n; ++i)
    for (int j : table[i]) {
      center.push_back(i);
      neighbor.push_back(j);
    }
  return edge_conv(s, block, x, center, neighbor, n);
}

Var classifier_logits(const ModelState& s, const Var& embed, const char* linear_name, const char* proto_name,
                      const char* virtual_name, bool include_virtual) {
  if (s.config.head == HeadKind::Linear) return linear(s, linear_name, embed);
  Var protos = s.param(proto_name);
  if (include_virtual && s.has_param(virtual_name)) protos = ag::concat_rows({protos, s.param(virtual_name)});
  Var cos = ag::matmul(ag::l2_normalize_rows(embed), ag::transpose(ag::l2_normalize_rows(protos)));
  return ag::scale(cos, s.config.cosine_scale);
}

void check_inputs(const ModelState& s, const ResampledSketch& rs, const RasterImage& img) {
  const auto& c = s.config;
  if (rs.size() == 0) throw ConfigError("forward needs at least one point");
  if (rs.stroke_of_point.size() != rs.size()) throw ConfigError("stroke index does not match point count");
  if (img.channels != 3 || img.height != c.image_size || img.width != c.image_size)
    throw ConfigError("image shape does not match model config");
}

}  // namespace

std::pair<Var, Var> spool(const Var& f_g, std::span<const int> stroke_of_node, const NodeMlp& mlp) {
  if (static_cast<Eigen::Index>(stroke_of_node.size()) != f_g.rows())
    throw ConfigError("spool: every node needs a stroke index");
  const int strokes =
      stroke_of_node.empty() ? 0 : *std::max_element(stroke_of_node.begin(), stroke_of_node.end()) + 1;
  Var f_s = ag::segment_max(mlp(f_g), stroke_of_node, strokes);
  Var f_sg = ag::concat_cols({ag::gather_rows(f_s, stroke_of_node), f_g});
  return {f_s, f_sg};
}

MidFeatures forward_front(const ModelState& state, const ResampledSketch& rs, const RasterImage& img) {
  check_inputs(state, rs, img);
  MidFeatures mid;
  mid.cnn_shape = {img.channels, img.height, img.width};
  mid.cnn = cnn_stages(state, image_var(img), mid.cnn_shape, 0, 2);

  Matrix coords(static_cast<Eigen::Index>(rs.size()), 2);
  for (std::size_t i = 0; i < rs.size(); ++i) coords.row(static_cast<Eigen::Index>(i)) << rs.points[i].x, rs.points[i].y;
  Var x = ag::constant(std::move(coords));
  for (int b = 0; b < 2; ++b) {
    x = gnn_block(state, b, x, rs);
    mid.gnn.push_back(x);
  }
  return mid;
}

ForwardGraph forward_back(const ModelState& state, const ResampledSketch& rs, const MidFeatures& mid,
                          bool include_virtual) {
  const auto& c = state.config;
  ForwardGraph g;

  ag::ImageShape shape = mid.cnn_shape;
  Var h = cnn_stages(state, mid.cnn, shape, 2, cnn_stage_count(c));
  g.f_c = linear(state, "cnn.fc", ag::global_avg_pool(h));

  std::vector<Var> blocks = mid.gnn;
  Var x = blocks.back();
  for (int b = static_cast<int>(blocks.size()); b < c.gnn_blocks; ++b) {
    x = gnn_block(state, b, x, rs);
    blocks.push_back(x);
  }
  g.f_g = ag::concat_cols(blocks);

  auto mlp = [&](const Var& v) { return linear(state, "spool.fc2", ag::relu(linear(state, "spool.fc1", v))); };
  std::tie(g.f_s, g.f_sg) = spool(g.f_g, rs.stroke_of_point, mlp);

  const Eigen::Index n = g.f_g.rows();
  Var sketch_part = c.use_cfa ? ag::broadcast_rows(g.f_c, n) : ag::constant(Matrix::Zero(n, c.sketch_feature_dim));
  g.f_csg = ag::concat_cols({sketch_part, g.f_sg});
  g.seg_embed = ag::relu(linear(state, "seg.fc1", g.f_csg));

  g.rec_logits = classifier_logits(state, g.f_c, "rec_head", "rec_proto", "rec_virtual", include_virtual);
  g.seg_logits = classifier_logits(state, g.seg_embed, "seg_head", "seg_proto", "seg_virtual", include_virtual);
  g.p_r = ag::softmax_rows(g.rec_logits);
  g.p_s = ag::softmax_rows(g.seg_logits);
  return g;
}

ForwardGraph forward_graph(const ModelState& state, const ResampledSketch& rs, const RasterImage& img,
                           bool include_virtual) {
  return forward_back(state, rs, forward_front(state, rs, img), include_virtual);
}

std::vector<int> top_k(const Matrix& row, int k) {
  std::vector<int> idx(static_cast<std::size_t>(row.size()));
  std::iota(idx.begin(), idx.end(), 0);
  k = std::clamp(k, 0, static_cast<int>(idx.size()));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    const double va = row.data()[a], vb = row.data()[b];
    return va > vb || (va == vb && a < b);
  });
  idx.resize(k);
  return idx;
}

RsmResult rsm_gate(const Matrix& p_r, const Matrix& p_s, const KnowledgeMatrix& km, int topk) {
  if (p_r.size() != km.num_categories() || p_s.cols() != km.num_components())
    throw ConfigError("rsm_gate: probabilities do not match the knowledge matrix");
  if (topk < 1 || topk > km.num_categories()) throw ConfigError("rsm_gate: topk must lie in [1, C_R]");
  RsmResult out;
  out.gamma = Matrix::Constant(1, km.num_components(), -std::numeric_limits<double>::infinity());
  for (int cat : top_k(p_r, topk)) out.gamma = out.gamma.cwiseMax(km.c_r2s.row(cat));
  out.p_s_final = p_s.array().rowwise() * out.gamma.row(0).array();
  const Eigen::VectorXd sums = out.p_s_final.rowwise().sum();
  for (Eigen::Index r = 0; r < out.p_s_final.rows(); ++r)
    if (sums(r) > 0.0) out.p_s_final.row(r) /= sums(r);
  return out;
}

ForwardOutput forward(const ResampledSketch& rs, const RasterImage& img, const ModelState& state,
                      const KnowledgeMatrix& km, bool enable_rsm) {
  const auto& c = state.config;
  ForwardGraph g = forward_graph(state, rs, img);
  ForwardOutput out;
  out.f_c = g.f_c.value();
  out.f_g = g.f_g.value();
  out.f_sg = g.f_sg.value();
  out.f_csg = g.f_csg.value();
  out.p_r = g.p_r.value();
  out.p_s = g.p_s.value();
  if (!out.p_r.allFinite() || !out.p_s.allFinite() || !out.f_csg.allFinite())
    throw NumericError("non-finite activations in forward pass");

  out.p_s_final = out.p_s;
  out.gamma = Matrix::Ones(1, out.p_s.cols());
  if (enable_rsm && out.p_r.maxCoeff() > c.rec_confidence_threshold) {
    if (km.num_categories() != out.p_r.cols() || km.num_components() != out.p_s.cols())
      throw ConfigError("knowledge matrix does not match classifier sizes");
    RsmResult r = rsm_gate(out.p_r, out.p_s, km, std::min(c.topk, km.num_categories()));
    out.gamma = std::move(r.gamma);
    out.p_s_final = std::move(r.p_s_final);
    out.rsm_applied = true;
  }
  return out;
}

}  // namespace sketchime
