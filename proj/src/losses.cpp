#include "sketchime/losses.hpp"

#include <algorithm>

#include "sketchime/errors.hpp"

namespace sketchime {

using ag::Var;

void LossConfig::validate() const {
  if (!(lambda1 > 0.0)) throw ConfigError("lambda1 must be positive");
  if (lambda2 != 0 && lambda2 != 1) throw ConfigError("lambda2 must be 0 or 1");
}

namespace {

Var smooth(const Var& v, double eps) {
  Var p = ag::normalize_rows_sum(v);
  return ag::normalize_rows_sum(ag::add(p, ag::constant(Matrix::Constant(p.rows(), p.cols(), eps))));
}

}  // namespace

Var kld_loss(const Var& p_r, const Var& p_s, std::span<const int> stroke_of_node, const KnowledgeMatrix& km,
             double eps) {
  if (p_r.cols() != km.num_categories() || p_s.cols() != km.num_components())
    throw ConfigError("kld_loss: probabilities do not match the knowledge matrix");
  if (stroke_of_node.empty()) throw ConfigError("kld_loss: at least one stroke is required");
  const int strokes = *std::max_element(stroke_of_node.begin(), stroke_of_node.end()) + 1;
  Var from_rec = smooth(ag::matmul(p_r, ag::constant(km.c_r2s)), eps);
  Var from_seg = smooth(ag::column_max(ag::segment_mean(p_s, stroke_of_node, strokes)), eps);
  return ag::sum(ag::mul(from_rec, ag::sub(ag::log_eps(from_rec, 0.0), ag::log_eps(from_seg, 0.0))));
}

double kld_value(const Matrix& p_r, const Matrix& p_s, std::span<const int> stroke_of_node,
                 const KnowledgeMatrix& km, double eps) {
  return kld_loss(ag::constant(p_r), ag::constant(p_s), stroke_of_node, km, eps).scalar();
}

LossTerms total_loss(const ForwardGraph& out, int y_category, std::span<const int> y_semantic,
                     std::span<const int> stroke_of_node, const KnowledgeMatrix& km, const LossConfig& cfg) {
  cfg.validate();
  if (static_cast<Eigen::Index>(y_semantic.size()) != out.seg_logits.rows())
    throw LabelError("one semantic label per point is required");
  const int cat[] = {y_category};
  Var ls = ag::cross_entropy(out.seg_logits, y_semantic);
  Var lr = ag::cross_entropy(out.rec_logits, cat);

  LossTerms t;
  t.segmentation = ls.scalar();
  t.recognition = lr.scalar();
  t.total = ag::add(ls, ag::scale(lr, cfg.lambda1));
  // The KL term needs the full category/component layout; virtual logits are
  // excluded by construction of `out`.
  if (out.p_r.cols() == km.num_categories() && out.p_s.cols() == km.num_components()) {
    Var kl = kld_loss(out.p_r, out.p_s, stroke_of_node, km);
    t.kl = kl.scalar();
    if (cfg.lambda2 == 1) t.total = ag::add(t.total, kl);
  } else if (cfg.lambda2 == 1) {
    throw ConfigError("KL term needs predictions matching the knowledge matrix");
  }
  return t;
}

}  // namespace sketchime
