#pragma once

#include <span>

#include "sketchime/autograd.hpp"
#include "sketchime/knowledge.hpp"
#include "sketchime/model.hpp"

namespace sketchime {

inline constexpr double kLogEpsilon = 1e-8;

struct LossConfig {
  double lambda1 = 150.0;  // recognition weight
  int lambda2 = 0;         // 1 enables the KL term

  void validate() const;
};

struct LossTerms {
  ag::Var total;
  double segmentation = 0.0;  // L_s, mean point cross-entropy
  double recognition = 0.0;   // L_r
  double kl = 0.0;            // L_kl (computed even when lambda2 = 0)
};

/// L = L_s + lambda1 L_r + lambda2 L_kl on pre-gating predictions.
LossTerms total_loss(const ForwardGraph& out, int y_category, std::span<const int> y_semantic,
                     std::span<const int> stroke_of_node, const KnowledgeMatrix& km, const LossConfig& cfg);

/// KL(P_sc^r || P_sc^s) where P_sc^r = P_r C_r2s and P_sc^s is the max over
/// strokes of the stroke-mean point distribution. Both are renormalized and
/// smoothed by `eps` before the divergence.
ag::Var kld_loss(const ag::Var& p_r, const ag::Var& p_s, std::span<const int> stroke_of_node,
                 const KnowledgeMatrix& km, double eps = kLogEpsilon);

/// Plain-value version of `kld_loss`.
double kld_value(const Matrix& p_r, const Matrix& p_s, std::span<const int> stroke_of_node,
                 const KnowledgeMatrix& km, double eps = kLogEpsilon);

}  // namespace sketchime
