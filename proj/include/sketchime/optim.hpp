#pragma once

#include <cmath>
#include <vector>

#include "sketchime/autograd.hpp"

namespace sketchime {

struct AdamConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of parameters; moment buffers follow list order.
class Adam {
 public:
  Adam(std::vector<ag::Var> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  int steps() const { return t_; }

  /// Parameters without a gradient are skipped.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Matrix& g = params_[i].grad();
      if (g.size() == 0) continue;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      params_[i].mutable_value().array() -=
          cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<ag::Var> params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  int t_ = 0;
};

}  // namespace sketchime
