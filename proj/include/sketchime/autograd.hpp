#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sketchime/matrix.hpp"

// Reverse-mode differentiation over dense row-major matrices. Every op builds
// a node holding its value and a closure that pushes the output gradient to
// its inputs; `backward` runs the closures in reverse topological order.
namespace sketchime::ag {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Matrix&)> backward;

  void accumulate(const Matrix& g);
  template <typename Expr>
  void accumulate_expr(const Expr& g) {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    grad += g;
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double scalar() const { return node_->value(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }

  void zero_grad() { node_->grad.resize(0, 0); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
/// Leaf whose gradient is accumulated by `backward`.
Var parameter(Matrix value);

/// Seeds d(loss)/d(loss) = 1 for a 1x1 loss. Parameter gradients accumulate
/// across calls until `zero_grad`.
void backward(const Var& loss);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a (n x c) + b (1 x c) broadcast over rows.
Var add_row(const Var& a, const Var& b);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(const Var& a, std::span<const int> index);
/// Row-group max: out(g, c) = max over rows r with group[r] == g of a(r, c).
/// Gradient goes to the first maximizing row.
Var segment_max(const Var& a, std::span<const int> group, int groups);
Var segment_mean(const Var& a, std::span<const int> group, int groups);
/// Column-wise max over all rows, 1 x c.
Var column_max(const Var& a);
Var broadcast_rows(const Var& row, Eigen::Index n);
Var transpose(const Var& a);
Var softmax_rows(const Var& a);
Var log_eps(const Var& a, double eps);
Var normalize_rows_sum(const Var& a);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);
Var sum(const Var& a);
Var mean(const Var& a);
/// Mean over rows of -log softmax(logits)[label].
Var cross_entropy(const Var& logits, std::span<const int> labels);
/// Mean over rows of the logistic loss with targets in {0,1}; logits n x 1.
Var bce_with_logits(const Var& logits, std::span<const double> targets);
/// Row-wise outer product flattened row-major: out(r, i*C + j) = f(r,i) g(r,j).
Var outer_rows(const Var& f, const Var& g);
/// Identity forward, gradient scaled by -coeff.
Var grad_reverse(const Var& a, double coeff);
Var detach(const Var& a);

struct ImageShape {
  int channels = 0;
  int height = 0;
  int width = 0;
};

/// x: channels x (H*W). weight: out_channels x (in_channels*k*k), bias 1 x out_channels.
Var conv2d(const Var& x, ImageShape in, const Var& weight, const Var& bias, int kernel, int stride,
           int pad, ImageShape* out_shape);
Var max_pool2d(const Var& x, ImageShape in, int window, ImageShape* out_shape);
/// channels x (H*W) -> 1 x channels.
Var global_avg_pool(const Var& x);

}  // namespace sketchime::ag
