#include "sketchime/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "sketchime/errors.hpp"

namespace sketchime::ag {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

namespace {

using BackFn = std::function<void(const Matrix&)>;

Var make(Matrix value, std::vector<Var> inputs, BackFn fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    for (auto& in : inputs) n->parents.push_back(in.shared());
    n->backward = std::move(fn);
  }
  return Var(std::move(n));
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

void backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) throw ConfigError("backward needs a scalar loss");
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, bool>> stack{{loss.node(), false}};
  while (!stack.empty()) {
    auto [n, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(n);
      continue;
    }
    if (!seen.insert(n).second) continue;
    stack.push_back({n, true});
    for (const auto& p : n->parents)
      if (p->requires_grad && !seen.count(p.get())) stack.push_back({p.get(), false});
  }

  // Intermediate gradients are reset so a graph can be re-run; leaves keep
  // accumulating.
  for (Node* n : order)
    if (n->backward) n->grad.resize(0, 0);
  loss.node()->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(n->grad);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  Node* pa = a.node();
  Node* pb = b.node();
  return make(std::move(out), {a, b}, [pa, pb](const Matrix& g) {
    if (pa->requires_grad) pa->accumulate_expr(g * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate_expr(pa->value.transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Node* pa = a.node();
  Node* pb = b.node();
  return make(a.value() + b.value(), {a, b}, [pa, pb](const Matrix& g) {
    if (pa->requires_grad) pa->accumulate(g);
    if (pb->requires_grad) pb->accumulate(g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Node* pa = a.node();
  Node* pb = b.node();
  return make(a.value() - b.value(), {a, b}, [pa, pb](const Matrix& g) {
    if (pa->requires_grad) pa->accumulate(g);
    if (pb->requires_grad) pb->accumulate_expr(-g);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Node* pa = a.node();
  Node* pb = b.node();
  return make(a.value().cwiseProduct(b.value()), {a, b}, [pa, pb](const Matrix& g) {
    if (pa->requires_grad) pa->accumulate_expr(g.cwiseProduct(pb->value));
    if (pb->requires_grad) pb->accumulate_expr(g.cwiseProduct(pa->value));
  });
}

Var scale(const Var& a, double s) {
  Node* pa = a.node();
  return make(a.value() * s, {a}, [pa, s](const Matrix& g) { pa->accumulate_expr(g * s); });
}

Var add_row(const Var& a, const Var& b) {
  if (b.rows() != 1 || b.cols() != a.cols()) throw ConfigError("add_row: bias shape mismatch");
  Matrix out = a.value();
  out.rowwise() += b.value().row(0);
  Node* pa = a.node();
  Node* pb = b.node();
  return make(std::move(out), {a, b}, [pa, pb](const Matrix& g) {
    if (pa->requires_grad) pa->accumulate(g);
    if (pb->requires_grad) pb->accumulate_expr(g.colwise().sum());
  });
}

Var relu(const Var& a) {
  Node* pa = a.node();
  return make(a.value().cwiseMax(0.0), {a}, [pa](const Matrix& g) {
    pa->accumulate_expr((pa->value.array() > 0.0).select(g, 0.0).matrix());
  });
}

Var leaky_relu(const Var& a, double slope) {
  Node* pa = a.node();
  Matrix out = (a.value().array() > 0.0).select(a.value(), slope * a.value());
  return make(std::move(out), {a}, [pa, slope](const Matrix& g) {
    pa->accumulate_expr((pa->value.array() > 0.0).select(g, slope * g).matrix());
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ConfigError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Node*> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(off);
    off += p.cols();
  }
  return make(std::move(out), parts, [nodes, offsets](const Matrix& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i]->requires_grad) nodes[i]->accumulate_expr(g.middleCols(offsets[i], nodes[i]->value.cols()));
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ConfigError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Node*> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(off);
    off += p.rows();
  }
  return make(std::move(out), parts, [nodes, offsets](const Matrix& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i]->requires_grad) nodes[i]->accumulate_expr(g.middleRows(offsets[i], nodes[i]->value.rows()));
  });
}

Var gather_rows(const Var& a, std::span<const int> index) {
  const auto& v = a.value();
  Matrix out(static_cast<Eigen::Index>(index.size()), v.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= v.rows()) throw ConfigError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(r)) = v.row(index[r]);
  }
  Node* pa = a.node();
  std::vector<int> idx(index.begin(), index.end());
  return make(std::move(out), {a}, [pa, idx = std::move(idx)](const Matrix& g) {
    if (pa->grad.size() == 0) pa->grad = Matrix::Zero(pa->value.rows(), pa->value.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) pa->grad.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

Var segment_max(const Var& a, std::span<const int> group, int groups) {
  const auto& v = a.value();
  if (static_cast<Eigen::Index>(group.size()) != v.rows()) throw ConfigError("segment_max: group size mismatch");
  const Eigen::Index cols = v.cols();
  Matrix out(groups, cols);
  std::vector<int> arg(static_cast<std::size_t>(groups) * cols, -1);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const int gi = group[r];
    if (gi < 0 || gi >= groups) throw ConfigError("segment_max: group id out of range");
    for (Eigen::Index c = 0; c < cols; ++c) {
      int& best = arg[static_cast<std::size_t>(gi) * cols + c];
      if (best < 0 || v(r, c) > out(gi, c)) {
        best = static_cast<int>(r);
        out(gi, c) = v(r, c);
      }
    }
  }
  for (int x : arg)
    if (x < 0) throw ConfigError("segment_max: empty group");
  Node* pa = a.node();
  return make(std::move(out), {a}, [pa, arg = std::move(arg), cols](const Matrix& g) {
    if (pa->grad.size() == 0) pa->grad = Matrix::Zero(pa->value.rows(), pa->value.cols());
    for (Eigen::Index gi = 0; gi < g.rows(); ++gi)
      for (Eigen::Index c = 0; c < cols; ++c) pa->grad(arg[gi * cols + c], c) += g(gi, c);
  });
}

Var segment_mean(const Var& a, std::span<const int> group, int groups) {
  const auto& v = a.value();
  if (static_cast<Eigen::Index>(group.size()) != v.rows()) throw ConfigError("segment_mean: group size mismatch");
  Matrix out = Matrix::Zero(groups, v.cols());
  std::vector<double> count(groups, 0.0);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    out.row(group[r]) += v.row(r);
    count[group[r]] += 1.0;
  }
  for (int gi = 0; gi < groups; ++gi) {
    if (count[gi] == 0.0) throw ConfigError("segment_mean: empty group");
    out.row(gi) /= count[gi];
  }
  Node* pa = a.node();
  std::vector<int> grp(group.begin(), group.end());
  return make(std::move(out), {a}, [pa, grp = std::move(grp), count = std::move(count)](const Matrix& g) {
    if (pa->grad.size() == 0) pa->grad = Matrix::Zero(pa->value.rows(), pa->value.cols());
    for (std::size_t r = 0; r < grp.size(); ++r)
      pa->grad.row(static_cast<Eigen::Index>(r)) += g.row(grp[r]) / count[grp[r]];
  });
}

Var column_max(const Var& a) {
  std::vector<int> zeros(static_cast<std::size_t>(a.rows()), 0);
  return segment_max(a, zeros, 1);
}

Var broadcast_rows(const Var& row, Eigen::Index n) {
  if (row.rows() != 1) throw ConfigError("broadcast_rows: input must be a row");
  Matrix out = row.value().replicate(n, 1);
  Node* pa = row.node();
  return make(std::move(out), {row}, [pa](const Matrix& g) { pa->accumulate_expr(g.colwise().sum()); });
}

Var transpose(const Var& a) {
  Node* pa = a.node();
  return make(a.value().transpose(), {a}, [pa](const Matrix& g) { pa->accumulate_expr(g.transpose()); });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r).array() -= out.row(r).maxCoeff();
    out.row(r) = out.row(r).array().exp();
    out.row(r) /= out.row(r).sum();
  }
  Node* pa = a.node();
  auto shared_out = std::make_shared<Matrix>(out);
  return make(std::move(out), {a}, [pa, shared_out](const Matrix& g) {
    const Matrix& p = *shared_out;
    Matrix dx = p.cwiseProduct(g);
    const Eigen::VectorXd dot = dx.rowwise().sum();
    dx -= p.cwiseProduct(dot.replicate(1, p.cols()));
    pa->accumulate(dx);
  });
}

Var log_eps(const Var& a, double eps) {
  Node* pa = a.node();
  Matrix out = (a.value().array() + eps).log().matrix();
  return make(std::move(out), {a}, [pa, eps](const Matrix& g) {
    pa->accumulate_expr((g.array() / (pa->value.array() + eps)).matrix());
  });
}

Var normalize_rows_sum(const Var& a) {
  const Eigen::VectorXd s = a.value().rowwise().sum();
  if ((s.array() == 0.0).any()) throw NumericError("normalize_rows_sum: zero row sum");
  Matrix out = a.value().array().colwise() / s.array();
  Node* pa = a.node();
  auto shared_out = std::make_shared<Matrix>(out);
  return make(std::move(out), {a}, [pa, s, shared_out](const Matrix& g) {
    const Matrix& y = *shared_out;
    // d/dx_j (x_i / S) = (delta_ij - y_i) / S
    const Eigen::VectorXd gy = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = (g.colwise() - gy).array().colwise() / s.array();
    pa->accumulate(dx);
  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  const Eigen::VectorXd n = (a.value().rowwise().squaredNorm().array() + eps).sqrt();
  Matrix out = a.value().array().colwise() / n.array();
  Node* pa = a.node();
  auto shared_out = std::make_shared<Matrix>(out);
  return make(std::move(out), {a}, [pa, n, shared_out](const Matrix& g) {
    const Matrix& y = *shared_out;
    const Eigen::VectorXd gy = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = (g - y.cwiseProduct(gy.replicate(1, y.cols()))).array().colwise() / n.array();
    pa->accumulate(dx);
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  Node* pa = a.node();
  return make(std::move(out), {a}, [pa](const Matrix& g) {
    pa->accumulate_expr(Matrix::Constant(pa->value.rows(), pa->value.cols(), g(0, 0)));
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var cross_entropy(const Var& logits, std::span<const int> labels) {
  const auto& z = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) throw ConfigError("cross_entropy: label count mismatch");
  Matrix p(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || y >= z.cols()) throw LabelError("cross_entropy: label " + std::to_string(y) + " out of range");
    const double m = z.row(r).maxCoeff();
    p.row(r) = (z.row(r).array() - m).exp();
    const double s = p.row(r).sum();
    p.row(r) /= s;
    loss += -(z(r, y) - m - std::log(s));
  }
  const double inv = 1.0 / static_cast<double>(z.rows());
  Matrix out(1, 1);
  out(0, 0) = loss * inv;
  Node* pa = logits.node();
  std::vector<int> y(labels.begin(), labels.end());
  return make(std::move(out), {logits}, [pa, p = std::move(p), y = std::move(y), inv](const Matrix& g) {
    Matrix d = p;
    for (std::size_t r = 0; r < y.size(); ++r) d(static_cast<Eigen::Index>(r), y[r]) -= 1.0;
    pa->accumulate_expr(d * (g(0, 0) * inv));
  });
}

Var bce_with_logits(const Var& logits, std::span<const double> targets) {
  const auto& z = logits.value();
  if (z.cols() != 1 || static_cast<Eigen::Index>(targets.size()) != z.rows())
    throw ConfigError("bce_with_logits: expects n x 1 logits and n targets");
  double loss = 0.0;
  Matrix d(z.rows(), 1);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double x = z(r, 0), t = targets[r];
    loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
    d(r, 0) = 1.0 / (1.0 + std::exp(-x)) - t;
  }
  const double inv = 1.0 / static_cast<double>(z.rows());
  Matrix out(1, 1);
  out(0, 0) = loss * inv;
  Node* pa = logits.node();
  return make(std::move(out), {logits}, [pa, d = std::move(d), inv](const Matrix& g) {
    pa->accumulate_expr(d * (g(0, 0) * inv));
  });
}

Var outer_rows(const Var& f, const Var& g) {
  if (f.rows() != g.rows()) throw ConfigError("outer_rows: row counts differ");
  const Eigen::Index F = f.cols(), C = g.cols();
  Matrix out(f.rows(), F * C);
  for (Eigen::Index r = 0; r < f.rows(); ++r)
    for (Eigen::Index i = 0; i < F; ++i) out.row(r).segment(i * C, C) = f.value()(r, i) * g.value().row(r);
  Node* pf = f.node();
  Node* pg = g.node();
  return make(std::move(out), {f, g}, [pf, pg, F, C](const Matrix& d) {
    if (pf->requires_grad) {
      Matrix df(pf->value.rows(), F);
      for (Eigen::Index r = 0; r < df.rows(); ++r)
        for (Eigen::Index i = 0; i < F; ++i) df(r, i) = d.row(r).segment(i * C, C).dot(pg->value.row(r));
      pf->accumulate(df);
    }
    if (pg->requires_grad) {
      Matrix dg = Matrix::Zero(pg->value.rows(), C);
      for (Eigen::Index r = 0; r < dg.rows(); ++r)
        for (Eigen::Index i = 0; i < F; ++i) dg.row(r) += pf->value(r, i) * d.row(r).segment(i * C, C);
      pg->accumulate(dg);
    }
  });
}

Var grad_reverse(const Var& a, double coeff) {
  Node* pa = a.node();
  return make(a.value(), {a}, [pa, coeff](const Matrix& g) { pa->accumulate_expr(-coeff * g); });
}

Var detach(const Var& a) { return constant(a.value()); }

namespace {

void im2col(const Matrix& x, ImageShape in, int k, int stride, int pad, int ho, int wo, Matrix& cols) {
  cols.setZero(static_cast<Eigen::Index>(in.channels) * k * k, static_cast<Eigen::Index>(ho) * wo);
  for (int c = 0; c < in.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= in.height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= in.width) continue;
            cols(row, oy * wo + ox) = x(c, iy * in.width + ix);
          }
        }
      }
}

void col2im(const Matrix& dcols, ImageShape in, int k, int stride, int pad, int ho, int wo, Matrix& dx) {
  for (int c = 0; c < in.channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * k + ky) * k + kx;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= in.height) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= in.width) continue;
            dx(c, iy * in.width + ix) += dcols(row, oy * wo + ox);
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, ImageShape in, const Var& weight, const Var& bias, int kernel, int stride, int pad,
           ImageShape* out_shape) {
  if (x.rows() != in.channels || x.cols() != static_cast<Eigen::Index>(in.height) * in.width)
    throw ConfigError("conv2d: input does not match its declared shape");
  if (weight.cols() != static_cast<Eigen::Index>(in.channels) * kernel * kernel)
    throw ConfigError("conv2d: weight does not match input channels");
  const int ho = (in.height + 2 * pad - kernel) / stride + 1;
  const int wo = (in.width + 2 * pad - kernel) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ConfigError("conv2d: input smaller than kernel");
  auto cols = std::make_shared<Matrix>();
  im2col(x.value(), in, kernel, stride, pad, ho, wo, *cols);
  Matrix out = weight.value() * (*cols);
  out.colwise() += bias.value().row(0).transpose();
  if (out_shape) *out_shape = {static_cast<int>(weight.rows()), ho, wo};

  Node* px = x.node();
  Node* pw = weight.node();
  Node* pb = bias.node();
  return make(std::move(out), {x, weight, bias}, [=](const Matrix& g) {
    if (pw->requires_grad) pw->accumulate_expr(g * cols->transpose());
    if (pb->requires_grad) pb->accumulate_expr(g.rowwise().sum().transpose());
    if (px->requires_grad) {
      const Matrix dcols = pw->value.transpose() * g;
      if (px->grad.size() == 0) px->grad = Matrix::Zero(px->value.rows(), px->value.cols());
      col2im(dcols, in, kernel, stride, pad, ho, wo, px->grad);
    }
  });
}

Var max_pool2d(const Var& x, ImageShape in, int window, ImageShape* out_shape) {
  const int ho = in.height / window, wo = in.width / window;
  if (ho == 0 || wo == 0) throw ConfigError("max_pool2d: input smaller than window");
  const auto& v = x.value();
  Matrix out(in.channels, static_cast<Eigen::Index>(ho) * wo);
  std::vector<int> arg(static_cast<std::size_t>(in.channels) * ho * wo);
  for (int c = 0; c < in.channels; ++c)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        int best = (oy * window) * in.width + ox * window;
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx) {
            const int idx = (oy * window + dy) * in.width + ox * window + dx;
            if (v(c, idx) > v(c, best)) best = idx;
          }
        out(c, oy * wo + ox) = v(c, best);
        arg[(static_cast<std::size_t>(c) * ho + oy) * wo + ox] = best;
      }
  if (out_shape) *out_shape = {in.channels, ho, wo};
  Node* px = x.node();
  const int cells = ho * wo;
  return make(std::move(out), {x}, [px, arg = std::move(arg), cells](const Matrix& g) {
    if (px->grad.size() == 0) px->grad = Matrix::Zero(px->value.rows(), px->value.cols());
    for (Eigen::Index c = 0; c < g.rows(); ++c)
      for (int j = 0; j < cells; ++j) px->grad(c, arg[c * cells + j]) += g(c, j);
  });
}

Var global_avg_pool(const Var& x) {
  Matrix out = x.value().rowwise().mean().transpose();
  Node* px = x.node();
  return make(std::move(out), {x}, [px](const Matrix& g) {
    const double inv = 1.0 / static_cast<double>(px->value.cols());
    px->accumulate_expr((g.transpose() * inv).replicate(1, px->value.cols()));
  });
}

}  // namespace sketchime::ag
