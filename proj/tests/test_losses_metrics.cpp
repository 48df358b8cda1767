#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "sketchime/errors.hpp"
#include "sketchime/losses.hpp"
#include "sketchime/metrics.hpp"
#include "oracles.hpp"

using namespace sketchime;
using oracle::kl_oracle;

namespace {

Matrix softmax(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    double m = z.row(i).maxCoeff(), s = 0;
    for (Eigen::Index j = 0; j < z.cols(); ++j) s += p(i, j) = std::exp(z(i, j) - m);
    p.row(i) /= s;
  }
  return p;
}

ForwardGraph graph_from_logits(const Matrix& rec, const Matrix& seg) {
  ForwardGraph g;
  g.rec_logits = ag::parameter(rec);
  g.seg_logits = ag::parameter(seg);
  g.p_r = ag::softmax_rows(g.rec_logits);
  g.p_s = ag::softmax_rows(g.seg_logits);
  return g;
}

Matrix random_logits(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0, 2);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

std::vector<int> random_strokes(std::mt19937_64& rng, int n) {
  const int strokes = 1 + static_cast<int>(rng() % std::min(n, 5));
  std::vector<int> s(n);
  for (int i = 0; i < n; ++i) s[i] = i < strokes ? i : static_cast<int>(rng() % strokes);
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

TEST_CASE("perfect predictions give zero loss") {
  const auto km = testing::tiny_knowledge();
  Matrix rec = Matrix::Constant(1, 3, -1e3), seg = Matrix::Constant(4, 4, -1e3);
  rec(0, 0) = 0;
  const std::vector<int> y{0, 1, 1, 0}, stroke{0, 0, 1, 1};
  for (int i = 0; i < 4; ++i) seg(i, y[i]) = 0;
  const auto t = total_loss(graph_from_logits(rec, seg), 0, y, stroke, km, {150.0, 0});
  CHECK(t.total.scalar() == doctest::Approx(0.0));
  CHECK(t.segmentation == doctest::Approx(0.0));
  CHECK(t.recognition == doctest::Approx(0.0));
}

TEST_CASE("uniform recognition costs ln C_R") {
  const auto km = build_knowledge_matrix({{0, {0}}, {1, {1}}, {2, {0}}, {3, {1}}}, 0.9);
  const std::vector<int> y{0, 1}, stroke{0, 0};
  const auto t = total_loss(graph_from_logits(Matrix::Zero(1, 4), Matrix::Zero(2, 2)), 2, y, stroke, km, {1.0, 0});
  CHECK(t.recognition == doctest::Approx(std::log(4.0)));
}

TEST_CASE("total loss on a hand-sized instance") {
  // N=4, C_R=2, C_S=3.
  const auto km = build_knowledge_matrix({{0, {0, 1}}, {1, {2}}}, 0.9);
  Matrix rec(1, 2), seg(4, 3);
  rec << 0.3, -0.2;
  seg << 1.0, 0.0, -1.0, 0.5, 0.5, 0.0, -0.3, 0.2, 0.9, 0.0, 0.0, 0.0;
  const std::vector<int> y{0, 1, 2, 1}, stroke{0, 0, 1, 1};
  const Matrix pr = softmax(rec), ps = softmax(seg);
  double ls = 0;
  for (int i = 0; i < 4; ++i) ls -= std::log(ps(i, y[i])) / 4.0;
  const double lr = -std::log(pr(0, 1));
  const double kl = kl_oracle(pr, ps, stroke, km);
  for (int lambda2 : {0, 1}) {
    const auto t = total_loss(graph_from_logits(rec, seg), 1, y, stroke, km, {150.0, lambda2});
    CHECK(t.total.scalar() == doctest::Approx(ls + 150.0 * lr + lambda2 * kl).epsilon(1e-12));
    CHECK(t.kl == doctest::Approx(kl).epsilon(1e-12));
  }
}

TEST_CASE("loss validation") {
  const auto km = testing::tiny_knowledge();
  const std::vector<int> stroke{0, 0};
  const auto g = graph_from_logits(Matrix::Zero(1, 3), Matrix::Zero(2, 4));
  const std::vector<int> bad{0, 7}, good{0, 1}, short_labels{0};
  CHECK_THROWS_AS(total_loss(g, 0, bad, stroke, km, {}), LabelError);
  CHECK_THROWS_AS(total_loss(g, 3, good, stroke, km, {}), LabelError);
  CHECK_THROWS_AS(total_loss(g, 0, short_labels, stroke, km, {}), LabelError);
  CHECK_THROWS_AS(total_loss(g, 0, good, stroke, km, {0.0, 0}), ConfigError);
  CHECK_THROWS_AS(total_loss(g, 0, good, stroke, km, {1.0, 2}), ConfigError);
}

TEST_CASE("KL hand cases") {
  const auto km = build_knowledge_matrix({{0, {0, 1}}, {1, {2}}}, 0.9);
  Matrix pr(1, 2);
  pr << 1.0, 0.0;
  Matrix ps(3, 3);
  const Eigen::RowVectorXd row = km.c_r2s.row(0) / km.c_r2s.row(0).sum();
  for (int i = 0; i < 3; ++i) ps.row(i) = row;
  const std::vector<int> one{0, 0, 0};
  CHECK(kld_value(pr, ps, one, km) == doctest::Approx(0.0).epsilon(1e-15));

  // Uniform on both sides: categories cover components symmetrically.
  const auto sym = build_knowledge_matrix({{0, {0}}, {1, {1}}}, 0.9);
  const Matrix ur = Matrix::Constant(1, 2, 0.5), us = Matrix::Constant(2, 2, 0.5);
  const std::vector<int> two{0, 1};
  CHECK(kld_value(ur, us, two, sym) == doctest::Approx(0.0).epsilon(1e-15));

  // One-hot recognition of category 1, point mass on component 0 everywhere.
  Matrix pr1(1, 2);
  pr1 << 0.0, 1.0;
  Matrix ps0 = Matrix::Zero(3, 3);
  ps0.col(0).setOnes();
  const double p[3] = {0.1 / 1.1, 0.1 / 1.1, 0.9 / 1.1};
  const double t = 1.0 + 3e-8;
  const double q[3] = {(1.0 + 1e-8) / t, 1e-8 / t, 1e-8 / t};
  double want = 0;
  for (int j = 0; j < 3; ++j) {
    const double pj = (p[j] + 1e-8) / t;
    want += pj * std::log(pj / q[j]);
  }
  CHECK(kld_value(pr1, ps0, one, km) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("KL matches the loop oracle, is non-negative and differentiable") {
  std::mt19937_64 rng(83);
  for (int t = 0; t < 100; ++t) {
    const int cr = 1 + static_cast<int>(rng() % 5), cs = 1 + static_cast<int>(rng() % 5);
    std::map<int, std::vector<int>> m;
    for (int c = 0; c < cr; ++c) m[c] = {static_cast<int>(rng() % cs)};
    const auto km = build_knowledge_matrix(m, 0.9, cs);
    const int n = 1 + static_cast<int>(rng() % 12);
    const auto stroke = random_strokes(rng, n);
    const Matrix pr = softmax(random_logits(rng, 1, cr)), ps = softmax(random_logits(rng, n, cs));
    const double got = kld_value(pr, ps, stroke, km);
    CHECK(std::abs(got - kl_oracle(pr, ps, stroke, km)) <= 1e-9);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("c_metric counting") {
  const std::vector<int> truth{1, 1, 1, 1}, pred{1, 1, 1, 0}, one{0, 0, 0, 0};
  CHECK(c_metric(pred, truth, one) == 0.0);
  CHECK(c_metric(pred, truth, one, 0.75, true) == 1.0);
  CHECK(c_metric(truth, truth, one) == 1.0);

  std::vector<int> t10, p10, s10;
  for (int s = 0; s < 10; ++s)
    for (int i = 0; i < 3; ++i) {
      s10.push_back(s);
      t10.push_back(s % 4);
      p10.push_back(s < 7 ? s % 4 : (s % 4) + 1);
    }
  CHECK(c_metric(p10, t10, s10) == doctest::Approx(0.7));
  CHECK(p_metric(p10, t10) == doctest::Approx(0.7));
}

TEST_CASE("p_metric and acc_at_1 counting") {
  const std::vector<int> truth{0, 1, 2, 3, 4, 5};
  CHECK(p_metric(truth, truth) == 1.0);
  CHECK(p_metric(std::vector<int>{1, 2, 3, 4, 5, 0}, truth) == 0.0);
  CHECK(p_metric(std::vector<int>{0, 1, 0, 3, 0, 0}, truth) == doctest::Approx(3.0 / 6.0));
  CHECK(acc_at_1(std::vector<int>{2, 2}, std::vector<int>{2, 1}) == 0.5);
  CHECK_THROWS_AS(p_metric(std::vector<int>{1}, truth), ConfigError);
}

TEST_CASE("c_metric matches a brute-force count") {
  std::mt19937_64 rng(89);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + static_cast<int>(rng() % 40);
    const auto stroke = random_strokes(rng, n);
    std::vector<int> truth(n), pred(n);
    for (int i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % 3);
      pred[i] = rng() % 4 == 0 ? static_cast<int>(rng() % 3) : truth[i];
    }
    int good = 0, strokes = 0;
    for (int s = 0; s <= stroke.back(); ++s) {
      int ok = 0, all = 0;
      for (int i = 0; i < n; ++i)
        if (stroke[i] == s) {
          ++all;
          ok += pred[i] == truth[i];
        }
      if (all == 0) continue;
      ++strokes;
      good += 4 * ok > 3 * all;
    }
    CHECK(c_metric(pred, truth, stroke) == doctest::Approx(static_cast<double>(good) / strokes).epsilon(1e-15));
  }
}

TEST_CASE("stroke-constant predictions on equal strokes give P = C") {
  std::mt19937_64 rng(97);
  for (int t = 0; t < 50; ++t) {
    const int strokes = 1 + static_cast<int>(rng() % 8), per = 1 + static_cast<int>(rng() % 5);
    std::vector<int> stroke, truth, pred;
    for (int s = 0; s < strokes; ++s) {
      const bool right = rng() % 2;
      const int label = static_cast<int>(rng() % 3);
      for (int i = 0; i < per; ++i) {
        stroke.push_back(s);
        truth.push_back(label);
        pred.push_back(right ? label : label + 1);
      }
    }
    CHECK(p_metric(pred, truth) == doctest::Approx(c_metric(pred, truth, stroke)));
  }
}

TEST_CASE("metric accumulators merge associatively") {
  std::mt19937_64 rng(101);
  std::vector<MetricAccumulator> parts(3);
  MetricAccumulator whole;
  for (int t = 0; t < 30; ++t) {
    const int n = 2 + static_cast<int>(rng() % 10);
    const auto stroke = random_strokes(rng, n);
    std::vector<int> truth(n), pred(n);
    for (int i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % 4);
      pred[i] = rng() % 3 ? truth[i] : static_cast<int>(rng() % 4);
    }
    const int cat = static_cast<int>(rng() % 3), guess = rng() % 2 ? cat : static_cast<int>(rng() % 3);
    parts[t % 3].add_sketch(guess, cat, pred, truth, stroke);
    whole.add_sketch(guess, cat, pred, truth, stroke);
  }
  MetricAccumulator left = parts[0], right = parts[1];
  left.merge(parts[1]);
  left.merge(parts[2]);
  right.merge(parts[2]);
  MetricAccumulator other = parts[0];
  other.merge(right);
  const nlohmann::json a = MetricReport::from(left), b = MetricReport::from(other), c = MetricReport::from(whole);
  CHECK(a == b);
  CHECK(a == c);
  const auto back = c.get<MetricReport>();
  CHECK(nlohmann::json(back) == c);
  const auto r = MetricReport::from(whole);
  for (double v : {r.acc_at_1, r.p_metric, r.c_metric}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}
