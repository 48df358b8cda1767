#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "helpers.hpp"
#include "sketchime/errors.hpp"
#include "sketchime/fscil.hpp"

using namespace sketchime;
using testing::tiny_config;
using testing::tiny_knowledge;
using testing::tiny_sample;

namespace {

std::vector<Sample> tiny_set(std::mt19937_64& rng, const ModelConfig& c, int n) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(tiny_sample(rng, c));
  return out;
}

double ce(const std::vector<double>& l, int y) {
  double z = 0;
  for (double v : l) z += std::exp(v);
  return std::log(z) - l[static_cast<std::size_t>(y)];
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

TrainConfig tiny_train(int categories, int components) {
  TrainConfig tc;
  tc.model = tiny_config(categories, components);
  tc.model.head = HeadKind::Cosine;
  tc.epochs = 2;
  tc.batch = 4;
  tc.seed = 5;
  return tc;
}

// Plan over tiny_knowledge: categories 0,1 with components 0,1,2 first, then
// category 2 bringing component 3.
SessionPlan tiny_plan() {
  SessionPlan p;
  p.base_categories = {0, 1};
  p.base_components = {0, 1, 2};
  p.sessions.push_back({{2}, {3}, 2});
  return p;
}

}  // namespace

TEST_CASE("mask zeroes exactly the labelled logit") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix l(3, 5);
    for (Eigen::Index i = 0; i < l.size(); ++i) l.data()[i] = u(rng);
    const std::vector<int> y{static_cast<int>(rng() % 5), static_cast<int>(rng() % 5), static_cast<int>(rng() % 5)};
    const Matrix m = mask_logits(ag::constant(l), y).value();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 5; ++c) {
        if (c == y[static_cast<std::size_t>(r)]) {
          CHECK(m(r, c) == 0.0);
        } else {
          CHECK(m(r, c) == l(r, c));
        }
      }
  }
  const int bad[] = {5};
  CHECK_THROWS_AS(mask_logits(ag::constant(Matrix::Zero(1, 5)), bad), LabelError);
}

TEST_CASE("instance loss with hand-set prototypes") {
  // Embedding [1,0]; known prototypes [1,0],[0,1]; virtual [1,1],[-1,0]; scale 16.
  const double s = 16, h = std::sqrt(0.5);
  const std::vector<double> l{s, 0, s * h, -s};
  const Matrix logits = row({l[0], l[1], l[2], l[3]});
  const int y[] = {0};
  const double gamma = 0.25;
  const double want = ce(l, 0) + gamma * ce({0, 0, s * h, -s}, 2);
  CHECK(fact_instance_loss(ag::constant(logits), y, 2, gamma).scalar() == doctest::Approx(want).epsilon(1e-12));
  CHECK(fact_instance_loss(ag::constant(logits), y, 2, 0.0).scalar() == doctest::Approx(ce(l, 0)).epsilon(1e-12));

  const int y1[] = {1};
  CHECK(fact_instance_loss(ag::constant(logits), y1, 2, gamma).scalar() ==
        doctest::Approx(ce(l, 1) + gamma * ce({s, 0, s * h, -s}, 2)).epsilon(1e-12));
}

TEST_CASE("virtual loss uses the strongest virtual and known classes") {
  const std::vector<double> l{3, 5, 1, 4};
  const Matrix logits = row({3, 5, 1, 4});
  // y_hat = 3 (virtual), y_hat_hat = 1 (known).
  const double want = ce(l, 3) + 0.5 * ce({3, 5, 1, 0}, 1);
  CHECK(fact_virtual_loss(ag::constant(logits), 2, 0.5).scalar() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("single virtual slot is always the pseudo label") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-5, 5);
  Matrix l(20, 4);
  for (Eigen::Index i = 0; i < l.size(); ++i) l.data()[i] = u(rng);
  for (int v : virtual_pseudo_labels(l, 3)) CHECK(v == 3);
}

TEST_CASE("fact loss errors") {
  const int y[] = {0};
  CHECK_THROWS_AS(fact_instance_loss(ag::constant(Matrix::Zero(1, 3)), y, 3, 0.1), ConfigError);
  CHECK_THROWS_AS(fact_virtual_loss(ag::constant(Matrix::Zero(1, 3)), 3, 0.1), ConfigError);
  const int unknown[] = {3};
  CHECK_THROWS_AS(fact_instance_loss(ag::constant(Matrix::Zero(1, 5)), unknown, 3, 0.1), LabelError);
}

TEST_CASE("fact losses have correct gradients") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  Matrix l(4, 6);
  for (Eigen::Index i = 0; i < l.size(); ++i) l.data()[i] = u(rng);
  const std::vector<int> y{0, 2, 1, 3};
  auto f = [&](const ag::Var& v) {
    return ag::add(fact_instance_loss(v, y, 4, 0.3), fact_virtual_loss(v, 4, 0.3));
  };
  ag::Var p = ag::parameter(l);
  ag::backward(f(p));
  const double eps = 1e-6;
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    Matrix a = l, b = l;
    a.data()[i] += eps;
    b.data()[i] -= eps;
    const double num = (f(ag::constant(a)).scalar() - f(ag::constant(b)).scalar()) / (2 * eps);
    CHECK(p.grad().data()[i] == doctest::Approx(num).epsilon(1e-6));
  }
}

TEST_CASE("mixup examples and convexity") {
  const Matrix h1 = row({2, 0}), h2 = row({0, 2});
  CHECK(mixup_virtual(h1, h2, 1.0) == h1);
  CHECK(mixup_virtual(h1, h2, 0.5) == row({1, 1}));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3), lam(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix a(1, 7), b(1, 7);
    for (int i = 0; i < 7; ++i) {
      a(0, i) = u(rng);
      b(0, i) = u(rng);
    }
    CHECK(mixup_virtual(a, b, lam(rng)).norm() <= std::max(a.norm(), b.norm()) + 1e-12);
  }
  CHECK_THROWS_AS(mixup_virtual(h1, h2, 1.5), ConfigError);
}

TEST_CASE("session plan validation and json round trip") {
  SessionPlan p = tiny_plan();
  CHECK_NOTHROW(p.validate());
  CHECK(p.new_categories() == 1);
  CHECK(p.new_components() == 1);
  CHECK(p.category_order(1) == std::vector<int>{0, 1, 2});
  nlohmann::json j = p;
  CHECK(nlohmann::json(j.get<SessionPlan>()) == j);
  p.sessions.push_back({{1}, {}, 5});
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("extend_session appends class means and keeps old prototypes") {
  std::mt19937_64 rng(6);
  ModelConfig c = tiny_config(2, 3);
  c.head = HeadKind::Cosine;
  c.virtual_categories = 2;
  c.virtual_components = 1;
  const ModelState s = init_model(c, 9);

  const ModelState same = extend_session(s, {}, 0, 0);
  CHECK(same.param("rec_proto").value() == s.param("rec_proto").value());
  CHECK(same.param("rec_virtual").value() == s.param("rec_virtual").value());

  // Five identical shots of a new category (index 2) with a new component (index 3).
  Sample shot = tiny_sample(rng, tiny_config());
  while (shot.category != 2) shot = tiny_sample(rng, tiny_config());
  std::vector<Sample> shots(5, shot);
  const ModelState t = extend_session(s, shots, 1, 1);
  CHECK(t.config.num_categories == 3);
  CHECK(t.config.num_components == 4);
  CHECK(t.config.virtual_categories == 1);
  CHECK(t.config.virtual_components == 0);
  CHECK_FALSE(t.has_param("seg_virtual"));
  const Matrix& rp = t.param("rec_proto").value();
  CHECK(rp.topRows(2) == s.param("rec_proto").value());
  CHECK(t.param("seg_proto").value().topRows(3) == s.param("seg_proto").value());

  const ForwardGraph g = forward_graph(s, shot.rs, shot.img);
  const Matrix e = g.f_c.value();
  CHECK((rp.row(2) - e.row(0) / e.norm()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(rp.row(2).norm() == doctest::Approx(1.0));

  const PrototypeBank bank = category_bank(t);
  CHECK(bank.known.rows() == 3);
  CHECK(bank.virtual_slots.rows() == 1);

  // Category-only step leaves the component bank alone.
  Sample cat_only = shot;
  for (int& v : cat_only.semantic) v = std::min(v, 1);
  const ModelState u = extend_session(s, {cat_only}, 1, 0);
  CHECK(u.param("seg_proto").value() == s.param("seg_proto").value());
  CHECK(u.param("seg_virtual").value() == s.param("seg_virtual").value());

  Sample clash = shot;
  clash.category = 1;
  CHECK_THROWS_AS(extend_session(s, {clash}, 1, 0), LabelError);
  CHECK_THROWS_AS(extend_session(s, {cat_only}, 2, 0), LabelError);
}

TEST_CASE("base prototypes become class means of the training embeddings") {
  std::mt19937_64 rng(8);
  ModelConfig c = tiny_config();
  c.head = HeadKind::Cosine;
  c.virtual_categories = 2;
  const ModelState s = init_model(c, 4);
  std::vector<Sample> train;
  while (train.size() < 4) {
    Sample x = tiny_sample(rng, tiny_config());
    if (x.category == 0) train.push_back(x);
  }
  const ModelState t = replace_base_prototypes(s, train);

  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(s.param("rec_proto").value().cols());
  for (const auto& x : train) sum += forward_graph(s, x.rs, x.img).f_c.value().row(0);
  const Matrix& rp = t.param("rec_proto").value();
  CHECK((rp.row(0) - sum / sum.norm()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(rp.bottomRows(rp.rows() - 1) == s.param("rec_proto").value().bottomRows(rp.rows() - 1));
  CHECK(t.param("rec_virtual").value() == s.param("rec_virtual").value());
  CHECK(t.param("seg_proto").value().row(train[0].semantic[0]).norm() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("without virtual prototypes the base trainer is the plain trainer") {
  std::mt19937_64 rng(7);
  const KnowledgeMatrix km = tiny_knowledge();
  const TrainConfig tc = tiny_train(3, 4);
  const auto train_set = tiny_set(rng, tc.model, 10), test_set = tiny_set(rng, tc.model, 5);
  const TrainResult plain = train(tc, train_set, test_set, km);

  SessionPlan plan;
  plan.base_categories = {0, 1, 2};
  plan.base_components = {0, 1, 2, 3};
  FSCILConfig fc;
  fc.base = tc;
  fc.gamma = 0.0;
  fc.mean_base_prototypes = false;
  const SessionsResult r = run_sessions(plan, fc, train_set, test_set, km);
  REQUIRE(r.sessions.size() == 1);
  REQUIRE(r.state.params.size() == plain.state.params.size());
  for (std::size_t i = 0; i < r.state.params.size(); ++i)
    CHECK(r.state.params[i].second.value() == plain.state.params[i].second.value());
  CHECK(nlohmann::json(r.sessions[0].report) == nlohmann::json(plain.report));
}

TEST_CASE("sessions grow both banks and only score seen classes") {
  std::mt19937_64 rng(8);
  const KnowledgeMatrix km = tiny_knowledge();
  const SessionPlan plan = tiny_plan();
  FSCILConfig fc;
  fc.base = tiny_train(2, 3);
  fc.base.epochs = 1;
  const auto train_set = tiny_set(rng, fc.base.model, 24), test_set = tiny_set(rng, fc.base.model, 12);
  const SessionsResult r = run_sessions(plan, fc, train_set, test_set, km);
  REQUIRE(r.sessions.size() == 2);
  CHECK(r.sessions[0].known_categories == 2);
  CHECK(r.sessions[0].virtual_categories == 1);
  CHECK(r.sessions[0].virtual_components == 1);
  CHECK(r.sessions[1].known_categories == 3);
  CHECK(r.sessions[1].known_components == 4);
  CHECK(r.sessions[1].virtual_categories == 0);
  std::size_t base_test = 0;
  for (const auto& s : test_set) base_test += s.category < 2;
  CHECK(r.sessions[0].report.sketches == base_test);
  CHECK(r.sessions[1].report.sketches == test_set.size());
  CHECK(r.sessions[0].report.per_class_acc.size() <= 2);
  for (const auto& s : r.sessions) {
    CHECK(std::isfinite(s.report.acc_at_1));
    CHECK(std::isfinite(s.report.p_metric));
    CHECK(std::isfinite(s.base_acc));
  }

  SessionPlan early = plan;
  early.base_components = {0, 1};
  early.sessions[0].components = {2, 3};
  CHECK_THROWS_AS(run_sessions(early, fc, train_set, test_set, km), ConfigError);
}

TEST_CASE("a base-only plan reports a standard evaluation of the given model") {
  std::mt19937_64 rng(9);
  const KnowledgeMatrix km = tiny_knowledge();
  ModelConfig c = tiny_config();
  c.head = HeadKind::Cosine;
  const ModelState s = init_model(c, 3);
  const auto data = tiny_set(rng, c, 8);
  SessionPlan plan;
  plan.base_categories = {0, 1, 2};
  plan.base_components = {0, 1, 2, 3};
  FSCILConfig fc;
  fc.base = tiny_train(3, 4);
  const SessionsResult r = run_sessions(plan, fc, {}, data, km, s);
  REQUIRE(r.sessions.size() == 1);
  CHECK(nlohmann::json(r.sessions[0].report) == nlohmann::json(evaluate(s, data, km, false)));
}
