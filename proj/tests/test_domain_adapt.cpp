#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "helpers.hpp"
#include "sketchime/domain_adapt.hpp"
#include "sketchime/errors.hpp"

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

bool same_params(const ModelState& a, const ModelState& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].first != b.params[i].first || a.params[i].second.value() != b.params[i].second.value())
      return false;
  return true;
}

DAConfig quick() {
  DAConfig d;
  d.steps = 3;
  d.batch = 3;
  d.seg_points = 5;
  d.disc_hidden = 6;
  d.shots_source = 0;
  d.shots_target = 0;
  return d;
}

}  // namespace

TEST_CASE("multilinear map examples") {
  Matrix f(1, 2), g(1, 3);
  f << 1, 2;
  g << 3, 4, 5;
  Matrix want(1, 6);
  want << 3, 4, 5, 6, 8, 10;
  CHECK(multilinear_map(f, g) == want);

  Matrix onehot = Matrix::Zero(1, 3);
  onehot(0, 1) = 1;
  const Matrix m = multilinear_map(f, onehot);
  Matrix block(1, 6);
  block << 0, 1, 0, 0, 2, 0;
  CHECK(m == block);
  CHECK_THROWS_AS(multilinear_map(f, Matrix::Zero(2, 3)), ConfigError);
}

TEST_CASE("multilinear map matches an index oracle and the sum identity") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 150; ++trial) {
    const int rows = 1 + static_cast<int>(rng() % 4), F = 1 + static_cast<int>(rng() % 7),
              C = 1 + static_cast<int>(rng() % 5);
    Matrix f(rows, F), g(rows, C);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = u(rng);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = u(rng);
    const Matrix m = multilinear_map(f, g);
    REQUIRE(m.cols() == F * C);
    for (int r = 0; r < rows; ++r) {
      for (int a = 0; a < F; ++a)
        for (int b = 0; b < C; ++b) CHECK(m(r, a * C + b) == f(r, a) * g(r, b));
      CHECK(m.row(r).sum() == doctest::Approx(f.row(r).sum() * g.row(r).sum()).epsilon(1e-9));
    }
  }
}

TEST_CASE("warm-up ramps lambda linearly") {
  DAConfig d;
  d.steps = 100;
  d.lambda_adv = 2.0;
  CHECK(d.lambda_at(0) == 0.0);
  CHECK(d.lambda_at(5) == doctest::Approx(1.0));
  CHECK(d.lambda_at(10) == 2.0);
  CHECK(d.lambda_at(60) == 2.0);
  d.warmup = 0;
  CHECK(d.lambda_at(0) == 2.0);
  d.steps = 0;
  CHECK_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("select_shots keeps per-class counts and partitions the data") {
  std::mt19937_64 rng(3);
  const ModelConfig c = tiny_config();
  const auto data = tiny_set(rng, c, 30);
  std::vector<Sample> rest;
  const auto shots = select_shots(data, 2, 9, &rest);
  std::map<int, int> count;
  for (const auto& s : shots) count[s.category]++;
  for (auto [cat, n] : count) CHECK(n == 2);
  CHECK(shots.size() + rest.size() == data.size());
  CHECK(select_shots(data, 0, 9).size() == data.size());
  CHECK(select_shots(data, 2, 9).size() == shots.size());
}

TEST_CASE("adapt is pure, validates inputs and runs on category-only targets") {
  std::mt19937_64 rng(5);
  const ModelConfig c = tiny_config();
  const KnowledgeMatrix km = tiny_knowledge();
  const ModelState base = init_model(c, 1);
  const ModelState snapshot = base.clone();
  const auto source = tiny_set(rng, c, 6);
  auto target = tiny_set(rng, c, 4);
  for (auto& s : target) s.semantic.clear();

  const DAResult r = adapt(base, source, target, km, quick());
  CHECK(same_params(base, snapshot));
  CHECK_FALSE(same_params(base, r.state));
  CHECK(r.log.size() == 3);
  CHECK(r.state.all_finite());
  CHECK(r.log[0].lambda == 0.0);

  CHECK_THROWS_AS(adapt(base, source, {}, km, quick()), ConfigError);
  auto bad = target;
  bad[0].category = 7;
  CHECK_THROWS_AS(adapt(base, source, bad, km, quick()), LabelError);
}

TEST_CASE("zero adversarial weight leaves the generator independent of the discriminator") {
  std::mt19937_64 rng(6);
  const ModelConfig c = tiny_config();
  const KnowledgeMatrix km = tiny_knowledge();
  const ModelState base = init_model(c, 2);
  const auto source = tiny_set(rng, c, 6), target = tiny_set(rng, c, 6);
  DAConfig a = quick();
  a.lambda_adv = 0.0;
  DAConfig b = a;
  b.disc_hidden = 17;
  b.disc_lr = 0.1;
  CHECK(same_params(adapt(base, source, target, km, a).state, adapt(base, source, target, km, b).state));
  a.lambda_adv = 1.0;
  b.lambda_adv = 1.0;
  CHECK_FALSE(same_params(adapt(base, source, target, km, a).state, adapt(base, source, target, km, b).state));
}

TEST_CASE("adapt aborts on non-finite values") {
  std::mt19937_64 rng(7);
  const ModelConfig c = tiny_config();
  ModelState base = init_model(c, 3);
  Matrix w = base.param("cnn.fc.w").value();
  w(0, 0) = std::nan("");
  base.set_param("cnn.fc.w", w);
  const auto source = tiny_set(rng, c, 3), target = tiny_set(rng, c, 3);
  CHECK_THROWS_AS(adapt(base, source, target, tiny_knowledge(), quick()), NumericError);
}

TEST_CASE("discriminator accuracy is a fraction over both domains") {
  std::mt19937_64 rng(8);
  const ModelConfig c = tiny_config();
  const ModelState s = init_model(c, 4);
  Discriminator d = Discriminator::init(c.sketch_feature_dim * c.num_categories, 4, rng);
  CHECK(d.input_dim() == 24);
  const auto a = tiny_set(rng, c, 5), b = tiny_set(rng, c, 3);
  // A constant positive logit calls everything "source".
  d.w2.mutable_value().setZero();
  d.b2.mutable_value()(0, 0) = 1.0;
  CHECK(discriminator_accuracy(s, d, a, b) == doctest::Approx(5.0 / 8.0));
}

TEST_CASE("DA config json round trip") {
  DAConfig d;
  d.lambda_adv = 0.5;
  d.shots_target = 2;
  d.seed = 77;
  nlohmann::json j = d;
  DAConfig e = j.get<DAConfig>();
  CHECK(nlohmann::json(e) == j);
}
