#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "sketchime/errors.hpp"
#include "sketchime/graph.hpp"
#include "oracles.hpp"

using namespace sketchime;
using oracle::knn_oracle;

namespace {

ResampledSketch chain_sketch(const std::vector<int>& counts) {
  ResampledSketch rs;
  for (std::size_t j = 0; j < counts.size(); ++j)
    for (int i = 0; i < counts[j]; ++i) {
      rs.points.push_back({0.1 * i, 0.1 * static_cast<double>(j)});
      rs.stroke_of_point.push_back(static_cast<int>(j));
    }
  return rs;
}

Matrix random_features(std::mt19937_64& rng, int n, int f, bool grid) {
  Matrix m(n, f);
  std::uniform_real_distribution<double> u(-1, 1);
  std::uniform_int_distribution<int> g(0, 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = grid ? g(rng) : u(rng);
  return m;
}

}  // namespace

TEST_CASE("build_graph edge counts") {
  CHECK(build_graph(chain_sketch({3, 2})).edges.size() == 3);
  CHECK(build_graph(chain_sketch({300})).edges.size() == 299);
  CHECK(build_graph(chain_sketch({1, 1, 1})).edges.empty());
}

TEST_CASE("build_graph connects only neighbours within a stroke") {
  const auto g = build_graph(chain_sketch({4, 1, 5, 2}));
  for (const auto& [a, b] : g.edges) {
    CHECK(g.stroke_of_node[a] == g.stroke_of_node[b]);
    CHECK(b == a + 1);
  }
  const auto adj = g.adjacency();
  for (std::size_t i = 0; i < adj.size(); ++i)
    for (int j : adj[i]) {
      CHECK(j != static_cast<int>(i));
      CHECK(std::count(adj[j].begin(), adj[j].end(), static_cast<int>(i)) == 1);
    }
}

TEST_CASE("dilated_knn on a line") {
  Matrix f(5, 1);
  f << 0, 1, 2, 3, 4;
  const auto a = dilated_knn(f, 2, 1);
  CHECK(std::set<int>{a.at(0, 0), a.at(0, 1)} == std::set<int>{1, 2});
  const auto b = dilated_knn(f, 2, 2);
  CHECK(std::set<int>{b.at(0, 0), b.at(0, 1)} == std::set<int>{1, 3});

  Matrix one(1, 3);
  one.setZero();
  const auto s = dilated_knn(one, 4, 2);
  for (int i = 0; i < 4; ++i) CHECK(s.at(0, i) == 0);
}

TEST_CASE("dilated_knn argument checks") {
  Matrix f = Matrix::Zero(3, 2);
  CHECK_THROWS_AS(dilated_knn(f, 0, 1), ConfigError);
  CHECK_THROWS_AS(dilated_knn(f, 1, 0), ConfigError);
  f(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(dilated_knn(f, 1, 1), NumericError);
}

TEST_CASE("dilated_knn matches the brute-force oracle") {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + static_cast<int>(rng() % 64);
    const int k = 1 + static_cast<int>(rng() % 10);
    const int d = 1 + static_cast<int>(rng() % 3);
    const Matrix f = random_features(rng, n, 1 + static_cast<int>(rng() % 4), t % 3 == 0);
    const auto idx = dilated_knn(f, k, d);
    REQUIRE(idx.node_count() == n);
    for (int i = 0; i < n; ++i) {
      const auto want = knn_oracle(f, i, k, d);
      for (int s = 0; s < k; ++s) CHECK(idx.at(i, s) == want[s]);
      if (n - 1 >= k * d)
        for (int s = 0; s < k; ++s) CHECK(idx.at(i, s) != i);
    }
  }
}

TEST_CASE("dilated_knn is permutation equivariant") {
  std::mt19937_64 rng(23);
  for (int t = 0; t < 50; ++t) {
    const int n = 2 + static_cast<int>(rng() % 40);
    const Matrix f = random_features(rng, n, 3, false);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix g(n, 3);
    for (int i = 0; i < n; ++i) g.row(i) = f.row(perm[i]);
    const auto a = dilated_knn(f, 4, 2), b = dilated_knn(g, 4, 2);
    for (int i = 0; i < n; ++i) {
      std::multiset<int> sa, sb;
      for (int s = 0; s < 4; ++s) {
        sa.insert(a.at(perm[i], s));
        sb.insert(perm[b.at(i, s)]);
      }
      CHECK(sa == sb);
    }
  }
}
