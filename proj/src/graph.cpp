#include "sketchime/graph.hpp"

#include <algorithm>
#include <numeric>

#include "sketchime/errors.hpp"

namespace sketchime {

std::vector<std::vector<int>> StrokeGraph::adjacency() const {
  std::vector<std::vector<int>> adj(nodes.size());
  for (auto [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  return adj;
}

StrokeGraph build_graph(const ResampledSketch& rs) {
  StrokeGraph g;
  g.nodes = rs.points;
  g.stroke_of_node = rs.stroke_of_point;
  for (std::size_t i = 1; i < rs.points.size(); ++i)
    if (rs.stroke_of_point[i] == rs.stroke_of_point[i - 1])
      g.edges.emplace_back(static_cast<int>(i - 1), static_cast<int>(i));
  return g;
}

NeighborIndex dilated_knn(const Matrix& features, int k, int dilation) {
  const int n = static_cast<int>(features.rows());
  if (n < 1 || k < 1 || dilation < 1) throw ConfigError("dilated_knn needs N >= 1, k >= 1, d >= 1");
  if (!features.allFinite()) throw NumericError("non-finite feature values in neighbor search");

  NeighborIndex idx;
  idx.k = k;
  idx.dilation = dilation;
  idx.neighbors.resize(static_cast<std::size_t>(n) * k);
  if (n == 1) {
    std::fill(idx.neighbors.begin(), idx.neighbors.end(), 0);
    return idx;
  }

  // Explicit differences keep d(i,j) == d(j,i) bit-for-bit, independent of node order.
  Matrix dist(n, n);
  for (int i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) dist(i, j) = dist(j, i) = (features.row(i) - features.row(j)).squaredNorm();
  }

  const int candidates = std::min(k * dilation, n - 1);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::swap(order[i], order[n - 1]);  // exclude self
    const auto less = [&](int a, int b) {
      const double da = dist(i, a), db = dist(i, b);
      return da < db || (da == db && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + candidates, order.begin() + (n - 1), less);
    int filled = 0;
    for (int c = 0; c < candidates && filled < k; c += dilation) idx.neighbors[static_cast<std::size_t>(i) * k + filled++] = order[c];
    for (; filled < k; ++filled)
      idx.neighbors[static_cast<std::size_t>(i) * k + filled] = idx.neighbors[static_cast<std::size_t>(i) * k + filled - 1];
  }
  return idx;
}

}  // namespace sketchime
