#pragma once

#include <utility>
#include <vector>

#include "sketchime/matrix.hpp"
#include "sketchime/sketch.hpp"

namespace sketchime {

/// Initial graph over resampled points: temporally adjacent points of the same
/// stroke are connected. Edges are stored once as (i, i+1); `adjacency()`
/// gives the symmetric view.
struct StrokeGraph {
  std::vector<Point> nodes;
  std::vector<std::pair<int, int>> edges;
  std::vector<int> stroke_of_node;

  std::vector<std::vector<int>> adjacency() const;
};

StrokeGraph build_graph(const ResampledSketch& rs);

/// Row i lists the k neighbors of node i.
struct NeighborIndex {
  int k = 0;
  int dilation = 1;
  std::vector<int> neighbors;  // N * k, row-major

  int node_count() const { return k > 0 ? static_cast<int>(neighbors.size()) / k : 0; }
  int at(int node, int slot) const { return neighbors[static_cast<std::size_t>(node) * k + slot]; }
};

/// Sorts the other nodes by Euclidean feature distance (ties: lower index),
/// takes the first k*d and keeps every d-th. With fewer than k*d candidates
/// the list is clamped and padded by repeating its last entry; a single node
/// lists itself.
NeighborIndex dilated_knn(const Matrix& features, int k, int dilation);

}  // namespace sketchime
