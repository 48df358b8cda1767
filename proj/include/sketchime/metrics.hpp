#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace sketchime {

/// Fraction of points whose predicted component matches.
double p_metric(std::span<const int> pred, std::span<const int> truth);

/// Fraction of strokes with more than `threshold` of their points correct
/// (strictly more unless `inclusive`).
double c_metric(std::span<const int> pred, std::span<const int> truth, std::span<const int> stroke_of_node,
                double threshold = 0.75, bool inclusive = false);

double acc_at_1(std::span<const int> pred, std::span<const int> truth);

/// Running counts; `merge` is associative so partial reports can be reduced
/// in any grouping.
struct MetricAccumulator {
  std::size_t sketches = 0, sketches_correct = 0;
  std::size_t points = 0, points_correct = 0;
  std::size_t strokes = 0, strokes_correct = 0;
  std::vector<std::size_t> class_total, class_correct;
  std::vector<std::size_t> component_total, component_correct;

  void add_sketch(int pred_category, int true_category, std::span<const int> pred_points,
                  std::span<const int> true_points, std::span<const int> stroke_of_node, bool inclusive = false);
  void merge(const MetricAccumulator& other);
};

struct MetricReport {
  double acc_at_1 = 0.0;
  double p_metric = 0.0;
  double c_metric = 0.0;
  std::size_t sketches = 0;
  std::vector<double> per_class_acc;        // -1 for classes absent from the data
  std::vector<double> per_component_recall; // -1 for components absent from the data

  static MetricReport from(const MetricAccumulator& acc);
};

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

}  // namespace sketchime
