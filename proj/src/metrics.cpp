#include "sketchime/metrics.hpp"

#include <algorithm>
#include <map>

#include "sketchime/errors.hpp"

namespace sketchime {

namespace {

void check_aligned(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ConfigError(std::string(what) + ": arrays are not aligned");
}

void grow(std::vector<std::size_t>& v, std::size_t n) {
  if (v.size() < n) v.resize(n, 0);
}

}  // namespace

double p_metric(std::span<const int> pred, std::span<const int> truth) {
  check_aligned(pred.size(), truth.size(), "p_metric");
  if (pred.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == truth[i];
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

double acc_at_1(std::span<const int> pred, std::span<const int> truth) { return p_metric(pred, truth); }

namespace {

// (strokes judged correct, strokes present)
std::pair<std::size_t, std::size_t> stroke_counts(std::span<const int> pred, std::span<const int> truth,
                                                  std::span<const int> stroke_of_node, double threshold,
                                                  bool inclusive) {
  check_aligned(pred.size(), truth.size(), "c_metric");
  check_aligned(pred.size(), stroke_of_node.size(), "c_metric");
  std::map<int, std::pair<std::size_t, std::size_t>> per_stroke;  // stroke -> (correct, total)
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto& [ok, total] = per_stroke[stroke_of_node[i]];
    ok += pred[i] == truth[i];
    ++total;
  }
  std::size_t good = 0;
  for (const auto& [s, counts] : per_stroke) {
    const double frac = static_cast<double>(counts.first) / static_cast<double>(counts.second);
    good += inclusive ? frac >= threshold : frac > threshold;
  }
  return {good, per_stroke.size()};
}

}  // namespace

double c_metric(std::span<const int> pred, std::span<const int> truth, std::span<const int> stroke_of_node,
                double threshold, bool inclusive) {
  const auto [good, total] = stroke_counts(pred, truth, stroke_of_node, threshold, inclusive);
  return total == 0 ? 0.0 : static_cast<double>(good) / static_cast<double>(total);
}

void MetricAccumulator::add_sketch(int pred_category, int true_category, std::span<const int> pred_points,
                                   std::span<const int> true_points, std::span<const int> stroke_of_node,
                                   bool inclusive) {
  check_aligned(pred_points.size(), true_points.size(), "add_sketch");
  ++sketches;
  sketches_correct += pred_category == true_category;
  if (true_category >= 0) {
    grow(class_total, static_cast<std::size_t>(true_category) + 1);
    grow(class_correct, static_cast<std::size_t>(true_category) + 1);
    ++class_total[true_category];
    class_correct[true_category] += pred_category == true_category;
  }
  points += pred_points.size();
  for (std::size_t i = 0; i < pred_points.size(); ++i) {
    const bool ok = pred_points[i] == true_points[i];
    points_correct += ok;
    const auto c = static_cast<std::size_t>(true_points[i]);
    grow(component_total, c + 1);
    grow(component_correct, c + 1);
    ++component_total[c];
    component_correct[c] += ok;
  }
  const auto [good, total] = stroke_counts(pred_points, true_points, stroke_of_node, 0.75, inclusive);
  strokes += total;
  strokes_correct += good;
}

void MetricAccumulator::merge(const MetricAccumulator& o) {
  sketches += o.sketches;
  sketches_correct += o.sketches_correct;
  points += o.points;
  points_correct += o.points_correct;
  strokes += o.strokes;
  strokes_correct += o.strokes_correct;
  auto add = [](std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    grow(a, b.size());
    for (std::size_t i = 0; i < b.size(); ++i) a[i] += b[i];
  };
  add(class_total, o.class_total);
  add(class_correct, o.class_correct);
  add(component_total, o.component_total);
  add(component_correct, o.component_correct);
}

MetricReport MetricReport::from(const MetricAccumulator& a) {
  auto frac = [](std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  MetricReport r;
  r.sketches = a.sketches;
  r.acc_at_1 = frac(a.sketches_correct, a.sketches);
  r.p_metric = frac(a.points_correct, a.points);
  r.c_metric = frac(a.strokes_correct, a.strokes);
  for (std::size_t c = 0; c < a.class_total.size(); ++c)
    r.per_class_acc.push_back(a.class_total[c] ? frac(a.class_correct[c], a.class_total[c]) : -1.0);
  for (std::size_t c = 0; c < a.component_total.size(); ++c)
    r.per_component_recall.push_back(a.component_total[c] ? frac(a.component_correct[c], a.component_total[c]) : -1.0);
  return r;
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"acc_at_1", r.acc_at_1},
                     {"p_metric", r.p_metric},
                     {"c_metric", r.c_metric},
                     {"sketches", r.sketches},
                     {"per_class_acc", r.per_class_acc},
                     {"per_component_recall", r.per_component_recall}};
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  r.acc_at_1 = j.at("acc_at_1").get<double>();
  r.p_metric = j.at("p_metric").get<double>();
  r.c_metric = j.at("c_metric").get<double>();
  r.sketches = j.value("sketches", std::size_t{0});
  r.per_class_acc = j.value("per_class_acc", std::vector<double>{});
  r.per_component_recall = j.value("per_component_recall", std::vector<double>{});
}

}  // namespace sketchime
