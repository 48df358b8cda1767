#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sketchime {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

struct Stroke {
  std::vector<Point> points;
  std::optional<int> semantic_label;
};

struct Sketch {
  std::vector<Stroke> strokes;
  std::optional<int> category;
  std::string source_id;

  std::size_t point_count() const;
  bool has_semantics() const;
};

/// Fixed-size point set produced by `resample`; the input to the graph stream.
struct ResampledSketch {
  std::vector<Point> points;
  std::vector<int> stroke_of_point;
  std::vector<int> point_semantic;  // empty when the source had no labels
  std::optional<int> category;

  std::size_t size() const { return points.size(); }
  int stroke_count() const;
};

inline constexpr int kDefaultPointCount = 300;

/// Drops consecutive duplicate points. Strokes left empty are removed.
Sketch clean(const Sketch& sketch);

/// Aspect-preserving map into [0,1]^2, centered along the shorter axis.
Sketch normalize(const Sketch& sketch);

/// Number of points each stroke receives: proportional to arc length with
/// largest-remainder rounding, at least one per stroke.
std::vector<int> allocate_points(const std::vector<double>& stroke_lengths, int n);

double arc_length(const Stroke& stroke);

ResampledSketch resample(const Sketch& sketch, int n = kDefaultPointCount);

// Canonical NDJSON record:
//   {"strokes":[[[x,y],...],...],"category":c,"semantics":[...],"source_id":"..."}
std::string to_ndjson_line(const Sketch& sketch);
Sketch from_ndjson_line(std::string_view line);

std::vector<Sketch> read_ndjson(std::istream& in);
std::vector<Sketch> read_ndjson_file(const std::string& path);
void write_ndjson(std::ostream& out, const std::vector<Sketch>& sketches);
void write_ndjson_file(const std::string& path, const std::vector<Sketch>& sketches);

}  // namespace sketchime
