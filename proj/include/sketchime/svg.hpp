#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "sketchime/sketch.hpp"

namespace sketchime {

/// Curve flattening tolerance in source units (max chord deviation).
inline constexpr double kSvgFlattenTolerance = 0.5;

/// Reads `<path>` and `<polyline>` elements (at any depth) as strokes, one
/// stroke per element, in document order. Transforms and styling are ignored.
/// Optional attributes: `data-semantic` on an element, `data-category` and
/// `data-source` on the root.
Sketch parse_svg(std::string_view svg_text, double tolerance = kSvgFlattenTolerance);

/// Same strokes as `parse_svg` plus the string value of `attribute` on each
/// stroke element ("" when absent).
struct SvgParts {
  Sketch sketch;
  std::vector<std::string> parts;
};
SvgParts parse_svg_parts(std::string_view svg_text, const std::string& attribute,
                         double tolerance = kSvgFlattenTolerance);

std::string serialize_svg(const Sketch& sketch);

/// Segments used to flatten one cubic Bezier so that the polyline stays
/// within `tolerance` of the curve (uniform parameter subdivision).
int cubic_segments(Point p0, Point p1, Point p2, Point p3, double tolerance);
int quadratic_segments(Point p0, Point p1, Point p2, double tolerance);

}  // namespace sketchime
