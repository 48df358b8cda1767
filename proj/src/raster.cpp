#include "sketchime/raster.hpp"

#include <algorithm>
#include <cmath>

#include "sketchime/errors.hpp"

namespace sketchime {

namespace {

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

}  // namespace

RasterImage rasterize(const ResampledSketch& rs, const RenderConfig& cfg) {
  if (cfg.width <= 0 || cfg.height <= 0 || !(cfg.line_width > 0.0))
    throw ConfigError("render size and line width must be positive");
  RasterImage img;
  img.height = cfg.height;
  img.width = cfg.width;
  const std::size_t plane = static_cast<std::size_t>(cfg.height) * cfg.width;
  img.values.assign(3 * plane, 0.0);
  double* ink = img.values.data();

  const double half = 0.5 * cfg.line_width;
  const double reach = half + 0.5;
  auto stamp = [&](double ax, double ay, double bx, double by) {
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - reach)));
    const int x1 = std::min(cfg.width - 1, static_cast<int>(std::ceil(std::max(ax, bx) + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - reach)));
    const int y1 = std::min(cfg.height - 1, static_cast<int>(std::ceil(std::max(ay, by) + reach)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = segment_distance(x + 0.5, y + 0.5, ax, ay, bx, by);
        const double cov = std::clamp(reach - d, 0.0, 1.0);
        double& v = ink[static_cast<std::size_t>(y) * cfg.width + x];
        v = std::max(v, cov);
      }
  };

  const std::size_t n = rs.points.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double ax = rs.points[i].x * cfg.width, ay = rs.points[i].y * cfg.height;
    const bool continues = i + 1 < n && rs.stroke_of_point[i + 1] == rs.stroke_of_point[i];
    const bool starts = i == 0 || rs.stroke_of_point[i - 1] != rs.stroke_of_point[i];
    if (continues) {
      stamp(ax, ay, rs.points[i + 1].x * cfg.width, rs.points[i + 1].y * cfg.height);
    } else if (starts) {
      stamp(ax, ay, ax, ay);  // isolated dot
    }
  }
  std::copy(ink, ink + plane, ink + plane);
  std::copy(ink, ink + plane, ink + 2 * plane);
  return img;
}

}  // namespace sketchime
