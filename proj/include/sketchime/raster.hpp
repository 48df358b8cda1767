#pragma once

#include <vector>

#include "sketchime/sketch.hpp"

namespace sketchime {

struct RenderConfig {
  int width = 224;
  int height = 224;
  double line_width = 2.0;  // pixels
};

/// Channel-major image, values in [0,1], ink = 1 on a 0 background.
struct RasterImage {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // channels * height * width

  double at(int c, int y, int x) const { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

/// Distance-based anti-aliased polyline rendering of a normalized sketch.
/// Coverage of a pixel is clamp(w/2 + 0.5 - d, 0, 1) where d is the distance
/// from the pixel center to the nearest segment of its stroke.
RasterImage rasterize(const ResampledSketch& rs, const RenderConfig& cfg = {});

}  // namespace sketchime
