#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "sketchime/sketch.hpp"

namespace sketchime {

/// Primitive shapes a synthetic component can be drawn as. Frames (box,
/// circle, triangle) enclose the other components of a category.
enum class ComponentKind { Box, Circle, Triangle, Diagonal, Tick, Zigzag, Cross, Bar, Dot, Arc };

ComponentKind component_kind_from_string(const std::string& name);
std::string to_string(ComponentKind kind);
bool is_frame(ComponentKind kind);

/// Desk-scale stand-in for a symbol corpus: every category is a set of
/// primitive components, and every stroke carries its component id.
///
/// Key-value file schema (one `key = value` per line, `#` comments):
///   components           comma/space separated kinds, ids assigned in order
///   category             component ids of one category; repeat per category
///   samples_per_category int
///   canvas               drawing extent in source units
///   point_jitter         per-point Gaussian noise, fraction of canvas
///   position_jitter      per-component offset noise, fraction of canvas
///   scale_jitter         per-component relative scale noise
///   rotation_jitter      whole-sketch rotation noise, radians
///   slant_base           shear x += slant * y applied to every sketch
///   slant_offset         added per style id
///   slant_jitter         per-sketch slant noise
///   speed_noise          amplitude of low-frequency stroke wobble, fraction of canvas
///   style_id             writer style; also sets source_id = "user<style_id>"
struct SynthSpec {
  std::vector<ComponentKind> components;
  std::vector<std::vector<int>> categories;
  int samples_per_category = 20;
  double canvas = 256.0;
  double point_jitter = 0.006;
  double position_jitter = 0.03;
  double scale_jitter = 0.08;
  double rotation_jitter = 0.05;
  double slant_base = 0.0;
  double slant_offset = 0.5;
  double slant_jitter = 0.04;
  double speed_noise = 0.01;
  int style_id = 0;

  /// 6 components, 12 categories.
  static SynthSpec desk_default();

  double slant_for_style() const { return slant_base + slant_offset * style_id; }
  void validate() const;
  std::map<int, std::vector<int>> category_components() const;
};

SynthSpec parse_synth_spec(std::istream& in);
SynthSpec load_synth_spec(const std::string& path);
std::string dump_synth_spec(const SynthSpec& spec);

/// `samples_per_category` sketches per category, category-major order.
std::vector<Sketch> generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed);

/// Least-squares shear of x on y over all points of a sketch, cov(x,y)/var(y).
/// Invariant under translation and uniform scaling.
double slant_statistic(const Sketch& sketch);

}  // namespace sketchime
