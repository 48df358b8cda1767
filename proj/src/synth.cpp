#include "sketchime/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <random>
#include <sstream>

#include "sketchime/errors.hpp"

namespace sketchime {

namespace {

constexpr std::pair<ComponentKind, const char*> kKindNames[] = {
    {ComponentKind::Box, "box"},       {ComponentKind::Circle, "circle"},
    {ComponentKind::Triangle, "triangle"}, {ComponentKind::Diagonal, "diagonal"},
    {ComponentKind::Tick, "tick"},     {ComponentKind::Zigzag, "zigzag"},
    {ComponentKind::Cross, "cross"},   {ComponentKind::Bar, "bar"},
    {ComponentKind::Dot, "dot"},       {ComponentKind::Arc, "arc"},
};

using Polyline = std::vector<Point>;

Polyline line(Point a, Point b, int n = 8) {
  Polyline out;
  for (int k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / (n - 1);
    out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
  }
  return out;
}

Polyline chain(std::initializer_list<Point> corners, int per_segment = 6) {
  Polyline out;
  const std::vector<Point> c(corners);
  for (std::size_t i = 1; i < c.size(); ++i) {
    auto seg = line(c[i - 1], c[i], per_segment);
    out.insert(out.end(), seg.begin() + (i == 1 ? 0 : 1), seg.end());
  }
  return out;
}

Polyline ellipse_arc(double a0, double a1, int n) {
  Polyline out;
  for (int k = 0; k < n; ++k) {
    const double a = a0 + (a1 - a0) * k / (n - 1);
    out.push_back({0.5 + 0.5 * std::cos(a), 0.5 + 0.5 * std::sin(a)});
  }
  return out;
}

// Strokes of one component in the unit square, y pointing down.
std::vector<Polyline> unit_strokes(ComponentKind kind) {
  switch (kind) {
    case ComponentKind::Box:
      return {chain({{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0, 0}})};
    case ComponentKind::Circle:
      return {ellipse_arc(-std::numbers::pi / 2, 1.5 * std::numbers::pi, 28)};
    case ComponentKind::Triangle:
      return {chain({{0.5, 0}, {1, 1}, {0, 1}, {0.5, 0}})};
    case ComponentKind::Diagonal:
      return {line({0, 1}, {1, 0}, 10)};
    case ComponentKind::Tick:
      return {chain({{0, 0.5}, {0.35, 1}, {1, 0}})};
    case ComponentKind::Zigzag:
      return {chain({{0, 0.5}, {0.25, 0.15}, {0.5, 0.85}, {0.75, 0.15}, {1, 0.5}}, 4)};
    case ComponentKind::Cross:
      return {line({0, 0}, {1, 1}), line({1, 0}, {0, 1})};
    case ComponentKind::Bar:
      return {line({0, 0.5}, {1, 0.5}, 10)};
    case ComponentKind::Dot:
      return {Polyline{{0.5, 0.5}}};
    case ComponentKind::Arc:
      return {ellipse_arc(std::numbers::pi, 2 * std::numbers::pi, 14)};
  }
  return {};
}

struct Box {
  double x, y, w, h;
};

// Frames nest concentrically; the remaining components share the interior,
// side by side.
std::vector<Box> layout(const SynthSpec& spec, const std::vector<int>& comps) {
  std::vector<Box> boxes(comps.size());
  int frames = 0;
  for (std::size_t i = 0; i < comps.size(); ++i)
    if (is_frame(spec.components[comps[i]])) {
      const double s = 1.0 - 0.3 * frames++;
      boxes[i] = {0.5 - 0.5 * s, 0.5 - 0.5 * s, s, s};
    }
  const double inner = frames == 0 ? 1.0 : 0.62 * (1.0 - 0.3 * (frames - 1));
  const int others = static_cast<int>(comps.size()) - frames;
  int slot = 0;
  for (std::size_t i = 0; i < comps.size(); ++i) {
    if (is_frame(spec.components[comps[i]])) continue;
    const double w = inner / others;
    const double side = std::min(w, inner) * 0.86;
    const double cx = 0.5 - 0.5 * inner + w * (slot++ + 0.5);
    boxes[i] = {cx - 0.5 * side, 0.5 - 0.5 * side, side, side};
  }
  return boxes;
}

std::vector<std::string> split_list(const std::string& v) {
  std::string s = v;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ComponentKind component_kind_from_string(const std::string& name) {
  for (const auto& [k, n] : kKindNames)
    if (name == n) return k;
  throw ConfigError("unknown component kind '" + name + "'");
}

std::string to_string(ComponentKind kind) {
  for (const auto& [k, n] : kKindNames)
    if (k == kind) return n;
  return "?";
}

bool is_frame(ComponentKind kind) {
  return kind == ComponentKind::Box || kind == ComponentKind::Circle || kind == ComponentKind::Triangle;
}

SynthSpec SynthSpec::desk_default() {
  SynthSpec s;
  using K = ComponentKind;
  // Components 2 and 5 are both diagonals; only the category tells them apart.
  s.components = {K::Box, K::Circle, K::Diagonal, K::Tick, K::Zigzag, K::Diagonal};
  s.categories = {{0, 2}, {1, 5}, {2, 3}, {5, 4}, {0, 3}, {1, 4},
                  {0, 4}, {1, 3}, {0, 2, 3}, {1, 5, 4}, {3, 4}, {2}};
  s.point_jitter = 0.012;
  s.position_jitter = 0.06;
  s.scale_jitter = 0.16;
  s.rotation_jitter = 0.1;
  s.speed_noise = 0.02;
  return s;
}

void SynthSpec::validate() const {
  if (components.empty()) throw ConfigError("synth spec defines no components");
  if (categories.empty()) throw ConfigError("synth spec defines no categories");
  if (samples_per_category < 0) throw ConfigError("samples_per_category must be >= 0");
  if (!(canvas > 0.0)) throw ConfigError("canvas must be positive");
  for (std::size_t c = 0; c < categories.size(); ++c) {
    if (categories[c].empty()) throw ConfigError("category " + std::to_string(c) + " has no components");
    for (int id : categories[c])
      if (id < 0 || id >= static_cast<int>(components.size()))
        throw ConfigError("category " + std::to_string(c) + " references undefined component " +
                          std::to_string(id));
  }
}

std::map<int, std::vector<int>> SynthSpec::category_components() const {
  std::map<int, std::vector<int>> m;
  for (std::size_t c = 0; c < categories.size(); ++c) m[static_cast<int>(c)] = categories[c];
  return m;
}

SynthSpec parse_synth_spec(std::istream& in) {
  SynthSpec s;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("synth spec line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "components") {
        for (const auto& tok : split_list(val)) s.components.push_back(component_kind_from_string(tok));
      } else if (key == "category") {
        std::vector<int> ids;
        for (const auto& tok : split_list(val)) ids.push_back(std::stoi(tok));
        s.categories.push_back(std::move(ids));
      } else if (key == "samples_per_category") {
        s.samples_per_category = std::stoi(val);
      } else if (key == "canvas") {
        s.canvas = std::stod(val);
      } else if (key == "point_jitter") {
        s.point_jitter = std::stod(val);
      } else if (key == "position_jitter") {
        s.position_jitter = std::stod(val);
      } else if (key == "scale_jitter") {
        s.scale_jitter = std::stod(val);
      } else if (key == "rotation_jitter") {
        s.rotation_jitter = std::stod(val);
      } else if (key == "slant_base") {
        s.slant_base = std::stod(val);
      } else if (key == "slant_offset") {
        s.slant_offset = std::stod(val);
      } else if (key == "slant_jitter") {
        s.slant_jitter = std::stod(val);
      } else if (key == "speed_noise") {
        s.speed_noise = std::stod(val);
      } else if (key == "style_id") {
        s.style_id = std::stoi(val);
      } else {
        throw ConfigError("unknown key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("synth spec line " + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
  s.validate();
  return s;
}

SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open synth spec " + path);
  return parse_synth_spec(in);
}

std::string dump_synth_spec(const SynthSpec& s) {
  std::ostringstream out;
  out.precision(17);
  out << "components =";
  for (auto k : s.components) out << ' ' << to_string(k);
  out << '\n';
  for (const auto& c : s.categories) {
    out << "category =";
    for (int id : c) out << ' ' << id;
    out << '\n';
  }
  out << "samples_per_category = " << s.samples_per_category << '\n'
      << "canvas = " << s.canvas << '\n'
      << "point_jitter = " << s.point_jitter << '\n'
      << "position_jitter = " << s.position_jitter << '\n'
      << "scale_jitter = " << s.scale_jitter << '\n'
      << "rotation_jitter = " << s.rotation_jitter << '\n'
      << "slant_base = " << s.slant_base << '\n'
      << "slant_offset = " << s.slant_offset << '\n'
      << "slant_jitter = " << s.slant_jitter << '\n'
      << "speed_noise = " << s.speed_noise << '\n'
      << "style_id = " << s.style_id << '\n';
  return out.str();
}

std::vector<Sketch> generate_synthetic_corpus(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double canvas = spec.canvas;
  const std::string user = "user" + std::to_string(spec.style_id);

  std::vector<Sketch> out;
  out.reserve(spec.categories.size() * spec.samples_per_category);
  for (std::size_t cat = 0; cat < spec.categories.size(); ++cat) {
    const auto& comps = spec.categories[cat];
    const auto boxes = layout(spec, comps);
    for (int n = 0; n < spec.samples_per_category; ++n) {
      Sketch sk;
      sk.category = static_cast<int>(cat);
      sk.source_id = user;

      std::vector<std::size_t> order(comps.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::shuffle(order.begin(), order.end(), rng);

      const double angle = spec.rotation_jitter * gauss(rng);
      const double slant = spec.slant_for_style() + spec.slant_jitter * gauss(rng);
      const double ca = std::cos(angle), sa = std::sin(angle);

      for (std::size_t i : order) {
        const Box& b = boxes[i];
        const double scale = std::max(0.3, 1.0 + spec.scale_jitter * gauss(rng));
        const double ox = spec.position_jitter * gauss(rng);
        const double oy = spec.position_jitter * gauss(rng);
        for (const auto& unit : unit_strokes(spec.components[comps[i]])) {
          Stroke st;
          st.semantic_label = comps[i];
          const double freq = 0.5 + unif(rng);
          const double ph1 = 2 * std::numbers::pi * unif(rng), ph2 = 2 * std::numbers::pi * unif(rng);
          for (std::size_t k = 0; k < unit.size(); ++k) {
            const double t = unit.size() > 1 ? static_cast<double>(k) / (unit.size() - 1) : 0.0;
            double x = b.x + b.w * (0.5 + scale * (unit[k].x - 0.5)) + ox;
            double y = b.y + b.h * (0.5 + scale * (unit[k].y - 0.5)) + oy;
            x += spec.speed_noise * std::sin(2 * std::numbers::pi * freq * t + ph1);
            y += spec.speed_noise * std::sin(2 * std::numbers::pi * freq * t + ph2);
            x += spec.point_jitter * gauss(rng);
            y += spec.point_jitter * gauss(rng);
            // rotate about the center, then shear
            const double rx = 0.5 + ca * (x - 0.5) - sa * (y - 0.5);
            const double ry = 0.5 + sa * (x - 0.5) + ca * (y - 0.5);
            st.points.push_back({canvas * (rx + slant * (ry - 0.5)), canvas * ry});
          }
          sk.strokes.push_back(std::move(st));
        }
      }
      out.push_back(clean(sk));
    }
  }
  return out;
}

double slant_statistic(const Sketch& sketch) {
  double n = 0, sx = 0, sy = 0;
  for (const auto& s : sketch.strokes)
    for (const auto& p : s.points) {
      n += 1;
      sx += p.x;
      sy += p.y;
    }
  if (n < 2) return 0.0;
  const double mx = sx / n, my = sy / n;
  double cxy = 0, vyy = 0;
  for (const auto& s : sketch.strokes)
    for (const auto& p : s.points) {
      cxy += (p.x - mx) * (p.y - my);
      vyy += (p.y - my) * (p.y - my);
    }
  return vyy > 0 ? cxy / vyy : 0.0;
}

}  // namespace sketchime
