#include "sketchime/svg.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "sketchime/errors.hpp"

namespace sketchime {

namespace pt = boost::property_tree;

namespace {

double norm(Point p) { return std::hypot(p.x, p.y); }

Point second_diff(Point a, Point b, Point c) { return {a.x - 2 * b.x + c.x, a.y - 2 * b.y + c.y}; }

class PathLexer {
 public:
  explicit PathLexer(std::string_view d) : d_(d) {}

  void skip_separators() {
    while (pos_ < d_.size() && (std::isspace(static_cast<unsigned char>(d_[pos_])) || d_[pos_] == ','))
      ++pos_;
  }

  bool at_end() {
    skip_separators();
    return pos_ >= d_.size();
  }

  bool next_is_command() {
    skip_separators();
    return pos_ < d_.size() && std::isalpha(static_cast<unsigned char>(d_[pos_])) &&
           d_[pos_] != 'e' && d_[pos_] != 'E';
  }

  char command() { return d_[pos_++]; }

  double number() {
    skip_separators();
    const std::size_t start = pos_;
    if (pos_ < d_.size() && (d_[pos_] == '+' || d_[pos_] == '-')) ++pos_;
    bool digits = false, dot = false;
    while (pos_ < d_.size()) {
      const char c = d_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c))) {
        digits = true;
      } else if (c == '.' && !dot) {
        dot = true;
      } else {
        break;
      }
      ++pos_;
    }
    if (digits && pos_ < d_.size() && (d_[pos_] == 'e' || d_[pos_] == 'E')) {
      std::size_t p = pos_ + 1;
      if (p < d_.size() && (d_[p] == '+' || d_[p] == '-')) ++p;
      if (p < d_.size() && std::isdigit(static_cast<unsigned char>(d_[p]))) {
        pos_ = p;
        while (pos_ < d_.size() && std::isdigit(static_cast<unsigned char>(d_[pos_]))) ++pos_;
      }
    }
    if (!digits) throw ParseError("expected number in path data at offset " + std::to_string(start));
    return std::stod(std::string(d_.substr(start, pos_ - start)));
  }

  // Arc flags may be written without separators ("a1 1 0 00 1 1").
  bool flag() {
    skip_separators();
    if (pos_ < d_.size() && (d_[pos_] == '0' || d_[pos_] == '1')) return d_[pos_++] == '1';
    throw ParseError("expected arc flag in path data");
  }

 private:
  std::string_view d_;
  std::size_t pos_ = 0;
};

void flatten_cubic(std::vector<Point>& out, Point p0, Point p1, Point p2, Point p3, double tol) {
  const int n = cubic_segments(p0, p1, p2, p3, tol);
  for (int k = 1; k <= n; ++k) {
    const double t = static_cast<double>(k) / n, u = 1.0 - t;
    const double a = u * u * u, b = 3 * u * u * t, c = 3 * u * t * t, e = t * t * t;
    out.push_back({a * p0.x + b * p1.x + c * p2.x + e * p3.x, a * p0.y + b * p1.y + c * p2.y + e * p3.y});
  }
}

void flatten_quadratic(std::vector<Point>& out, Point p0, Point p1, Point p2, double tol) {
  const int n = quadratic_segments(p0, p1, p2, tol);
  for (int k = 1; k <= n; ++k) {
    const double t = static_cast<double>(k) / n, u = 1.0 - t;
    out.push_back({u * u * p0.x + 2 * u * t * p1.x + t * t * p2.x,
                   u * u * p0.y + 2 * u * t * p1.y + t * t * p2.y});
  }
}

// Endpoint parameterization to center parameterization, then uniform
// subdivision bounded by the sagitta.
void flatten_arc(std::vector<Point>& out, Point p0, double rx, double ry, double phi_deg, bool large,
                 bool sweep, Point p1, double tol) {
  if (p0 == p1) return;
  rx = std::abs(rx);
  ry = std::abs(ry);
  if (rx == 0.0 || ry == 0.0) {
    out.push_back(p1);
    return;
  }
  const double phi = phi_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(phi), sn = std::sin(phi);
  const double dx = 0.5 * (p0.x - p1.x), dy = 0.5 * (p0.y - p1.y);
  const double x1 = cs * dx + sn * dy, y1 = -sn * dx + cs * dy;
  const double lambda = (x1 * x1) / (rx * rx) + (y1 * y1) / (ry * ry);
  if (lambda > 1.0) {
    rx *= std::sqrt(lambda);
    ry *= std::sqrt(lambda);
  }
  const double num = rx * rx * ry * ry - rx * rx * y1 * y1 - ry * ry * x1 * x1;
  const double den = rx * rx * y1 * y1 + ry * ry * x1 * x1;
  double coef = den > 0.0 ? std::sqrt(std::max(0.0, num / den)) : 0.0;
  if (large == sweep) coef = -coef;
  const double cxp = coef * rx * y1 / ry, cyp = -coef * ry * x1 / rx;
  const double cx = cs * cxp - sn * cyp + 0.5 * (p0.x + p1.x);
  const double cy = sn * cxp + cs * cyp + 0.5 * (p0.y + p1.y);
  auto angle = [](double ux, double uy, double vx, double vy) {
    return std::atan2(ux * vy - uy * vx, ux * vx + uy * vy);
  };
  const double theta1 = angle(1, 0, (x1 - cxp) / rx, (y1 - cyp) / ry);
  double delta = angle((x1 - cxp) / rx, (y1 - cyp) / ry, (-x1 - cxp) / rx, (-y1 - cyp) / ry);
  if (!sweep && delta > 0) delta -= 2 * std::numbers::pi;
  if (sweep && delta < 0) delta += 2 * std::numbers::pi;

  const double r = std::max(rx, ry);
  const double max_step = tol < r ? 2.0 * std::acos(1.0 - tol / r) : std::numbers::pi / 2;
  const int n = std::max(1, static_cast<int>(std::ceil(std::abs(delta) / max_step)));
  for (int k = 1; k <= n; ++k) {
    const double th = theta1 + delta * k / n;
    const double ex = rx * std::cos(th), ey = ry * std::sin(th);
    out.push_back({cs * ex - sn * ey + cx, sn * ex + cs * ey + cy});
  }
  out.back() = p1;
}

std::vector<Point> parse_path_data(std::string_view d, double tol) {
  PathLexer lex(d);
  std::vector<Point> pts;
  Point cur{}, start{}, last_ctrl{};
  char prev_cmd = 0;
  char cmd = 0;
  while (!lex.at_end()) {
    if (lex.next_is_command()) {
      cmd = lex.command();
    } else if (cmd == 0) {
      throw ParseError("path data must start with a command");
    } else if (cmd == 'M') {
      cmd = 'L';
    } else if (cmd == 'm') {
      cmd = 'l';
    }
    const bool rel = std::islower(static_cast<unsigned char>(cmd));
    const Point base = rel ? cur : Point{0, 0};
    auto read_pt = [&] {
      const double x = lex.number();
      const double y = lex.number();
      return Point{base.x + x, base.y + y};
    };
    switch (std::toupper(static_cast<unsigned char>(cmd))) {
      case 'M':
        cur = start = read_pt();
        pts.push_back(cur);
        break;
      case 'L':
        cur = read_pt();
        pts.push_back(cur);
        break;
      case 'H':
        cur = {(rel ? cur.x : 0.0) + lex.number(), cur.y};
        pts.push_back(cur);
        break;
      case 'V':
        cur = {cur.x, (rel ? cur.y : 0.0) + lex.number()};
        pts.push_back(cur);
        break;
      case 'C': {
        const Point c1 = read_pt(), c2 = read_pt(), p = read_pt();
        if (pts.empty()) pts.push_back(cur);
        flatten_cubic(pts, cur, c1, c2, p, tol);
        last_ctrl = c2;
        cur = p;
        break;
      }
      case 'S': {
        const bool smooth = prev_cmd == 'C' || prev_cmd == 'S';
        const Point c1 = smooth ? Point{2 * cur.x - last_ctrl.x, 2 * cur.y - last_ctrl.y} : cur;
        const Point c2 = read_pt(), p = read_pt();
        if (pts.empty()) pts.push_back(cur);
        flatten_cubic(pts, cur, c1, c2, p, tol);
        last_ctrl = c2;
        cur = p;
        break;
      }
      case 'Q': {
        const Point c = read_pt(), p = read_pt();
        if (pts.empty()) pts.push_back(cur);
        flatten_quadratic(pts, cur, c, p, tol);
        last_ctrl = c;
        cur = p;
        break;
      }
      case 'T': {
        const bool smooth = prev_cmd == 'Q' || prev_cmd == 'T';
        const Point c = smooth ? Point{2 * cur.x - last_ctrl.x, 2 * cur.y - last_ctrl.y} : cur;
        const Point p = read_pt();
        if (pts.empty()) pts.push_back(cur);
        flatten_quadratic(pts, cur, c, p, tol);
        last_ctrl = c;
        cur = p;
        break;
      }
      case 'A': {
        const double rx = lex.number(), ry = lex.number(), rot = lex.number();
        const bool large = lex.flag(), sweep = lex.flag();
        const Point p = read_pt();
        if (pts.empty()) pts.push_back(cur);
        flatten_arc(pts, cur, rx, ry, rot, large, sweep, p, tol);
        cur = p;
        break;
      }
      case 'Z':
        if (!(cur == start)) pts.push_back(start);
        cur = start;
        break;
      default:
        throw ParseError(std::string("unsupported path command '") + cmd + "'");
    }
    prev_cmd = static_cast<char>(std::toupper(static_cast<unsigned char>(cmd)));
  }
  return pts;
}

std::vector<Point> parse_polyline_points(std::string_view s) {
  PathLexer lex(s);
  std::vector<Point> pts;
  while (!lex.at_end()) {
    const double x = lex.number();
    const double y = lex.number();
    pts.push_back({x, y});
  }
  return pts;
}

std::string strip_ns(const std::string& tag) {
  const auto colon = tag.find(':');
  return colon == std::string::npos ? tag : tag.substr(colon + 1);
}

void collect(const pt::ptree& node, const std::string& tag, Sketch& out, double tol, const std::string* part_attr,
             std::vector<std::string>* parts) {
  const std::string name = strip_ns(tag);
  if (name == "path" || name == "polyline") {
    const auto& attrs = node.get_child_optional("<xmlattr>");
    Stroke st;
    std::string part;
    if (attrs) {
      if (name == "path") {
        if (auto d = attrs->get_optional<std::string>("d")) st.points = parse_path_data(*d, tol);
      } else if (auto p = attrs->get_optional<std::string>("points")) {
        st.points = parse_polyline_points(*p);
      }
      if (auto sem = attrs->get_optional<int>("data-semantic")) st.semantic_label = *sem;
      if (part_attr)
        if (auto v = attrs->get_optional<std::string>(*part_attr)) part = *v;
    }
    if (!st.points.empty()) {
      out.strokes.push_back(std::move(st));
      if (parts) parts->push_back(std::move(part));
    }
  }
  for (const auto& [child_tag, child] : node) {
    if (child_tag == "<xmlattr>" || child_tag == "<xmlcomment>") continue;
    collect(child, child_tag, out, tol, part_attr, parts);
  }
}

Sketch parse_impl(std::string_view svg_text, double tolerance, const std::string* part_attr,
                  std::vector<std::string>* parts) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(svg_text)};
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError(std::string("malformed SVG: ") + e.what());
  }
  Sketch sk;
  for (const auto& [tag, node] : tree) {
    if (strip_ns(tag) == "svg") {
      if (auto attrs = node.get_child_optional("<xmlattr>")) {
        if (auto c = attrs->get_optional<int>("data-category")) sk.category = *c;
        if (auto s = attrs->get_optional<std::string>("data-source")) sk.source_id = *s;
      }
    }
    collect(node, tag, sk, tolerance, part_attr, parts);
  }
  if (sk.strokes.empty()) throw EmptySketchError("SVG has no drawable path or polyline");
  return sk;
}

}  // namespace

int cubic_segments(Point p0, Point p1, Point p2, Point p3, double tolerance) {
  // |B''| <= 6 * max second difference; uniform deviation <= max|B''| / (8 n^2).
  const double d = std::max(norm(second_diff(p0, p1, p2)), norm(second_diff(p1, p2, p3)));
  return std::max(1, static_cast<int>(std::ceil(std::sqrt(0.75 * d / tolerance))));
}

int quadratic_segments(Point p0, Point p1, Point p2, double tolerance) {
  const double d = norm(second_diff(p0, p1, p2));
  return std::max(1, static_cast<int>(std::ceil(std::sqrt(0.25 * d / tolerance))));
}

Sketch parse_svg(std::string_view svg_text, double tolerance) { return parse_impl(svg_text, tolerance, nullptr, nullptr); }

SvgParts parse_svg_parts(std::string_view svg_text, const std::string& attribute, double tolerance) {
  SvgParts out;
  out.sketch = parse_impl(svg_text, tolerance, &attribute, &out.parts);
  return out;
}

std::string serialize_svg(const Sketch& sketch) {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\"";
  if (sketch.category) out << " data-category=\"" << *sketch.category << '"';
  if (!sketch.source_id.empty()) out << " data-source=\"" << sketch.source_id << '"';
  out << ">\n";
  char buf[64];
  for (const auto& s : sketch.strokes) {
    out << "  <path fill=\"none\" stroke=\"black\"";
    if (s.semantic_label) out << " data-semantic=\"" << *s.semantic_label << '"';
    out << " d=\"";
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%c%.17g %.17g", i == 0 ? 'M' : 'L', s.points[i].x, s.points[i].y);
      out << (i ? " " : "") << buf;
    }
    out << "\"/>\n";
  }
  out << "</svg>\n";
  return out.str();
}

}  // namespace sketchime
