#include "sketchime/sketch.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "sketchime/errors.hpp"

namespace sketchime {

using nlohmann::json;

std::size_t Sketch::point_count() const {
  std::size_t n = 0;
  for (const auto& s : strokes) n += s.points.size();
  return n;
}

bool Sketch::has_semantics() const {
  return !strokes.empty() &&
         std::all_of(strokes.begin(), strokes.end(),
                     [](const Stroke& s) { return s.semantic_label.has_value(); });
}

int ResampledSketch::stroke_count() const {
  if (stroke_of_point.empty()) return 0;
  return *std::max_element(stroke_of_point.begin(), stroke_of_point.end()) + 1;
}

Sketch clean(const Sketch& sketch) {
  Sketch out;
  out.category = sketch.category;
  out.source_id = sketch.source_id;
  for (const auto& s : sketch.strokes) {
    Stroke c;
    c.semantic_label = s.semantic_label;
    for (const auto& p : s.points) {
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw NumericError("non-finite stroke coordinate");
      if (c.points.empty() || !(c.points.back() == p)) c.points.push_back(p);
    }
    if (!c.points.empty()) out.strokes.push_back(std::move(c));
  }
  return out;
}

Sketch normalize(const Sketch& sketch) {
  if (sketch.point_count() == 0) throw EmptySketchError("cannot normalize an empty sketch");
  double xmin = std::numeric_limits<double>::infinity(), ymin = xmin;
  double xmax = -xmin, ymax = -xmin;
  for (const auto& s : sketch.strokes)
    for (const auto& p : s.points) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
  const double w = xmax - xmin, h = ymax - ymin;
  const double extent = std::max(w, h);
  if (!(extent > 0.0)) throw DegenerateSketchError("all sketch points are identical");
  const double scale = 1.0 / extent;
  const double ox = 0.5 * (1.0 - w * scale);
  const double oy = 0.5 * (1.0 - h * scale);

  Sketch out = sketch;
  for (auto& s : out.strokes)
    for (auto& p : s.points) {
      p.x = std::clamp((p.x - xmin) * scale + ox, 0.0, 1.0);
      p.y = std::clamp((p.y - ymin) * scale + oy, 0.0, 1.0);
    }
  return out;
}

double arc_length(const Stroke& stroke) {
  double len = 0.0;
  for (std::size_t i = 1; i < stroke.points.size(); ++i)
    len += std::hypot(stroke.points[i].x - stroke.points[i - 1].x,
                      stroke.points[i].y - stroke.points[i - 1].y);
  return len;
}

std::vector<int> allocate_points(const std::vector<double>& lengths, int n) {
  const int strokes = static_cast<int>(lengths.size());
  if (strokes == 0) throw EmptySketchError("no strokes to allocate points to");
  if (n < strokes)
    throw CapacityError("resample size " + std::to_string(n) + " is below stroke count " +
                        std::to_string(strokes));
  const double total = std::accumulate(lengths.begin(), lengths.end(), 0.0);

  std::vector<double> quota(strokes);
  for (int j = 0; j < strokes; ++j)
    quota[j] = total > 0.0 ? n * lengths[j] / total : static_cast<double>(n) / strokes;

  std::vector<int> alloc(strokes);
  for (int j = 0; j < strokes; ++j)
    alloc[j] = std::max(1, static_cast<int>(std::floor(quota[j])));
  int sum = std::accumulate(alloc.begin(), alloc.end(), 0);

  // Ties go to the lower stroke index.
  while (sum < n) {
    int best = 0;
    double best_gap = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < strokes; ++j) {
      const double gap = quota[j] - alloc[j];
      if (gap > best_gap) best_gap = gap, best = j;
    }
    ++alloc[best];
    ++sum;
  }
  while (sum > n) {
    int best = -1;
    double best_excess = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < strokes; ++j) {
      if (alloc[j] <= 1) continue;
      const double excess = alloc[j] - quota[j];
      if (excess > best_excess) best_excess = excess, best = j;
    }
    --alloc[best];
    --sum;
  }
  return alloc;
}

namespace {

// m points equidistant along the polyline, endpoints included.
std::vector<Point> sample_stroke(const Stroke& stroke, int m) {
  const auto& pts = stroke.points;
  std::vector<Point> out;
  out.reserve(m);
  const double len = arc_length(stroke);
  if (m == 1 || pts.size() == 1 || len == 0.0) {
    for (int k = 0; k < m; ++k) out.push_back(pts.front());
    return out;
  }
  std::size_t seg = 1;
  double seg_start = 0.0;
  for (int k = 0; k < m; ++k) {
    const double target = len * k / (m - 1);
    double seg_len = std::hypot(pts[seg].x - pts[seg - 1].x, pts[seg].y - pts[seg - 1].y);
    while (seg + 1 < pts.size() && seg_start + seg_len < target) {
      seg_start += seg_len;
      ++seg;
      seg_len = std::hypot(pts[seg].x - pts[seg - 1].x, pts[seg].y - pts[seg - 1].y);
    }
    const double t = seg_len > 0.0 ? std::clamp((target - seg_start) / seg_len, 0.0, 1.0) : 0.0;
    out.push_back({pts[seg - 1].x + t * (pts[seg].x - pts[seg - 1].x),
                   pts[seg - 1].y + t * (pts[seg].y - pts[seg - 1].y)});
  }
  out.back() = pts.back();
  return out;
}

}  // namespace

ResampledSketch resample(const Sketch& sketch, int n) {
  if (sketch.strokes.empty()) throw EmptySketchError("cannot resample an empty sketch");
  std::vector<double> lengths;
  lengths.reserve(sketch.strokes.size());
  for (const auto& s : sketch.strokes) {
    if (s.points.empty()) throw EmptySketchError("stroke without points");
    lengths.push_back(arc_length(s));
  }
  const auto alloc = allocate_points(lengths, n);
  const bool labelled = sketch.has_semantics();

  ResampledSketch rs;
  rs.category = sketch.category;
  rs.points.reserve(n);
  rs.stroke_of_point.reserve(n);
  for (std::size_t j = 0; j < sketch.strokes.size(); ++j) {
    for (const auto& p : sample_stroke(sketch.strokes[j], alloc[j])) {
      rs.points.push_back(p);
      rs.stroke_of_point.push_back(static_cast<int>(j));
      if (labelled) rs.point_semantic.push_back(*sketch.strokes[j].semantic_label);
    }
  }
  return rs;
}

std::string to_ndjson_line(const Sketch& sketch) {
  json strokes = json::array();
  for (const auto& s : sketch.strokes) {
    json pts = json::array();
    for (const auto& p : s.points) pts.push_back({p.x, p.y});
    strokes.push_back(std::move(pts));
  }
  json rec;
  rec["strokes"] = std::move(strokes);
  rec["category"] = sketch.category ? json(*sketch.category) : json(nullptr);
  if (sketch.has_semantics()) {
    json sem = json::array();
    for (const auto& s : sketch.strokes) sem.push_back(*s.semantic_label);
    rec["semantics"] = std::move(sem);
  } else {
    rec["semantics"] = nullptr;
  }
  rec["source_id"] = sketch.source_id;
  return rec.dump();
}

Sketch from_ndjson_line(std::string_view line) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed sketch record: ") + e.what());
  }
  if (!rec.is_object() || !rec.contains("strokes") || !rec["strokes"].is_array())
    throw ParseError("sketch record lacks a 'strokes' array");
  Sketch sk;
  try {
    for (const auto& s : rec["strokes"]) {
      Stroke st;
      for (const auto& p : s) {
        if (!p.is_array() || p.size() != 2) throw ParseError("point is not an [x,y] pair");
        st.points.push_back({p[0].get<double>(), p[1].get<double>()});
      }
      sk.strokes.push_back(std::move(st));
    }
    if (rec.contains("category") && !rec["category"].is_null())
      sk.category = rec["category"].get<int>();
    if (rec.contains("semantics") && !rec["semantics"].is_null()) {
      const auto& sem = rec["semantics"];
      if (sem.size() != sk.strokes.size())
        throw ParseError("semantics length does not match stroke count");
      for (std::size_t j = 0; j < sem.size(); ++j) sk.strokes[j].semantic_label = sem[j].get<int>();
    }
    if (rec.contains("source_id") && rec["source_id"].is_string())
      sk.source_id = rec["source_id"].get<std::string>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad sketch record field: ") + e.what());
  }
  return sk;
}

std::vector<Sketch> read_ndjson(std::istream& in) {
  std::vector<Sketch> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_ndjson_line(line));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Sketch> read_ndjson_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  return read_ndjson(in);
}

void write_ndjson(std::ostream& out, const std::vector<Sketch>& sketches) {
  for (const auto& s : sketches) out << to_ndjson_line(s) << '\n';
}

void write_ndjson_file(const std::string& path, const std::vector<Sketch>& sketches) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path);
  write_ndjson(out, sketches);
}

}  // namespace sketchime
