#include "sketchime/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "sketchime/errors.hpp"

namespace sketchime {

std::uint64_t record_hash(const Sketch& sketch) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : to_ndjson_line(sketch)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

Sample prepare_sample(const Sketch& sketch, const ModelConfig& config) {
  Sample s;
  s.hash = record_hash(sketch);
  s.source_id = sketch.source_id;
  s.category = sketch.category.value_or(-1);
  const Sketch norm = normalize(clean(sketch));
  s.rs = resample(norm, config.point_count);
  s.semantic = s.rs.point_semantic;
  s.img = rasterize(s.rs, config.render());
  return s;
}

std::vector<Sample> prepare_dataset(const std::vector<Sketch>& sketches, const ModelConfig& config) {
  std::vector<Sample> out;
  out.reserve(sketches.size());
  for (std::size_t i = 0; i < sketches.size(); ++i) {
    try {
      out.push_back(prepare_sample(sketches[i], config));
    } catch (const NumericError& e) {
      throw NumericError("record " + std::to_string(i) + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError("record " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

std::string manifest_digest(const std::vector<Sample>& samples) {
  std::vector<std::uint64_t> hashes;
  hashes.reserve(samples.size());
  for (const auto& s : samples) hashes.push_back(s.hash);
  std::sort(hashes.begin(), hashes.end());
  std::uint64_t h = 1469598103934665603ull;
  for (std::uint64_t v : hashes)
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xff;
      h *= 1099511628211ull;
    }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void validate_labels(const std::vector<Sample>& samples, const KnowledgeMatrix& km, bool require_semantics) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::string where = "record " + std::to_string(i);
    if (s.category < 0 || s.category >= km.num_categories())
      throw LabelError(where + ": category " + std::to_string(s.category) + " is outside the knowledge matrix");
    if (s.semantic.empty() && !require_semantics) continue;
    if (s.semantic.size() != s.rs.size()) throw LabelError(where + ": missing semantic labels");
    for (int c : s.semantic) {
      if (c < 0 || c >= km.num_components())
        throw LabelError(where + ": component " + std::to_string(c) + " is outside the knowledge matrix");
      if (!km.contains(s.category, c))
        throw LabelError(where + ": component " + std::to_string(c) + " is not part of category " +
                         std::to_string(s.category));
    }
  }
}

void split_per_class(const std::vector<Sketch>& all, int per_class_train, std::vector<Sketch>& train,
                     std::vector<Sketch>& test) {
  std::map<int, int> seen;
  for (const auto& s : all) {
    const int c = s.category.value_or(-1);
    if (seen[c]++ < per_class_train) {
      train.push_back(s);
    } else {
      test.push_back(s);
    }
  }
}

}  // namespace sketchime
