#include "sketchime/spg.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "sketchime/errors.hpp"
#include "sketchime/svg.hpp"

namespace sketchime {

namespace fs = std::filesystem;

KnowledgeMatrix SpgDataset::knowledge(double gamma_r) const {
  KnowledgeMatrix km =
      build_knowledge_matrix(category_components, gamma_r, static_cast<int>(component_names.size()));
  km.category_names = category_names;
  km.component_names = component_names;
  return km;
}

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ImportError("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct RawRecord {
  std::string id;
  int category = 0;
  SvgParts parts;
};

}  // namespace

SpgDataset import_spg(const std::string& root, const SpgImportOptions& options) {
  if (!fs::is_directory(root)) throw ImportError("SPG root " + root + " is not a directory");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (!options.categories.empty()) {
    for (const auto& want : options.categories)
      if (!std::binary_search(names.begin(), names.end(), want))
        throw ImportError("SPG category " + want + " not found under " + root);
    std::vector<std::string> picked = options.categories;
    std::sort(picked.begin(), picked.end());
    picked.erase(std::unique(picked.begin(), picked.end()), picked.end());
    names = picked;
  }
  if (options.max_categories < 0) throw ConfigError("max_categories must be >= 0");
  if (options.max_categories > 0 && static_cast<int>(names.size()) > options.max_categories)
    names.resize(static_cast<std::size_t>(options.max_categories));
  if (names.empty()) throw ImportError("no SPG categories under " + root);

  std::vector<RawRecord> raw;
  std::set<std::string> vocab;
  for (std::size_t c = 0; c < names.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(fs::path(root) / names[c]))
      if (e.is_regular_file() && e.path().extension() == ".svg") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      RawRecord r;
      r.id = names[c] + "/" + f.filename().string();
      r.category = static_cast<int>(c);
      try {
        r.parts = parse_svg_parts(read_file(f), options.part_attribute);
      } catch (const Error& e) {
        throw ImportError("record " + r.id + ": " + e.what());
      }
      for (std::size_t i = 0; i < r.parts.parts.size(); ++i) {
        if (r.parts.parts[i].empty())
          throw ImportError("record " + r.id + ": stroke " + std::to_string(i) + " has no " +
                            options.part_attribute + " label");
        vocab.insert(r.parts.parts[i]);
      }
      raw.push_back(std::move(r));
    }
  }

  SpgDataset out;
  out.category_names = names;
  out.component_names.assign(vocab.begin(), vocab.end());
  std::map<std::string, int> id_of;
  for (std::size_t i = 0; i < out.component_names.size(); ++i) id_of[out.component_names[i]] = static_cast<int>(i);
  std::vector<std::set<int>> used(names.size());
  for (auto& r : raw) {
    Sketch s = std::move(r.parts.sketch);
    s.category = r.category;
    s.source_id = r.id;
    for (std::size_t i = 0; i < s.strokes.size(); ++i) {
      const int comp = id_of.at(r.parts.parts[i]);
      s.strokes[i].semantic_label = comp;
      used[static_cast<std::size_t>(r.category)].insert(comp);
    }
    out.sketches.push_back(std::move(s));
  }
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (used[c].empty()) throw ImportError("SPG category " + names[c] + " has no sketches");
    out.category_components[static_cast<int>(c)].assign(used[c].begin(), used[c].end());
  }
  return out;
}

void export_spg(const SpgDataset& data, const std::string& root, const std::string& part_attribute) {
  char buf[64];
  std::map<std::string, int> counter;
  for (const auto& s : data.sketches) {
    if (!s.category || *s.category < 0 || *s.category >= static_cast<int>(data.category_names.size()))
      throw ConfigError("export_spg: sketch without a valid category");
    const std::string& cat = data.category_names[static_cast<std::size_t>(*s.category)];
    std::string file = s.source_id;
    const auto slash = file.rfind('/');
    if (slash != std::string::npos) file = file.substr(slash + 1);
    if (file.empty()) file = std::to_string(counter[cat]++) + ".svg";
    const fs::path dir = fs::path(root) / cat;
    fs::create_directories(dir);
    std::ofstream out(dir / file);
    if (!out) throw ImportError("cannot write " + (dir / file).string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\">\n";
    for (const auto& st : s.strokes) {
      if (!st.semantic_label || *st.semantic_label < 0 ||
          *st.semantic_label >= static_cast<int>(data.component_names.size()))
        throw ConfigError("export_spg: stroke without a valid part label in " + s.source_id);
      out << "  <path " << part_attribute << "=\"" << data.component_names[static_cast<std::size_t>(*st.semantic_label)]
          << "\" d=\"";
      for (std::size_t i = 0; i < st.points.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%c%.17g %.17g", i == 0 ? 'M' : 'L', st.points[i].x, st.points[i].y);
        out << (i ? " " : "") << buf;
      }
      out << "\"/>\n";
    }
    out << "</svg>\n";
  }
}

}  // namespace sketchime
