#include "sketchime/knowledge.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "sketchime/errors.hpp"

namespace sketchime {

using nlohmann::json;

std::vector<int> KnowledgeMatrix::components_of(int category) const {
  std::vector<int> out;
  for (int j = 0; j < num_components(); ++j)
    if (contains(category, j)) out.push_back(j);
  return out;
}

KnowledgeMatrix KnowledgeMatrix::restrict_to(const std::vector<int>& categories,
                                             const std::vector<int>& components) const {
  KnowledgeMatrix km;
  km.gamma_r = gamma_r;
  km.c_r2s.resize(static_cast<Eigen::Index>(categories.size()), static_cast<Eigen::Index>(components.size()));
  for (std::size_t i = 0; i < categories.size(); ++i)
    for (std::size_t j = 0; j < components.size(); ++j)
      km.c_r2s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c_r2s(categories[i], components[j]);
  for (int c : categories)
    km.category_names.push_back(c < static_cast<int>(category_names.size()) ? category_names[c] : "");
  for (int s : components)
    km.component_names.push_back(s < static_cast<int>(component_names.size()) ? component_names[s] : "");
  return km;
}

KnowledgeMatrix build_knowledge_matrix(const std::map<int, std::vector<int>>& category_components, double gamma_r,
                                       int num_components) {
  if (category_components.empty()) throw ConfigError("empty category-to-component mapping");
  if (!(gamma_r > 0.5 && gamma_r <= 1.0)) throw ConfigError("gamma_r must lie in (0.5, 1]");
  const int num_categories = category_components.rbegin()->first + 1;
  if (category_components.begin()->first != 0 || static_cast<int>(category_components.size()) != num_categories)
    throw ConfigError("category ids must be contiguous from 0");
  int max_component = -1;
  for (const auto& [cat, comps] : category_components) {
    if (comps.empty()) throw ConfigError("category " + std::to_string(cat) + " has no components");
    for (int c : comps) {
      if (c < 0) throw ConfigError("negative component id");
      max_component = std::max(max_component, c);
    }
  }
  if (num_components < 0) num_components = max_component + 1;
  if (max_component >= num_components)
    throw ConfigError("component id " + std::to_string(max_component) + " exceeds C_S");

  KnowledgeMatrix km;
  km.gamma_r = gamma_r;
  km.c_r2s = Matrix::Constant(num_categories, num_components, 1.0 - gamma_r);
  for (const auto& [cat, comps] : category_components)
    for (int c : comps) km.c_r2s(cat, c) = gamma_r;
  km.category_names.assign(num_categories, "");
  km.component_names.assign(num_components, "");
  return km;
}

KnowledgeMatrix read_knowledge_metadata(std::istream& in, double gamma_r) {
  std::map<int, std::vector<int>> mapping;
  std::map<int, std::string> cat_names, comp_names;
  int num_components = -1;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json rec = json::parse(line);
      if (rec.contains("category")) {
        const int cat = rec.at("category").get<int>();
        if (mapping.count(cat)) throw ConfigError("duplicate category " + std::to_string(cat));
        mapping[cat] = rec.at("components").get<std::vector<int>>();
        if (rec.contains("name")) cat_names[cat] = rec["name"].get<std::string>();
      } else if (rec.contains("component")) {
        comp_names[rec.at("component").get<int>()] = rec.value("name", "");
      } else if (rec.contains("num_components")) {
        num_components = rec["num_components"].get<int>();
      }
    } catch (const json::exception& e) {
      throw ParseError("knowledge metadata line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  KnowledgeMatrix km = build_knowledge_matrix(mapping, gamma_r, num_components);
  for (const auto& [c, n] : cat_names) km.category_names[c] = n;
  for (const auto& [c, n] : comp_names)
    if (c < km.num_components()) km.component_names[c] = n;
  return km;
}

KnowledgeMatrix load_knowledge_metadata(const std::string& path, double gamma_r) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open knowledge metadata " + path);
  return read_knowledge_metadata(in, gamma_r);
}

void write_knowledge_metadata(std::ostream& out, const KnowledgeMatrix& km) {
  out << json{{"num_components", km.num_components()}}.dump() << '\n';
  for (int i = 0; i < km.num_categories(); ++i) {
    json rec{{"category", i}, {"components", km.components_of(i)}};
    if (i < static_cast<int>(km.category_names.size()) && !km.category_names[i].empty())
      rec["name"] = km.category_names[i];
    out << rec.dump() << '\n';
  }
  for (int j = 0; j < km.num_components(); ++j)
    if (j < static_cast<int>(km.component_names.size()) && !km.component_names[j].empty())
      out << json{{"component", j}, {"name", km.component_names[j]}}.dump() << '\n';
}

}  // namespace sketchime
