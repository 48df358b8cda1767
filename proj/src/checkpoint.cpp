#include "sketchime/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sketchime/errors.hpp"

namespace sketchime {

namespace {

constexpr char kMagic[8] = {'S', 'K', 'I', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError(path + ": truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state, const KnowledgeMatrix& km) {
  nlohmann::json header;
  header["config"] = state.config;
  std::ostringstream meta;
  write_knowledge_metadata(meta, km);
  header["knowledge"] = meta.str();
  header["gamma_r"] = km.gamma_r;
  auto params = nlohmann::json::array();
  for (const auto& [name, var] : state.params) params.push_back({{"name", name}, {"rows", var.rows()}, {"cols", var.cols()}});
  header["params"] = params;
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path);
    out.write(kMagic, sizeof kMagic);
    put(out, kVersion);
    put(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, var] : state.params)
      out.write(reinterpret_cast<const char*>(var.value().data()),
                static_cast<std::streamsize>(var.value().size() * sizeof(double)));
    if (!out.flush()) throw Error("cannot write checkpoint " + path);
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw ParseError(path + ": not a checkpoint");
  if (const auto v = get<std::uint32_t>(in, path); v != kVersion)
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(v));
  const auto len = get<std::uint64_t>(in, path);
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw ParseError(path + ": truncated header");

  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(text);
    ck.state.config = header.at("config").get<ModelConfig>();
    std::istringstream meta(header.at("knowledge").get<std::string>());
    ck.km = read_knowledge_metadata(meta, header.at("gamma_r").get<double>());
    for (const auto& p : header.at("params")) {
      Matrix m(p.at("rows").get<Eigen::Index>(), p.at("cols").get<Eigen::Index>());
      if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
        throw ParseError(path + ": truncated parameter data");
      ck.state.params.emplace_back(p.at("name").get<std::string>(), ag::parameter(std::move(m)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad checkpoint header: " + e.what());
  }
  return ck;
}

}  // namespace sketchime
