#include "c3r/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#ifndef C3R_GIT_HASH
#define C3R_GIT_HASH "unknown"
#endif

namespace c3r {
namespace {

constexpr std::array<char, 8> kMagic{'C', '3', 'R', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& f, const std::string& path) {
  T v{};
  if (!f.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("truncated checkpoint " + path);
  return v;
}

}  // namespace

std::string build_git_hash() { return C3R_GIT_HASH; }

void save_checkpoint(const std::string& path, const Encoder& encoder, const Provenance& prov) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["schema"] = encoder.schema().serialize();
  header["encoder"] = to_json(encoder.config());
  header["provenance"] = {{"git_hash", prov.git_hash}, {"seed", prov.seed}, {"epoch", prov.epoch},
                          {"step", prov.step},         {"extra", prov.extra}};
  auto& index = header["tensors"] = nlohmann::json::array();
  int64_t offset = 0;
  const auto& ps = encoder.params();
  for (size_t i = 0; i < ps.size(); ++i) {
    const auto& t = ps.vars()[i]->value;
    index.push_back({{"name", ps.names()[i]}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const std::string text = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write checkpoint " + path);
  f.write(kMagic.data(), kMagic.size());
  write_pod<uint32_t>(f, kCheckpointVersion);
  write_pod<uint64_t>(f, text.size());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& v : ps.vars())
    f.write(reinterpret_cast<const char*>(v->value.data()), static_cast<std::streamsize>(v->value.numel() * sizeof(double)));
  if (!f) throw Error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint " + path);
  std::array<char, 8> magic{};
  if (!f.read(magic.data(), magic.size()) || magic != kMagic) throw ConfigError(path + " is not a c3r checkpoint");
  const auto version = read_pod<uint32_t>(f, path);
  if (version != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  const auto len = read_pod<uint64_t>(f, path);
  std::string text(len, '\0');
  if (!f.read(text.data(), static_cast<std::streamsize>(len))) throw Error("truncated checkpoint header " + path);
  const auto header = nlohmann::json::parse(text);

  Checkpoint ck;
  ck.schema = parse_schema(header.at("schema").get<std::string>());
  ck.config = encoder_config_from_json(header.at("encoder"));
  const auto& p = header.at("provenance");
  ck.provenance.git_hash = p.at("git_hash").get<std::string>();
  ck.provenance.seed = p.at("seed").get<uint64_t>();
  ck.provenance.epoch = p.at("epoch").get<int64_t>();
  ck.provenance.step = p.at("step").get<int64_t>();
  ck.provenance.extra = p.at("extra");
  for (const auto& entry : header.at("tensors")) {
    Tensor t(entry.at("shape").get<Shape>());
    if (!f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double))))
      throw Error("truncated tensor data in " + path);
    ck.params.add(entry.at("name").get<std::string>(), std::move(t));
  }
  // Validates names and shapes against the config.
  (void)ck.encoder();
  return ck;
}

}  // namespace c3r
