#pragma once

// Single-file checkpoint archive:
//   bytes 0..7   magic "C3RCKPT\0"
//   u32          format version
//   u64          header length L
//   L bytes      JSON header: schema manifest, encoder config, provenance,
//                tensor index (name, shape, element offset)
//   payload      float64 little-endian tensor data in index order

#include <cstdint>
#include <string>

#include "c3r/encoder.hpp"

namespace c3r {

constexpr uint32_t kCheckpointVersion = 1;

struct Provenance {
  std::string git_hash;
  uint64_t seed = 0;
  int64_t epoch = 0;
  int64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();
};

struct Checkpoint {
  GroupSchema schema;
  EncoderConfig config;
  ParamStore params;
  Provenance provenance;

  Encoder encoder() const { return Encoder(config, schema, params); }
};

/// Git revision the library was built from ("unknown" outside a checkout).
std::string build_git_hash();

void save_checkpoint(const std::string& path, const Encoder& encoder, const Provenance& provenance);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace c3r
