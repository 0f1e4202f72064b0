#pragma once

// Experiment commands behind the `c3r` tool. Each command reads a JSON
// config (unknown keys rejected), writes its artifacts plus the resolved
// config under `out`, and returns a JSON summary.

#include <optional>
#include <string>
#include <vector>

#include "c3r/encoder.hpp"
#include "c3r/trainer.hpp"
#include "json.hpp"

namespace c3r::app {

struct RunOptions {
  std::string out;
  std::optional<uint64_t> seed;
};

/// Component toggles: grouped stem, instance norm, branches, masked context distillation.
struct Ablation {
  bool gc = true;
  bool in = true;
  bool b = true;
  bool mcd = true;

  void validate() const;
  std::string label() const;
};

/// Encoder and drop policy implied by the toggles. `encoder_overrides` may
/// set any encoder key explicitly.
struct ResolvedModel {
  EncoderConfig encoder;
  DropPolicy drop;
};
ResolvedModel resolve_model(const Ablation& ablation, const nlohmann::json& encoder_overrides, int baseline_depth,
                            bool normalize_depth, const GroupSchema& schema, const DropPolicy& requested_drop);

nlohmann::json cmd_gen(const nlohmann::json& config, const RunOptions& opts);
nlohmann::json cmd_train(const nlohmann::json& config, const RunOptions& opts);
nlohmann::json cmd_embed(const nlohmann::json& config, const RunOptions& opts);
nlohmann::json cmd_eval(const nlohmann::json& config, const RunOptions& opts);
nlohmann::json cmd_analyze(const nlohmann::json& config, const RunOptions& opts);
/// Renders every recognised metrics file into PNGs under opts.out.
nlohmann::json cmd_plot(const std::vector<std::string>& files, const RunOptions& opts);

/// Exit codes.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

/// Entry point of the command-line tool.
int run_cli(int argc, char** argv);

}  // namespace c3r::app
