#include "c3r/app.hpp"

#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "c3r/channel_stats.hpp"
#include "c3r/checkpoint.hpp"
#include "c3r/eval.hpp"
#include "c3r/json_util.hpp"
#include "c3r/plot.hpp"
#include "c3r/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace c3r::app {
namespace {

void write_json(const fs::path& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

fs::path prepare_out(const RunOptions& opts) {
  if (opts.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(opts.out);
  return fs::path(opts.out);
}

uint64_t resolve_seed(const json& cfg, const RunOptions& opts, uint64_t fallback = 0) {
  if (opts.seed) return *opts.seed;
  uint64_t s = fallback;
  read_opt(cfg, "seed", s, "config");
  return s;
}

std::vector<std::string> string_list(const json& cfg, const char* key, const std::string& sec) {
  std::vector<std::string> v;
  read_opt(cfg, key, v, sec);
  return v;
}

EmbedOptions embed_options(const json& cfg, const std::string& sec) {
  EmbedOptions o;
  o.drop = string_list(cfg, "drop", sec);
  read_opt(cfg, "flip", o.flip, sec);
  read_opt(cfg, "ood", o.ood, sec);
  read_opt(cfg, "batch_size", o.batch_size, sec);
  return o;
}

json retrieval_json(const RetrievalResult& r) {
  return {{"map", r.map}, {"knn_accuracy", r.knn_accuracy}, {"k", r.k}, {"queries", r.queries}};
}

std::vector<EmbeddingRecord> to_level(const std::vector<EmbeddingRecord>& cells, Level level) {
  if (level == Level::Cell) return cells;
  auto fov = aggregate(cells, Level::FoV);
  return level == Level::FoV ? fov : aggregate(fov, Level::Well);
}

}  // namespace

void Ablation::validate() const {
  if (!gc && (in || b || mcd)) throw ConfigError("ablation: in, b and mcd require gc (grouped stem)");
}

std::string Ablation::label() const {
  if (!gc) return "baseline";
  std::string s = "+GC";
  if (in) s += "+IN";
  if (b) s += "+B";
  if (mcd) s += "+MCD";
  return s;
}

ResolvedModel resolve_model(const Ablation& ab, const json& overrides, int baseline_depth, bool normalize_depth,
                            const GroupSchema& schema, const DropPolicy& requested_drop) {
  ab.validate();
  if (!overrides.is_null() && !overrides.is_object()) throw ConfigError("encoder: expected an object");
  for (const char* k : {"arch", "instance_norm", "in_channels"})
    if (overrides.contains(k)) throw ConfigError(std::string("encoder.") + k + " is derived from the ablation toggles and dataset");
  if (baseline_depth < 1) throw ConfigError("baseline_depth must be >= 1");

  json j = to_json(EncoderConfig{});
  if (overrides.is_object())
    for (const auto& [k, v] : overrides.items()) j[k] = v;
  j["arch"] = ab.gc ? "cce" : "baseline";
  j["instance_norm"] = ab.in;
  j["in_channels"] = schema.total();
  if (!overrides.contains("aggregation")) j["aggregation"] = ab.mcd ? "post" : "pre";
  if (!ab.b) {
    if (overrides.contains("branch_depth") && overrides["branch_depth"] != 0)
      throw ConfigError("encoder.branch_depth must be 0 when ablation.b is off");
    j["branch_depth"] = 0;
  } else if (j["branch_depth"] == 0) {
    throw ConfigError("ablation.b requires encoder.branch_depth >= 1");
  }
  if (!ab.gc) {
    j["branch_depth"] = 0;
    j["shared_depth"] = baseline_depth;
  }
  ResolvedModel r;
  r.encoder = encoder_config_from_json(j);
  if (ab.gc && normalize_depth) {
    const int depth = normalized_shared_depth(baseline_depth, r.encoder);
    if (depth < 1) throw ConfigError("no shared depth fits the parameter budget of the baseline");
    r.encoder.shared_depth = depth;
  }
  if (ab.mcd) {
    if (requested_drop.mode == DropMode::None) {
      if (schema.num_context() < 2) throw ConfigError("ablation.mcd needs at least two context channels");
      r.drop = {DropMode::UniformStudent, schema.num_context() - 1};
    } else {
      r.drop = requested_drop;
    }
  } else if (requested_drop.mode != DropMode::None) {
    throw ConfigError("train.drop is set but ablation.mcd is off");
  }
  r.drop.validate(schema.num_context());
  return r;
}

json cmd_gen(const json& config, const RunOptions& opts) {
  reject_unknown_keys(config, {"synth", "seed"}, "gen");
  SynthConfig cfg = config.contains("synth") ? synth_config_from_json(config["synth"]) : SynthConfig{};
  cfg.seed = resolve_seed(config, opts, cfg.seed);
  const auto out = prepare_out(opts);
  const Dataset data = generate(cfg);
  write_dataset(data, out.string());
  const json resolved = {{"command", "gen"}, {"synth", to_json(cfg)}, {"seed", cfg.seed}};
  write_json(out / "config.json", resolved);
  return {{"samples", data.size()}, {"channels", data.schema.total()}, {"out", out.string()}};
}

json cmd_train(const json& config, const RunOptions& opts) {
  reject_unknown_keys(config,
                      {"dataset", "ablation", "encoder", "baseline_depth", "normalize_depth", "train", "checkpoint_every", "seed"},
                      "train_run");
  std::string dataset_path;
  read_opt(config, "dataset", dataset_path, "train_run");
  if (dataset_path.empty()) throw ConfigError("train_run.dataset is required");
  Ablation ab;
  if (config.contains("ablation")) {
    const auto& a = config["ablation"];
    reject_unknown_keys(a, {"gc", "in", "b", "mcd"}, "ablation");
    read_opt(a, "gc", ab.gc, "ablation");
    read_opt(a, "in", ab.in, "ablation");
    read_opt(a, "b", ab.b, "ablation");
    read_opt(a, "mcd", ab.mcd, "ablation");
  }
  int baseline_depth = 3;
  bool normalize_depth = true;
  int64_t checkpoint_every = 0;
  read_opt(config, "baseline_depth", baseline_depth, "train_run");
  read_opt(config, "normalize_depth", normalize_depth, "train_run");
  read_opt(config, "checkpoint_every", checkpoint_every, "train_run");
  TrainConfig tc = config.contains("train") ? train_config_from_json(config["train"]) : TrainConfig{};
  tc.seed = resolve_seed(config, opts, tc.seed);

  const Dataset data = load_dataset(dataset_path);
  const auto model = resolve_model(ab, config.value("encoder", json()), baseline_depth, normalize_depth, data.schema, tc.drop);
  tc.drop = model.drop;
  tc.validate(data.schema, model.encoder);

  const auto out = prepare_out(opts);
  const auto params = count_parameters(model.encoder);
  const auto baseline = count_parameters(baseline_config(model.encoder, baseline_depth));
  const json resolved = {{"command", "train"},
                         {"dataset", dataset_path},
                         {"ablation", {{"gc", ab.gc}, {"in", ab.in}, {"b", ab.b}, {"mcd", ab.mcd}, {"label", ab.label()}}},
                         {"encoder", to_json(model.encoder)},
                         {"baseline_depth", baseline_depth},
                         {"normalize_depth", normalize_depth},
                         {"train", to_json(tc)},
                         {"checkpoint_every", checkpoint_every},
                         {"seed", tc.seed}};
  write_json(out / "config.json", resolved);
  save_schema(data.schema, (out / "manifest").string());

  const Encoder init(model.encoder, data.schema, tc.seed);
  std::ofstream metrics(out / "metrics.jsonl");
  auto provenance = [&](int64_t step) {
    Provenance p;
    p.git_hash = build_git_hash();
    p.seed = tc.seed;
    p.step = step;
    p.epoch = step * tc.batch_groups * tc.per_group / std::max<int64_t>(1, data.size());
    p.extra = {{"ablation", ab.label()}, {"weights", "teacher"}};
    return p;
  };
  const auto t0 = std::chrono::steady_clock::now();
  double first_loss = 0, last_loss = 0;
  const Trainer trainer = train(data, init, tc, [&](const StepMetrics& m, const Trainer& tr) {
    metrics << m.to_json().dump() << '\n';
    if (m.step == 0) first_loss = m.loss;
    last_loss = m.loss;
    if (checkpoint_every > 0 && (m.step + 1) % checkpoint_every == 0 && m.step + 1 < tc.steps)
      save_checkpoint((out / ("checkpoint_step" + std::to_string(m.step + 1) + ".c3r")).string(), tr.state().teacher,
                      provenance(m.step + 1));
  });
  metrics.flush();
  save_checkpoint((out / "checkpoint.c3r").string(), trainer.state().teacher, provenance(tc.steps));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {{"steps", tc.steps},
          {"first_loss", first_loss},
          {"final_loss", last_loss},
          {"parameters", params.total()},
          {"baseline_parameters", baseline.total()},
          {"shared_depth", model.encoder.shared_depth},
          {"seconds", secs},
          {"checkpoint", (out / "checkpoint.c3r").string()}};
}

json cmd_embed(const json& config, const RunOptions& opts) {
  reject_unknown_keys(config, {"checkpoint", "dataset", "drop", "flip", "ood", "batch_size", "level", "seed"}, "embed");
  std::string ckpt, dataset_path, level = "cell";
  read_opt(config, "checkpoint", ckpt, "embed");
  read_opt(config, "dataset", dataset_path, "embed");
  read_opt(config, "level", level, "embed");
  if (ckpt.empty() || dataset_path.empty()) throw ConfigError("embed.checkpoint and embed.dataset are required");
  const auto eo = embed_options(config, "embed");
  const auto lvl = parse_level(level);
  const auto out = prepare_out(opts);
  json resolved = config;
  resolved["command"] = "embed";
  resolved["seed"] = resolve_seed(config, opts);
  write_json(out / "config.json", resolved);

  const auto model = load_checkpoint(ckpt).encoder();
  const auto records = to_level(embed_dataset(model, load_dataset(dataset_path), eo), lvl);
  write_embeddings_csv(records, (out / "embeddings.csv").string());
  return {{"records", records.size()}, {"dim", records.empty() ? 0 : records.front().vector.size()},
          {"embeddings", (out / "embeddings.csv").string()}};
}

json cmd_eval(const json& config, const RunOptions& opts) {
  const std::string sec = "eval";
  reject_unknown_keys(config,
                      {"checkpoint", "dataset", "embeddings", "tasks", "drop", "flip", "ood", "batch_size", "k",
                       "retrieval_level", "postprocess", "probe", "cosine", "limited_context", "probe_split", "seed"},
                      sec);
  std::string ckpt, dataset_path, emb_path, level = "well";
  read_opt(config, "checkpoint", ckpt, sec);
  read_opt(config, "dataset", dataset_path, sec);
  read_opt(config, "embeddings", emb_path, sec);
  read_opt(config, "retrieval_level", level, sec);
  std::vector<std::string> tasks = {"probe", "retrieval"};
  read_opt(config, "tasks", tasks, sec);
  int k = 5;
  bool postprocess = true;
  double probe_split = 0.5;
  read_opt(config, "k", k, sec);
  read_opt(config, "postprocess", postprocess, sec);
  read_opt(config, "probe_split", probe_split, sec);
  const uint64_t seed = resolve_seed(config, opts);
  const auto eo = embed_options(config, sec);
  const auto lvl = parse_level(level);

  ProbeConfig pc;
  pc.seed = seed;
  if (config.contains("probe")) {
    const auto& p = config["probe"];
    reject_unknown_keys(p, {"hidden_dim", "max_epochs", "patience", "batch_size", "lr"}, "eval.probe");
    read_opt(p, "hidden_dim", pc.hidden_dim, "eval.probe");
    read_opt(p, "max_epochs", pc.max_epochs, "eval.probe");
    read_opt(p, "patience", pc.patience, "eval.probe");
    read_opt(p, "batch_size", pc.batch_size, "eval.probe");
    read_opt(p, "lr", pc.lr, "eval.probe");
  }
  std::vector<int> drop_counts = {1, 2};
  int cosine_samples = 128;
  if (config.contains("cosine")) {
    const auto& c = config["cosine"];
    reject_unknown_keys(c, {"drop_counts", "max_samples"}, "eval.cosine");
    read_opt(c, "drop_counts", drop_counts, "eval.cosine");
    read_opt(c, "max_samples", cosine_samples, "eval.cosine");
  }
  // "full": one probe fit on full-context embeddings scores every drop
  // setting; "dropped": a probe is refit under each setting.
  std::string probe_fit = "full";
  if (config.contains("limited_context")) {
    reject_unknown_keys(config["limited_context"], {"probe_fit"}, "eval.limited_context");
    read_opt(config["limited_context"], "probe_fit", probe_fit, "eval.limited_context");
    if (probe_fit != "full" && probe_fit != "dropped")
      throw ConfigError("eval.limited_context.probe_fit must be 'full' or 'dropped', got '" + probe_fit + "'");
  }
  for (const auto& t : tasks)
    if (t != "probe" && t != "retrieval" && t != "cosine" && t != "limited_context")
      throw ConfigError("eval.tasks: unknown task '" + t + "'");
  auto wants = [&](const char* t) { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); };

  const auto out = prepare_out(opts);
  json resolved = config;
  resolved["command"] = "eval";
  resolved["seed"] = seed;
  write_json(out / "config.json", resolved);

  json report = {{"tasks", tasks}};
  std::ofstream metrics(out / "metrics.jsonl");
  auto emit = [&](const std::string& task, json rec) {
    rec["task"] = task;
    metrics << rec.dump() << '\n';
    report[task] = rec;
  };

  auto run_retrieval = [&](const std::vector<EmbeddingRecord>& cells) {
    const auto recs = to_level(cells, lvl);
    json r;
    if (postprocess) {
      const auto sel = select_postprocess(recs, k);
      r = retrieval_json(sel.best_result);
      r["postprocess"] = sel.best.name();
    } else {
      r = retrieval_json(retrieval_eval(recs, k));
      r["postprocess"] = "none+none";
    }
    r["level"] = std::string(to_string(lvl));
    return r;
  };

  if (!emb_path.empty()) {
    if (wants("cosine") || wants("limited_context")) throw ConfigError("eval: cosine and limited_context need a checkpoint, not embeddings");
    auto cells = read_embeddings_csv(emb_path);
    if (wants("retrieval")) emit("retrieval", run_retrieval(cells));
    if (wants("probe")) throw ConfigError("eval: probe needs a checkpoint and dataset");
  } else {
    if (ckpt.empty() || dataset_path.empty()) throw ConfigError("eval.checkpoint and eval.dataset are required");
    const auto model = load_checkpoint(ckpt).encoder();
    const Dataset data = load_dataset(dataset_path);
    const auto [probe_train, probe_val] = split_by_group(data, probe_split, seed);
    auto probe_with = [&](const EmbedOptions& o) {
      const auto r = linear_probe(embed_dataset(model, probe_train, o), embed_dataset(model, probe_val, o), pc);
      return json{{"map", r.macro_map}, {"best_epoch", r.best_epoch}, {"excluded_labels", r.excluded_labels}};
    };
    if (wants("probe")) emit("probe", probe_with(eo));
    if (wants("retrieval")) emit("retrieval", run_retrieval(embed_dataset(model, data, eo)));
    if (wants("cosine")) {
      std::vector<int> idx;
      for (int i = 0; i < std::min<int>(cosine_samples, static_cast<int>(data.size())); ++i) idx.push_back(i);
      json rows = json::array();
      for (const auto& d : cosine_diagnostic(model, data.subset(idx), drop_counts))
        rows.push_back({{"drop", d.drop_count},
                        {"median_intermediate", d.median_intermediate()},
                        {"median_final", d.median_final()},
                        {"intermediate", d.intermediate},
                        {"final", d.final_cls}});
      emit("cosine", {{"rows", rows}});
    }
    if (wants("limited_context")) {
      json rows = json::array();
      EmbedOptions full = eo;
      full.drop.clear();
      const auto names = data.schema.context_names();
      auto dropping = [&](const std::string& name) {
        EmbedOptions o = eo;
        o.drop = {name};
        return o;
      };
      double full_probe = 0;
      std::vector<double> dropped_probe;
      if (probe_fit == "full") {
        std::vector<std::vector<EmbeddingRecord>> transfer;
        for (const auto& name : names) transfer.push_back(embed_dataset(model, probe_val, dropping(name)));
        const auto r = linear_probe(embed_dataset(model, probe_train, full), embed_dataset(model, probe_val, full), pc, transfer);
        full_probe = r.macro_map;
        dropped_probe = r.transfer_map;
      } else {
        full_probe = probe_with(full)["map"];
        for (const auto& name : names) dropped_probe.push_back(probe_with(dropping(name))["map"]);
      }
      const double full_ret = run_retrieval(embed_dataset(model, data, full))["map"];
      rows.push_back({{"setting", "full"}, {"probe_map", full_probe}, {"retrieval_map", full_ret}});
      double sp = 0, sr = 0;
      for (size_t i = 0; i < names.size(); ++i) {
        const auto& name = names[i];
        const double p = dropped_probe[i];
        const double r = run_retrieval(embed_dataset(model, data, dropping(name)))["map"];
        rows.push_back({{"setting", "-[" + name + "]"}, {"probe_map", p}, {"retrieval_map", r}});
        sp += p;
        sr += r;
      }
      const double n = static_cast<double>(data.schema.num_context());
      rows.push_back({{"setting", "average"},
                      {"probe_map", sp / n},
                      {"retrieval_map", sr / n},
                      {"probe_delta", sp / n - full_probe},
                      {"retrieval_delta", sr / n - full_ret}});
      emit("limited_context", {{"rows", rows}, {"probe_fit", probe_fit}});
    }
  }
  write_json(out / "report.json", report);
  return report;
}

json cmd_analyze(const json& config, const RunOptions& opts) {
  const std::string sec = "analyze";
  reject_unknown_keys(config, {"dataset", "extractor", "n_per_channel", "k", "threshold", "suggest_manifest", "seed"}, sec);
  std::string dataset_path, suggest;
  read_opt(config, "dataset", dataset_path, sec);
  read_opt(config, "suggest_manifest", suggest, sec);
  if (dataset_path.empty()) throw ConfigError("analyze.dataset is required");
  int n_per_channel = 1000, k = 0;
  double threshold = 0.8;
  read_opt(config, "n_per_channel", n_per_channel, sec);
  read_opt(config, "k", k, sec);
  read_opt(config, "threshold", threshold, sec);
  const uint64_t seed = resolve_seed(config, opts);
  std::string ext_ckpt;
  int embed_dim = 64, patch = 8;
  if (config.contains("extractor")) {
    const auto& e = config["extractor"];
    reject_unknown_keys(e, {"checkpoint", "embed_dim", "patch_size"}, "analyze.extractor");
    read_opt(e, "checkpoint", ext_ckpt, "analyze.extractor");
    read_opt(e, "embed_dim", embed_dim, "analyze.extractor");
    read_opt(e, "patch_size", patch, "analyze.extractor");
  }
  const auto out = prepare_out(opts);
  json resolved = config;
  resolved["command"] = "analyze";
  resolved["seed"] = seed;
  write_json(out / "config.json", resolved);

  const Dataset data = load_dataset(dataset_path);
  const int C = data.schema.total();
  if (k == 0) k = C;
  const auto extractor = make_vit_extractor(ext_ckpt.empty()
                                                ? default_extractor_encoder(static_cast<int>(data.image_size()), patch, embed_dim, seed)
                                                : load_checkpoint(ext_ckpt).encoder());
  Rng rng(seed);
  std::vector<ChannelFeatures> feats;
  for (const auto& ch : data.schema.channels()) {
    std::vector<int> idx(static_cast<size_t>(data.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<size_t>(idx.size(), static_cast<size_t>(n_per_channel)));
    feats.push_back({ch.name, extract_channel_features(data, ch.name, extractor, idx)});
  }
  const auto assignment = cluster_and_assign(feats, k, seed);
  const auto report = emit_report(assignment.distributions, assignment.assigned_cluster, threshold);
  {
    std::ofstream t(out / "report.txt");
    t << report.table();
  }
  json rj = report.to_json();
  rj["k"] = k;
  write_json(out / "report.json", rj);
  std::cout << report.table();
  if (!suggest.empty()) {
    try {
      save_schema(report.suggested_schema(data.schema), suggest);
      rj["suggested_manifest"] = suggest;
    } catch (const ConfigError& e) {
      spdlog::warn("no suggested manifest written: {}", e.what());
    }
  }
  return rj;
}

json cmd_plot(const std::vector<std::string>& files, const RunOptions& opts) {
  if (files.empty()) throw ConfigError("plot: no input files");
  const auto out = prepare_out(opts);
  json written = json::array();
  for (const auto& file : files) {
    const auto stem = fs::path(file).parent_path().filename().string() + "_" + fs::path(file).stem().string();
    if (fs::path(file).extension() == ".jsonl") {
      std::ifstream f(file);
      if (!f) throw ConfigError("cannot open " + file);
      std::map<std::string, Series> series;
      for (std::string line; std::getline(f, line);) {
        if (line.empty()) continue;
        const auto rec = json::parse(line);
        if (!rec.contains("step")) continue;
        for (const char* key : {"loss", "loss_cls", "loss_patch", "loss_antibody"})
          if (rec.contains(key)) {
            auto& s = series[key];
            s.name = key;
            s.x.push_back(rec["step"].get<double>());
            s.y.push_back(rec[key].get<double>());
          }
      }
      if (series.empty()) continue;
      std::vector<Series> v;
      for (auto& [_, s] : series) v.push_back(std::move(s));
      const auto path = (out / (stem + "_curves.png")).string();
      plot_lines(path, "training losses", v);
      written.push_back(path);
      continue;
    }
    const json rep = read_json(file);
    std::vector<std::pair<std::string, double>> bars;
    if (rep.contains("probe")) bars.emplace_back("probe mAP", rep["probe"]["map"].get<double>());
    if (rep.contains("retrieval")) {
      bars.emplace_back("retr mAP", rep["retrieval"]["map"].get<double>());
      bars.emplace_back("kNN acc", rep["retrieval"]["knn_accuracy"].get<double>());
    }
    if (rep.contains("channels"))
      for (const auto& c : rep["channels"]) bars.emplace_back(c["channel"].get<std::string>(), c["parity"].get<double>());
    if (!bars.empty()) {
      const auto path = (out / (stem + "_bars.png")).string();
      plot_bars(path, rep.contains("channels") ? "channel parity" : "evaluation metrics", bars);
      written.push_back(path);
    }
    if (rep.contains("limited_context")) {
      std::vector<std::pair<std::string, double>> lc;
      for (const auto& r : rep["limited_context"]["rows"]) lc.emplace_back(r["setting"].get<std::string>(), r["probe_map"].get<double>());
      const auto path = (out / (stem + "_limited_context.png")).string();
      plot_bars(path, "probe mAP under limited context", lc);
      written.push_back(path);
    }
    if (rep.contains("cosine")) {
      std::vector<std::pair<std::string, std::vector<double>>> groups;
      for (const auto& r : rep["cosine"]["rows"]) {
        const auto d = std::to_string(r["drop"].get<int>());
        groups.emplace_back("mid drop " + d, r["intermediate"].get<std::vector<double>>());
        groups.emplace_back("cls drop " + d, r["final"].get<std::vector<double>>());
      }
      const auto path = (out / (stem + "_cosine.png")).string();
      plot_distributions(path, "full vs sparse cosine similarity", groups);
      written.push_back(path);
    }
  }
  write_json(out / "plots.json", written);
  return {{"written", written}};
}

int run_cli(int argc, char** argv) {
  CLI::App cli{"c3r: context-concept encoder experiments"};
  cli.require_subcommand(1);
  std::string config_path, out;
  std::optional<uint64_t> seed;
  std::vector<std::string> drop, files;
  bool flip = false, ood = false;
  std::string suggest;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "JSON config file");
    if (needs_config) opt->required();
    sub->add_option("--seed", seed, "Seed override");
    sub->add_option("--out", out, "Output directory")->required();
  };
  auto* gen = cli.add_subcommand("gen", "Generate a synthetic dataset");
  common(gen, false);
  auto* trn = cli.add_subcommand("train", "Train an encoder");
  common(trn, true);
  auto* emb = cli.add_subcommand("embed", "Embed a dataset with a checkpoint");
  common(emb, true);
  auto* evl = cli.add_subcommand("eval", "Probe, retrieval, cosine and limited-context evaluation");
  common(evl, true);
  for (auto* sub : {emb, evl}) {
    sub->add_option("--drop", drop, "Context channel to drop at inference (repeatable)");
    sub->add_flag("--flip", flip, "Route groups through each other's branch");
    sub->add_flag("--ood", ood, "One pass per concept channel, outputs concatenated");
  }
  auto* ana = cli.add_subcommand("analyze", "Channel parity/entropy analysis");
  common(ana, true);
  ana->add_option("--suggest-manifest", suggest, "Write a manifest with suggested roles");
  auto* plt = cli.add_subcommand("plot", "Render metrics files to PNG");
  plt->add_option("--out", out, "Output directory")->required();
  plt->add_option("files", files, "metrics.jsonl / report.json files")->required();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    json cfg = config_path.empty() ? json::object() : read_json(config_path);
    const RunOptions ro{out, seed};
    auto apply_inference_flags = [&] {
      if (!drop.empty()) cfg["drop"] = drop;
      if (flip) cfg["flip"] = true;
      if (ood) cfg["ood"] = true;
    };
    json result;
    if (gen->parsed()) result = cmd_gen(cfg, ro);
    else if (trn->parsed()) result = cmd_train(cfg, ro);
    else if (emb->parsed()) {
      apply_inference_flags();
      result = cmd_embed(cfg, ro);
    } else if (evl->parsed()) {
      apply_inference_flags();
      result = cmd_eval(cfg, ro);
    } else if (ana->parsed()) {
      if (!suggest.empty()) cfg["suggest_manifest"] = suggest;
      result = cmd_analyze(cfg, ro);
    } else {
      result = cmd_plot(files, ro);
    }
    std::cout << result.dump(2) << std::endl;
    return kExitOk;
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("runtime error: {}", e.what());
    return kExitRuntime;
  }
}

}  // namespace c3r::app
