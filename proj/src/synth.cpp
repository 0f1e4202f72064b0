#include "c3r/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "c3r/json_util.hpp"
#include "c3r/nn.hpp"
#include "c3r/png_io.hpp"

namespace fs = std::filesystem;

namespace c3r {
namespace {

constexpr int kFilaments = 5;
constexpr int kCompartments = 4;

struct Geometry {
  double cx, cy, a, b, cos_t, sin_t;
  double filament_angle[kFilaments];

  /// Elliptical radius in units of the nucleus radii (1 on the nucleus boundary).
  double radius(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = dx * cos_t + dy * sin_t, v = -dx * sin_t + dy * cos_t;
    return std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
  }
  /// Point at elliptical radius rho and angle phi.
  std::pair<double, double> at(double rho, double phi) const {
    const double u = rho * a * std::cos(phi), v = rho * b * std::sin(phi);
    return {cx + u * cos_t - v * sin_t, cy + u * sin_t + v * cos_t};
  }
};

Geometry sample_geometry(const SynthConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double j = 1.0 - cfg.context_coherence;
  const double S = cfg.image_size;
  Geometry g{};
  g.cx = S / 2 + j * u(rng) * 0.2 * S;
  g.cy = S / 2 + j * u(rng) * 0.2 * S;
  g.a = 0.2 * S * (1 + 0.4 * j * u(rng));
  g.b = 0.15 * S * (1 + 0.4 * j * u(rng));
  const double theta = 0.4 + j * u(rng) * std::numbers::pi / 2;
  g.cos_t = std::cos(theta);
  g.sin_t = std::sin(theta);
  for (int k = 0; k < kFilaments; ++k)
    g.filament_angle[k] = 0.2 + 2 * std::numbers::pi * k / kFilaments + j * u(rng) * std::numbers::pi / kFilaments;
  return g;
}

double gauss_ring(double r, double centre, double width) {
  const double z = (r - centre) / width;
  return std::exp(-z * z);
}

double filament_intensity(const Geometry& g, double x, double y, double S) {
  double v = 0.0;
  for (double ang : g.filament_angle) {
    const double dx = x - g.cx, dy = y - g.cy;
    const double along = dx * std::cos(ang) + dy * std::sin(ang);
    if (along <= 0) continue;
    const double perp = -dx * std::sin(ang) + dy * std::cos(ang);
    v += std::exp(-perp * perp / 2.0) * std::exp(-along / (0.6 * S));
  }
  return std::min(v, 1.0);
}

/// Context template t at pixel centre (x, y).
double context_value(int t, const Geometry& g, double x, double y, double S) {
  const double r = g.radius(x, y);
  switch (t % 4) {
    case 0: return 1.0 / (1.0 + std::exp(8.0 * (r - 1.0)));
    case 1: return gauss_ring(r, 1.5, 0.3);
    case 2: return filament_intensity(g, x, y, S);
    default: return gauss_ring(r, 2.3 + 0.3 * (t / 4), 0.2);
  }
}

struct ClassStyle {
  int compartment;
  int spots;
  double sigma;
};

ClassStyle class_style(int cls, int concept_channel) {
  return {(cls + concept_channel) % kCompartments, 5 + 2 * ((cls / kCompartments + concept_channel) % 3),
          0.8 + 0.4 * (cls % 2)};
}

std::pair<double, double> anchored_point(const Geometry& g, int compartment, double S, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double phi = 2 * std::numbers::pi * u01(rng);
  switch (compartment) {
    case 0: return g.at(0.8 * std::sqrt(u01(rng)), phi);
    case 1: return g.at(1.3 + 0.4 * u01(rng), phi);
    case 2: return g.at(1.8 + 0.8 * u01(rng), phi);
    default: {
      const double ang = g.filament_angle[std::uniform_int_distribution<int>(0, kFilaments - 1)(rng)];
      const double t = 0.5 * g.a + (0.45 * S - 0.5 * g.a) * u01(rng);
      return {g.cx + t * std::cos(ang), g.cy + t * std::sin(ang)};
    }
  }
}

void add_spots(double* plane, int S, const Geometry& g, const ClassStyle& style, int count, double coupling, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double margin = 3 * style.sigma;
  for (int s = 0; s < count; ++s) {
    double px, py;
    if (u01(rng) < coupling) {
      std::tie(px, py) = anchored_point(g, style.compartment, S, rng);
    } else {
      // Stationary placement: centres cover a margin beyond the border.
      px = -margin + (S + 2 * margin) * u01(rng);
      py = -margin + (S + 2 * margin) * u01(rng);
    }
    const double amp = 0.6 + 0.4 * u01(rng);
    const double inv = 1.0 / (2 * style.sigma * style.sigma);
    for (int y = 0; y < S; ++y)
      for (int x = 0; x < S; ++x) {
        const double dx = x + 0.5 - px, dy = y + 0.5 - py;
        plane[y * S + x] += amp * std::exp(-(dx * dx + dy * dy) * inv);
      }
  }
}

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

std::string sample_name(int64_t i) {
  std::ostringstream os;
  os << "s" << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

uint64_t derived_seed(uint64_t seed, uint64_t stream, uint64_t index) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(stream),
                    static_cast<uint32_t>(index), static_cast<uint32_t>(index >> 32)};
  uint64_t out[1];
  seq.generate(reinterpret_cast<uint32_t*>(out), reinterpret_cast<uint32_t*>(out) + 2);
  return out[0];
}

std::string label_string(const std::vector<uint8_t>& labels) {
  std::string s;
  for (auto v : labels) s.push_back(v ? '1' : '0');
  return s;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_samples < 1 || image_size < 2 || n_context < 1 || n_concept < 1 || n_classes < 1)
    throw ConfigError("synth: counts must be >= 1 and image_size >= 2");
  if (samples_per_group < 1 || cells_per_fov < 1 || fovs_per_well < 1) throw ConfigError("synth: grouping sizes must be >= 1");
  if (context_coherence < 0 || context_coherence > 1) throw ConfigError("synth.context_coherence must lie in [0, 1]");
  if (concept_context_coupling < 0 || concept_context_coupling > 1)
    throw ConfigError("synth.concept_context_coupling must lie in [0, 1]");
  if (noise_level < 0) throw ConfigError("synth.noise_level must be >= 0");
  if (multilabel_prob < 0 || multilabel_prob > 1) throw ConfigError("synth.multilabel_prob must lie in [0, 1]");
}

nlohmann::json to_json(const SynthConfig& c) {
  return {{"n_samples", c.n_samples},
          {"image_size", c.image_size},
          {"n_context", c.n_context},
          {"n_concept", c.n_concept},
          {"n_classes", c.n_classes},
          {"context_coherence", c.context_coherence},
          {"concept_context_coupling", c.concept_context_coupling},
          {"noise_level", c.noise_level},
          {"seed", c.seed},
          {"samples_per_group", c.samples_per_group},
          {"cells_per_fov", c.cells_per_fov},
          {"fovs_per_well", c.fovs_per_well},
          {"multilabel_prob", c.multilabel_prob}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  const std::string sec = "synth";
  reject_unknown_keys(j,
                      {"n_samples", "image_size", "n_context", "n_concept", "n_classes", "context_coherence",
                       "concept_context_coupling", "noise_level", "seed", "samples_per_group", "cells_per_fov",
                       "fovs_per_well", "multilabel_prob"},
                      sec);
  SynthConfig c;
  read_opt(j, "n_samples", c.n_samples, sec);
  read_opt(j, "image_size", c.image_size, sec);
  read_opt(j, "n_context", c.n_context, sec);
  read_opt(j, "n_concept", c.n_concept, sec);
  read_opt(j, "n_classes", c.n_classes, sec);
  read_opt(j, "context_coherence", c.context_coherence, sec);
  read_opt(j, "concept_context_coupling", c.concept_context_coupling, sec);
  read_opt(j, "noise_level", c.noise_level, sec);
  read_opt(j, "seed", c.seed, sec);
  read_opt(j, "samples_per_group", c.samples_per_group, sec);
  read_opt(j, "cells_per_fov", c.cells_per_fov, sec);
  read_opt(j, "fovs_per_well", c.fovs_per_well, sec);
  read_opt(j, "multilabel_prob", c.multilabel_prob, sec);
  c.validate();
  return c;
}

Tensor Dataset::stack(const std::vector<int>& indices) const {
  if (indices.empty()) throw ShapeError("Dataset::stack: no indices");
  const auto& first = samples.at(static_cast<size_t>(indices[0])).image;
  Shape s{static_cast<int64_t>(indices.size())};
  s.insert(s.end(), first.shape().begin(), first.shape().end());
  Tensor out(s);
  const int64_t per = first.numel();
  for (size_t i = 0; i < indices.size(); ++i) {
    const auto& img = samples.at(static_cast<size_t>(indices[i])).image;
    if (img.shape() != first.shape()) throw ShapeError("Dataset::stack: ragged image shapes");
    std::copy(img.data(), img.data() + per, out.data() + static_cast<int64_t>(i) * per);
  }
  return out;
}

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset d;
  d.schema = schema;
  d.num_labels = num_labels;
  for (int i : indices) d.samples.push_back(samples.at(static_cast<size_t>(i)));
  return d;
}

GroupSchema synth_schema(int n_context, int n_concept) {
  static const char* ctx_names[] = {"Nucleus", "ER", "Microtubules", "Actin"};
  static const char* con_names[] = {"RNA", "AGP", "Mito"};
  std::vector<ChannelSpec> specs;
  int idx = 0;
  for (int i = 0; i < n_context; ++i)
    specs.push_back({i < 4 ? ctx_names[i] : "Context" + std::to_string(i), ChannelRole::Context, idx++});
  for (int i = 0; i < n_concept; ++i) {
    std::string name = n_concept == 1 ? "Protein" : (i < 3 ? con_names[i] : "Concept" + std::to_string(i));
    specs.push_back({name, ChannelRole::Concept, idx++});
  }
  return GroupSchema(std::move(specs));
}

Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  Dataset data;
  data.schema = synth_schema(cfg.n_context, cfg.n_concept);
  data.num_labels = cfg.n_classes;
  const int S = cfg.image_size;
  const int C = cfg.n_context + cfg.n_concept;
  const int groups = (cfg.n_samples + cfg.samples_per_group - 1) / cfg.samples_per_group;
  const int fovs_per_group = (cfg.samples_per_group + cfg.cells_per_fov - 1) / cfg.cells_per_fov;
  const int wells_per_group = (fovs_per_group + cfg.fovs_per_well - 1) / cfg.fovs_per_well;

  // Group-level labels: a primary class (balanced) and an optional secondary one.
  std::vector<int> primary(static_cast<size_t>(groups)), secondary(static_cast<size_t>(groups), -1);
  {
    Rng rng(derived_seed(cfg.seed, 1, 0));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int g = 0; g < groups; ++g) {
      primary[static_cast<size_t>(g)] = g % cfg.n_classes;
      if (cfg.n_classes > 1 && u01(rng) < cfg.multilabel_prob) {
        int other = std::uniform_int_distribution<int>(0, cfg.n_classes - 2)(rng);
        if (other >= primary[static_cast<size_t>(g)]) ++other;
        secondary[static_cast<size_t>(g)] = other;
      }
    }
  }

  data.samples.resize(static_cast<size_t>(cfg.n_samples));
  for (int i = 0; i < cfg.n_samples; ++i) {
    Rng rng(derived_seed(cfg.seed, 2, static_cast<uint64_t>(i)));
    const int g = i / cfg.samples_per_group, local = i % cfg.samples_per_group;
    auto& s = data.samples[static_cast<size_t>(i)];
    s.id = sample_name(i);
    s.group_id = g;
    s.class_id = primary[static_cast<size_t>(g)];
    s.multilabels.assign(static_cast<size_t>(cfg.n_classes), 0);
    s.multilabels[static_cast<size_t>(s.class_id)] = 1;
    if (secondary[static_cast<size_t>(g)] >= 0) s.multilabels[static_cast<size_t>(secondary[static_cast<size_t>(g)])] = 1;
    const int local_fov = local / cfg.cells_per_fov;
    s.fov_id = g * fovs_per_group + local_fov;
    s.well_id = g * wells_per_group + local_fov / cfg.fovs_per_well;

    const Geometry geo = sample_geometry(cfg, rng);
    s.image = Tensor({C, S, S});
    double* img = s.image.data();
    for (int t = 0; t < cfg.n_context; ++t)
      for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) img[(t * S + y) * S + x] = context_value(t, geo, x + 0.5, y + 0.5, S);
    for (int j = 0; j < cfg.n_concept; ++j) {
      double* plane = img + static_cast<int64_t>(cfg.n_context + j) * S * S;
      const auto style = class_style(s.class_id, j);
      add_spots(plane, S, geo, style, style.spots, cfg.concept_context_coupling, rng);
      if (secondary[static_cast<size_t>(g)] >= 0) {
        const auto extra = class_style(secondary[static_cast<size_t>(g)], j);
        add_spots(plane, S, geo, extra, (extra.spots + 1) / 2, cfg.concept_context_coupling, rng);
      }
    }
    std::normal_distribution<double> noise(0.0, cfg.noise_level);
    for (int64_t k = 0; k < s.image.numel(); ++k)
      img[k] = quantize(img[k] + (cfg.noise_level > 0 ? noise(rng) : 0.0));
  }
  return data;
}

void write_dataset(const Dataset& data, const std::string& root) {
  fs::create_directories(fs::path(root) / "images");
  save_schema(data.schema, (fs::path(root) / "manifest").string());
  std::ofstream labels(fs::path(root) / "labels");
  if (!labels) throw Error("cannot write labels under " + root);
  labels << "sample_id,class_id,group_id,fov_id,well_id,labels\n";
  for (const auto& s : data.samples) {
    labels << s.id << ',' << s.class_id << ',' << s.group_id << ',' << s.fov_id << ',' << s.well_id << ','
           << label_string(s.multilabels) << '\n';
    const auto dir = fs::path(root) / "images" / s.id;
    fs::create_directories(dir);
    const int64_t H = s.image.dim(1), W = s.image.dim(2);
    for (const auto& ch : data.schema.channels()) {
      Image8 img{static_cast<int>(W), static_cast<int>(H), 1, std::vector<uint8_t>(static_cast<size_t>(H * W))};
      const double* p = s.image.data() + ch.source_index * H * W;
      for (int64_t k = 0; k < H * W; ++k)
        img.pixels[static_cast<size_t>(k)] = static_cast<uint8_t>(std::lround(std::clamp(p[k], 0.0, 1.0) * 255.0));
      write_png((dir / (ch.name + ".png")).string(), img);
    }
  }
}

Dataset load_dataset(const std::string& root) {
  Dataset data;
  data.schema = load_schema((fs::path(root) / "manifest").string());
  std::ifstream labels(fs::path(root) / "labels");
  if (!labels) throw ConfigError("missing label table " + (fs::path(root) / "labels").string());
  std::string line;
  std::getline(labels, line);
  const int C = data.schema.total();
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw ConfigError("labels: malformed row '" + line + "'");
    SynthSample s;
    s.id = f[0];
    s.class_id = std::stoi(f[1]);
    s.group_id = std::stoi(f[2]);
    s.fov_id = std::stoi(f[3]);
    s.well_id = std::stoi(f[4]);
    for (char c : f[5]) s.multilabels.push_back(c == '1' ? 1 : 0);
    if (data.num_labels == 0) data.num_labels = static_cast<int>(s.multilabels.size());
    if (static_cast<int>(s.multilabels.size()) != data.num_labels) throw ConfigError("labels: inconsistent label width");

    const auto dir = fs::path(root) / "images" / s.id;
    for (const auto& ch : data.schema.channels())
      if (!fs::exists(dir / (ch.name + ".png")))
        throw Error("sample " + s.id + ": missing image for channel '" + ch.name + "'");
    int files = 0;
    for (const auto& e : fs::directory_iterator(dir)) files += e.path().extension() == ".png";
    if (files != C)
      throw ConfigError("sample " + s.id + ": " + std::to_string(files) + " channel files but manifest lists " +
                        std::to_string(C));
    for (const auto& ch : data.schema.channels()) {
      const auto file = dir / (ch.name + ".png");
      const Image8 img = read_png(file.string());
      if (img.channels != 1) throw Error(file.string() + ": expected a grayscale image");
      if (s.image.empty()) s.image = Tensor({C, img.height, img.width});
      if (img.height != s.image.dim(1) || img.width != s.image.dim(2))
        throw ShapeError("sample " + s.id + ": channel '" + ch.name + "' has a different size");
      double* p = s.image.data() + static_cast<int64_t>(ch.source_index) * img.height * img.width;
      for (size_t k = 0; k < img.pixels.size(); ++k) p[k] = img.pixels[k] / 255.0;
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

std::pair<Dataset, Dataset> split_by_group(const Dataset& data, double fraction, uint64_t seed) {
  std::vector<int> groups;
  for (const auto& s : data.samples) groups.push_back(s.group_id);
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  Rng rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);
  const auto cut = static_cast<size_t>(std::lround(fraction * static_cast<double>(groups.size())));
  std::vector<int> first_groups(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(std::min(cut, groups.size())));
  std::sort(first_groups.begin(), first_groups.end());
  std::vector<int> a, b;
  for (int i = 0; i < static_cast<int>(data.samples.size()); ++i)
    (std::binary_search(first_groups.begin(), first_groups.end(), data.samples[static_cast<size_t>(i)].group_id) ? a : b)
        .push_back(i);
  return {data.subset(a), data.subset(b)};
}

}  // namespace c3r
