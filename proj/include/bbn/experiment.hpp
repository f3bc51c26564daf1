#pragma once

// Experiment configuration: an INI-style file with one section per module.
// Every key has a default; unknown sections or keys are rejected. The
// canonical text form (every key, fixed order) is what run ids hash.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bbn/baselines.hpp"
#include "bbn/bbn.hpp"
#include "bbn/data.hpp"
#include "bbn/sampling.hpp"
#include "bbn/training.hpp"

namespace bbn {

struct DataConfig {
  std::size_t num_classes = 10;
  std::size_t n_max = 500;
  double beta = 50.0;
  std::size_t dim = 40;
  std::size_t latent_dim = 3;
  double radius = 3.0;
  double noise_scale = 1.0;
  std::size_t test_per_class = 500;
  std::uint64_t seed = 7;
  // When set, datasets are loaded from LTDS files instead of synthesized.
  std::string train_path;
  std::string test_path;
};

struct TrainSection {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  Manner manner = Manner::CE;
  AdaptorKind adaptor = AdaptorKind::ParabolicDecay;
  SamplerKind rebalancing_sampler = SamplerKind::Reversed;
  std::size_t retrain_epochs = 20;
  Manner classifier_manner = Manner::CE;
  std::size_t stage2_epochs = 10;
  double stage2_lr_scale = 0.01;
};

struct RunSection {
  std::uint64_t seed = 0;
  std::size_t seeds = 1;
  bool record_timing = false;
};

struct ExperimentConfig {
  DataConfig data;
  ModelDims model;
  OptimizerConfig optimizer{0.05, 0.9, 2e-4, 5, {36, 48}, 0.1};
  TrainSection train;
  RunSection run;

  void validate() const {
    if (data.train_path.empty() != data.test_path.empty()) {
      throw ConfigError("data.train_path and data.test_path must be given together");
    }
    if (data.train_path.empty()) {
      make_counts({data.num_classes, data.n_max, data.beta});
      if (data.dim == 0) throw ConfigError("data.dim must be positive");
      if (data.test_per_class == 0) throw ConfigError("data.test_per_class must be positive");
      if (!(data.noise_scale >= 0.0)) throw ConfigError("data.noise_scale must be nonnegative");
      if (!(data.radius > 0.0)) throw ConfigError("data.radius must be positive");
    }
    model.validate();
    optimizer.validate();
    if (train.epochs == 0) throw ConfigError("train.epochs must be positive");
    if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(train.stage2_lr_scale > 0.0)) throw ConfigError("train.stage2_lr_scale must be positive");
    if (run.seeds == 0) throw ConfigError("run.seeds must be positive");
  }
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

template <class T>
T parse_integer(const std::string& key, const std::string& text) {
  T v{};
  const auto t = trim(text);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || p != t.data() + t.size() || t.empty()) {
    throw ConfigError(key + ": expected a nonnegative integer, got \"" + text + "\"");
  }
  return v;
}

inline double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto t = trim(text);
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || p != t.data() + t.size() || t.empty() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a real number, got \"" + text + "\"");
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = lower(trim(text));
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key + ": expected true/false, got \"" + text + "\"");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_integer<std::size_t>(key, item));
  }
  return out;
}

// Shortest text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string format_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace config_detail

inline Manner parse_manner(const std::string& text) {
  const auto t = config_detail::lower(config_detail::trim(text));
  if (t == "ce") return Manner::CE;
  if (t == "rw") return Manner::RW;
  if (t == "rs") return Manner::RS;
  throw ConfigError("unknown manner \"" + text + "\" (expected CE, RW or RS)");
}

inline SamplerKind parse_sampler(const std::string& text) {
  const auto t = config_detail::lower(config_detail::trim(text));
  if (t == "uniform") return SamplerKind::Uniform;
  if (t == "balanced") return SamplerKind::Balanced;
  if (t == "reversed") return SamplerKind::Reversed;
  throw ConfigError("unknown sampler \"" + text + "\" (expected uniform, balanced or reversed)");
}

inline std::string_view adaptor_key(AdaptorKind k) {
  switch (k) {
    case AdaptorKind::EqualWeight: return "equal_weight";
    case AdaptorKind::BetaDist: return "beta_distribution";
    case AdaptorKind::ParabolicIncrement: return "parabolic_increment";
    case AdaptorKind::LinearDecay: return "linear_decay";
    case AdaptorKind::CosineDecay: return "cosine_decay";
    case AdaptorKind::ParabolicDecay: return "parabolic_decay";
    case AdaptorKind::Constant: return "constant";
  }
  return "?";
}

inline AdaptorKind parse_adaptor(const std::string& text) {
  const auto t = config_detail::lower(config_detail::trim(text));
  for (AdaptorKind k : kAdaptorStrategies)
    if (t == adaptor_key(k)) return k;
  throw ConfigError("unknown adaptor \"" + text + "\"");
}

namespace config_detail {

struct Field {
  std::string section;
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define BBN_INT_FIELD(sec, name, member, T)                                                                  \
  Field {                                                                                                    \
    sec, name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_integer<T>(sec "." name, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.member); }                                   \
  }
#define BBN_REAL_FIELD(sec, name, member)                                                             \
  Field {                                                                                             \
    sec, name, [](ExperimentConfig& c, const std::string& v) { c.member = parse_real(sec "." name, v); }, \
        [](const ExperimentConfig& c) { return format_real(c.member); }                               \
  }

inline const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      BBN_INT_FIELD("data", "num_classes", data.num_classes, std::size_t),
      BBN_INT_FIELD("data", "n_max", data.n_max, std::size_t),
      BBN_REAL_FIELD("data", "beta", data.beta),
      BBN_INT_FIELD("data", "dim", data.dim, std::size_t),
      BBN_INT_FIELD("data", "latent_dim", data.latent_dim, std::size_t),
      BBN_REAL_FIELD("data", "radius", data.radius),
      BBN_REAL_FIELD("data", "noise_scale", data.noise_scale),
      BBN_INT_FIELD("data", "test_per_class", data.test_per_class, std::size_t),
      BBN_INT_FIELD("data", "seed", data.seed, std::uint64_t),
      Field{"data", "train_path", [](ExperimentConfig& c, const std::string& v) { c.data.train_path = trim(v); },
            [](const ExperimentConfig& c) { return c.data.train_path; }},
      Field{"data", "test_path", [](ExperimentConfig& c, const std::string& v) { c.data.test_path = trim(v); },
            [](const ExperimentConfig& c) { return c.data.test_path; }},
      Field{"model", "trunk", [](ExperimentConfig& c, const std::string& v) { c.model.trunk = parse_list("model.trunk", v); },
            [](const ExperimentConfig& c) { return format_list(c.model.trunk); }},
      Field{"model", "branch",
            [](ExperimentConfig& c, const std::string& v) { c.model.branch = parse_list("model.branch", v); },
            [](const ExperimentConfig& c) { return format_list(c.model.branch); }},
      BBN_REAL_FIELD("optimizer", "base_lr", optimizer.base_lr),
      BBN_REAL_FIELD("optimizer", "momentum", optimizer.momentum),
      BBN_REAL_FIELD("optimizer", "weight_decay", optimizer.weight_decay),
      BBN_INT_FIELD("optimizer", "warmup_epochs", optimizer.warmup_epochs, std::size_t),
      Field{"optimizer", "milestones",
            [](ExperimentConfig& c, const std::string& v) { c.optimizer.milestones = parse_list("optimizer.milestones", v); },
            [](const ExperimentConfig& c) { return format_list(c.optimizer.milestones); }},
      BBN_REAL_FIELD("optimizer", "decay_factor", optimizer.decay_factor),
      BBN_INT_FIELD("train", "epochs", train.epochs, std::size_t),
      BBN_INT_FIELD("train", "batch_size", train.batch_size, std::size_t),
      Field{"train", "manner", [](ExperimentConfig& c, const std::string& v) { c.train.manner = parse_manner(v); },
            [](const ExperimentConfig& c) { return std::string(to_string(c.train.manner)); }},
      Field{"train", "adaptor", [](ExperimentConfig& c, const std::string& v) { c.train.adaptor = parse_adaptor(v); },
            [](const ExperimentConfig& c) { return std::string(adaptor_key(c.train.adaptor)); }},
      Field{"train", "rebalancing_sampler",
            [](ExperimentConfig& c, const std::string& v) { c.train.rebalancing_sampler = parse_sampler(v); },
            [](const ExperimentConfig& c) { return lower(std::string(to_string(c.train.rebalancing_sampler))); }},
      BBN_INT_FIELD("train", "retrain_epochs", train.retrain_epochs, std::size_t),
      Field{"train", "classifier_manner",
            [](ExperimentConfig& c, const std::string& v) { c.train.classifier_manner = parse_manner(v); },
            [](const ExperimentConfig& c) { return std::string(to_string(c.train.classifier_manner)); }},
      BBN_INT_FIELD("train", "stage2_epochs", train.stage2_epochs, std::size_t),
      BBN_REAL_FIELD("train", "stage2_lr_scale", train.stage2_lr_scale),
      BBN_INT_FIELD("run", "seed", run.seed, std::uint64_t),
      BBN_INT_FIELD("run", "seeds", run.seeds, std::size_t),
      Field{"run", "record_timing",
            [](ExperimentConfig& c, const std::string& v) { c.run.record_timing = parse_bool("run.record_timing", v); },
            [](const ExperimentConfig& c) { return std::string(c.run.record_timing ? "true" : "false"); }},
  };
  return fields;
}

#undef BBN_INT_FIELD
#undef BBN_REAL_FIELD

}  // namespace config_detail

inline ExperimentConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig cfg;
  const auto& fields = config_detail::schema();
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("key \"" + section + "\" must appear inside a [section]");
    for (const auto& [key, value] : body) {
      const auto it = std::find_if(fields.begin(), fields.end(),
                                   [&](const auto& f) { return f.section == section && f.key == key; });
      if (it == fields.end()) throw ConfigError("unknown config key [" + section + "] " + key);
      it->set(cfg, value.data());
    }
  }
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// Every key in schema order; parse_config(canonical_text(c)) reproduces c.
inline std::string canonical_text(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& f : config_detail::schema()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

// ---- experiment protocol ---------------------------------------------------

struct Benchmark {
  Dataset train;
  Dataset test;
};

// Synthetic benchmarks are redrawn per run seed (class means included), so
// each seed is an independent replicate. File-backed data is shared.
inline Benchmark make_benchmark(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  Benchmark b;
  if (!cfg.data.train_path.empty()) {
    b.train = load_dataset(cfg.data.train_path);
    b.test = load_dataset(cfg.data.test_path);
  } else {
    const auto spec = SyntheticSpec::random(cfg.data.num_classes, cfg.data.dim, cfg.data.radius, cfg.data.noise_scale,
                                            derive_seed(cfg.data.seed, run_seed), cfg.data.latent_dim);
    b.train = synth_dataset(spec, make_counts({cfg.data.num_classes, cfg.data.n_max, cfg.data.beta}));
    b.test = make_balanced_test(spec, cfg.data.test_per_class);
  }
  validate(b.train);
  validate(b.test);
  if (b.train.dim() != b.test.dim() || b.train.num_classes() != b.test.num_classes()) {
    throw ConfigError("train and test datasets disagree on width or class count");
  }
  return b;
}

inline TrainOptions train_options(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainOptions o;
  o.optimizer = cfg.optimizer;
  o.epochs = cfg.train.epochs;
  o.batch_size = cfg.train.batch_size;
  o.seed = seed;
  return o;
}

// The main schedule compressed onto `epochs`: warmup and milestones scale
// by epochs / train.epochs, keeping milestones after warmup and increasing.
inline OptimizerConfig rescaled_schedule(const OptimizerConfig& base, std::size_t from_epochs, std::size_t to_epochs) {
  OptimizerConfig o = base;
  const double r = static_cast<double>(to_epochs) / static_cast<double>(from_epochs);
  auto scale = [r](std::size_t e) { return static_cast<std::size_t>(std::floor(static_cast<double>(e) * r + 0.5)); };
  o.warmup_epochs = base.warmup_epochs > 0 ? std::max<std::size_t>(1, scale(base.warmup_epochs)) : 0;
  o.milestones.clear();
  std::size_t prev = o.warmup_epochs;
  for (std::size_t m : base.milestones) {
    const std::size_t v = std::max(prev + 1, scale(m));
    o.milestones.push_back(v);
    prev = v;
  }
  return o;
}

inline TrainOptions retrain_options(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainOptions o = train_options(cfg, seed);
  o.epochs = cfg.train.retrain_epochs;
  o.optimizer = rescaled_schedule(cfg.optimizer, cfg.train.epochs, std::max<std::size_t>(1, cfg.train.retrain_epochs));
  return o;
}

inline BBNTrainConfig bbn_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  BBNTrainConfig b;
  b.T_max = cfg.train.epochs;
  b.batch_size = cfg.train.batch_size;
  b.optimizer = cfg.optimizer;
  b.schedule.kind = cfg.train.adaptor;
  b.rebalancing_sampler = cfg.train.rebalancing_sampler;
  b.seed = seed;
  return b;
}

inline DecoupleGridConfig grid_config(const ExperimentConfig& cfg) {
  return {cfg.model, train_options(cfg, 0), retrain_options(cfg, 0)};
}

inline double stage2_lr(const ExperimentConfig& cfg) { return cfg.optimizer.base_lr * cfg.train.stage2_lr_scale; }

}  // namespace bbn
