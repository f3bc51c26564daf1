#pragma once

// Command implementations behind the bbn_lab CLI. Each command writes a run
// directory <out>/<run id>/ holding the canonical config, per-model metrics
// (one JSON object per line, flushed every epoch), result CSVs and a
// record.json summary that export_tables consumes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bbn/analysis.hpp"
#include "bbn/baselines.hpp"
#include "bbn/bbn.hpp"
#include "bbn/experiment.hpp"

namespace bbn {

namespace fs = std::filesystem;

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {
      "gen-data",        "train-manner",   "train-bbn",       "decouple-grid",       "two-stage",     "ablate-sampler",
      "ablate-adaptor",  "feature-quality", "ensemble",       "analyze-norms",       "analyze-compactness", "export-tables"};
  return names;
}

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string run_id(std::string_view command, std::string_view variant, const ExperimentConfig& cfg,
                          const std::vector<std::uint64_t>& seeds) {
  std::string key = std::string(command) + "\n" + std::string(variant) + "\n" + canonical_text(cfg) + "\nseeds=";
  for (std::uint64_t s : seeds) key += std::to_string(s) + ",";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(key)));
  return buf;
}

inline std::vector<std::uint64_t> seed_list(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(first + i);
  return out;
}

struct ResultRow {
  std::string label;
  double value = 0.0;  // mean over seeds
  std::vector<double> per_seed;
};

struct RunRecord {
  std::string run_id;
  std::string command;
  std::string variant;
  std::string table;  // table kind rows belong to (empty for gen-data)
  std::vector<std::uint64_t> seeds;
  std::vector<ResultRow> rows;
  std::vector<std::string> metrics;    // paths relative to the run directory
  std::vector<std::string> artifacts;  // paths relative to the run directory
};

inline nlohmann::ordered_json to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["run_id"] = r.run_id;
  j["command"] = r.command;
  j["variant"] = r.variant;
  j["table"] = r.table;
  j["seeds"] = r.seeds;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& row : r.rows) {
    j["rows"].push_back({{"label", row.label}, {"value", row.value}, {"per_seed", row.per_seed}});
  }
  j["metrics"] = r.metrics;
  j["artifacts"] = r.artifacts;
  return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.command = j.at("command").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.table = j.at("table").get<std::string>();
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  for (const auto& row : j.at("rows")) {
    r.rows.push_back({row.at("label").get<std::string>(), row.at("value").get<double>(),
                      row.at("per_seed").get<std::vector<double>>()});
  }
  r.metrics = j.at("metrics").get<std::vector<std::string>>();
  r.artifacts = j.at("artifacts").get<std::vector<std::string>>();
  return r;
}

// Append-only metrics log: {epoch, alpha, lr, train_loss, test_error, wall_ms}
// per line. wall_ms is null unless timing is recorded, keeping the file a
// pure function of the config.
class MetricsLog {
 public:
  MetricsLog(const fs::path& path, bool record_timing) : out_(path, std::ios::trunc), timing_(record_timing) {
    if (!out_) throw Error("cannot open metrics file " + path.string());
  }

  void write(const EpochMetrics& m, std::size_t epoch_offset = 0) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch + epoch_offset;
    j["alpha"] = m.alpha;
    j["lr"] = m.lr;
    j["train_loss"] = m.train_loss;
    j["test_error"] = m.test_error ? nlohmann::ordered_json(*m.test_error) : nlohmann::ordered_json(nullptr);
    j["wall_ms"] = timing_ ? nlohmann::ordered_json(m.wall_ms) : nlohmann::ordered_json(nullptr);
    out_ << j.dump() << '\n';
    out_.flush();
  }

  EpochCallback callback(std::size_t epoch_offset = 0) {
    return [this, epoch_offset](const EpochMetrics& m) { write(m, epoch_offset); };
  }

 private:
  std::ofstream out_;
  bool timing_;
};

namespace runner_detail {

inline std::string csv_number(double v) { return config_detail::format_real(v); }

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

// Collects rows across seeds in first-seen label order.
class RowTable {
 public:
  void add(const std::string& label, double v) {
    if (!index_.count(label)) {
      index_[label] = rows_.size();
      rows_.push_back({label, 0.0, {}});
    }
    rows_[index_[label]].per_seed.push_back(v);
  }

  std::vector<ResultRow> finish() const {
    std::vector<ResultRow> out = rows_;
    for (auto& r : out) {
      double s = 0.0;
      for (double v : r.per_seed) s += v;
      r.value = s / static_cast<double>(r.per_seed.size());
    }
    return out;
  }

 private:
  std::map<std::string, std::size_t> index_;
  std::vector<ResultRow> rows_;
};

inline std::string rows_csv(const std::string& header, const std::vector<ResultRow>& rows) {
  std::string s = header + "\n";
  for (const auto& r : rows) s += r.label + "," + csv_number(r.value) + "\n";
  return s;
}

struct Context {
  const ExperimentConfig& cfg;
  fs::path dir;
  RunRecord& record;

  MetricsLog metrics(const std::string& label, std::uint64_t seed) {
    fs::create_directories(dir / "metrics");
    const std::string rel = "metrics/" + label + "_s" + std::to_string(seed) + ".jsonl";
    record.metrics.push_back(rel);
    return MetricsLog(dir / rel, cfg.run.record_timing);
  }

  void artifact(const std::string& rel, const std::string& text) {
    write_text(dir / rel, text);
    record.artifacts.push_back(rel);
  }
};

inline Network train_manner_logged(Context& ctx, const Benchmark& b, Manner m, std::uint64_t seed,
                                   const std::string& label) {
  Network net = make_classifier_net(b.train.dim(), b.train.num_classes(), ctx.cfg.model, seed);
  auto log = ctx.metrics(label, seed);
  TrainOptions opt = train_options(ctx.cfg, seed);
  opt.eval = &b.test;
  opt.on_epoch = log.callback();
  train_manner(net, b.train, m, opt);
  return net;
}

inline Network train_reversed_logged(Context& ctx, const Benchmark& b, std::uint64_t seed) {
  Network net = make_classifier_net(b.train.dim(), b.train.num_classes(), ctx.cfg.model, seed);
  auto log = ctx.metrics("Reversed", seed);
  TrainOptions opt = train_options(ctx.cfg, seed);
  opt.eval = &b.test;
  opt.on_epoch = log.callback();
  train_network(net, b.train, SamplerKind::Reversed, {}, opt);
  return net;
}

inline BBNModel train_bbn_logged(Context& ctx, const Benchmark& b, const BBNTrainConfig& bc, const std::string& label) {
  BBNModel model = make_bbn_model(b.train.dim(), b.train.num_classes(), ctx.cfg.model, bc.seed);
  auto log = ctx.metrics(label, bc.seed);
  train_bbn(model, b.train, bc, &b.test, log.callback());
  return model;
}

inline std::string file_label(std::string s) {
  for (char& c : s)
    if (c == ' ' || c == '/' || c == '+') c = '_';
  return s;
}

inline void norm_csv(Context& ctx, const NormReport& rep, std::uint64_t seed) {
  std::string s = "class,norm\n";
  for (std::size_t i = 0; i < rep.per_class_norm.size(); ++i) s += std::to_string(i) + "," + csv_number(rep.per_class_norm[i]) + "\n";
  ctx.artifact("norms_" + rep.source + "_s" + std::to_string(seed) + ".csv", s);
}

inline double head_mean(const std::vector<double>& per_class, std::size_t head) {
  double s = 0.0;
  head = std::min(head, per_class.size());
  for (std::size_t i = 0; i < head; ++i) s += per_class[i];
  return s / static_cast<double>(head);
}

// Rows for one seed of `command`; the Context collects artifacts.
inline void run_seed(const std::string& command, const std::string& variant, Context& ctx, std::uint64_t seed,
                     RowTable& rows) {
  const ExperimentConfig& cfg = ctx.cfg;
  const Benchmark b = make_benchmark(cfg, seed);
  const std::string sfx = "_s" + std::to_string(seed);

  if (command == "gen-data") {
    save_dataset(b.train, (ctx.dir / ("train" + sfx + ".ltds")).string());
    save_dataset(b.test, (ctx.dir / ("test" + sfx + ".ltds")).string());
    ctx.record.artifacts.push_back("train" + sfx + ".ltds");
    ctx.record.artifacts.push_back("test" + sfx + ".ltds");
    std::string s = "class,count\n";
    for (std::size_t i = 0; i < b.train.num_classes(); ++i) s += std::to_string(i) + "," + std::to_string(b.train.class_counts[i]) + "\n";
    ctx.artifact("counts" + sfx + ".csv", s);
  } else if (command == "train-manner") {
    const Manner m = variant.empty() ? cfg.train.manner : parse_manner(variant);
    const Network net = train_manner_logged(ctx, b, m, seed, std::string(to_string(m)));
    rows.add(std::string(to_string(m)), error_rate(net, b.test));
  } else if (command == "train-bbn") {
    const BBNModel model = train_bbn_logged(ctx, b, bbn_config(cfg, seed), "BBN");
    save_model(model, (ctx.dir / ("model" + sfx + ".bbnm")).string());
    ctx.record.artifacts.push_back("model" + sfx + ".bbnm");
    rows.add("BBN", error_rate(model, b.test));
  } else if (command == "two-stage") {
    const std::string v = config_detail::lower(variant.empty() ? "drw" : variant);
    if (v != "drw" && v != "drs") throw ConfigError("two-stage expects drw or drs, got \"" + variant + "\"");
    const Rebalance r = v == "drw" ? Rebalance::DRW : Rebalance::DRS;
    const std::string label(to_string(r));
    Network net = make_classifier_net(b.train.dim(), b.train.num_classes(), cfg.model, seed);
    auto log = ctx.metrics(label, seed);
    TrainOptions opt = train_options(cfg, seed);
    opt.eval = &b.test;
    opt.on_epoch = log.callback();
    train_manner(net, b.train, Manner::CE, opt);
    opt.on_epoch = log.callback(cfg.train.epochs);
    two_stage_finetune(net, b.train, r, cfg.train.stage2_epochs, stage2_lr(cfg), opt);
    rows.add(label, error_rate(net, b.test));
  } else if (command == "decouple-grid") {
    const std::uint64_t s[] = {seed};
    const auto g = decouple_grid(b.train, b.test, grid_config(cfg), s);
    for (Manner rep : kAllManners)
      for (Manner cls : kAllManners)
        rows.add(std::string(to_string(rep)) + "/" + std::string(to_string(cls)), g.error[manner_index(rep)][manner_index(cls)]);
  } else if (command == "ablate-sampler") {
    for (SamplerKind k : {SamplerKind::Uniform, SamplerKind::Balanced, SamplerKind::Reversed}) {
      BBNTrainConfig bc = bbn_config(cfg, seed);
      bc.rebalancing_sampler = k;
      const BBNModel model = train_bbn_logged(ctx, b, bc, "BBN-" + std::string(to_string(k)));
      rows.add(std::string(to_string(k)), error_rate(model, b.test));
    }
  } else if (command == "ablate-adaptor") {
    for (AdaptorKind k : kAdaptorStrategies) {
      BBNTrainConfig bc = bbn_config(cfg, seed);
      bc.schedule.kind = k;
      const BBNModel model = train_bbn_logged(ctx, b, bc, "BBN-" + std::string(adaptor_key(k)));
      rows.add(std::string(to_string(k)), error_rate(model, b.test));
    }
  } else if (command == "feature-quality") {
    const TrainOptions ro = retrain_options(cfg, seed);
    for (Manner m : kAllManners) {
      const Network net = train_manner_logged(ctx, b, m, seed, std::string(to_string(m)));
      rows.add(std::string(to_string(m)),
               freeze_and_retrain_classifier(net, cfg.train.classifier_manner, b.train, b.test, ro).test_error);
    }
    const BBNModel model = train_bbn_logged(ctx, b, bbn_config(cfg, seed), "BBN");
    const FeatureQuality fq = feature_quality_eval(model, b.train, b.test, cfg.train.classifier_manner, ro);
    rows.add("BBN-CB", fq.conventional_error);
    rows.add("BBN-RB", fq.rebalancing_error);
  } else if (command == "ensemble") {
    const Network uniform = train_manner_logged(ctx, b, Manner::CE, seed, "Uniform");
    const Network balanced = train_manner_logged(ctx, b, Manner::RS, seed, "Balanced");
    const Network reversed = train_reversed_logged(ctx, b, seed);
    const BBNModel model = train_bbn_logged(ctx, b, bbn_config(cfg, seed), "BBN");
    rows.add("Uniform + Balanced", ensemble_eval(uniform, balanced, b.test));
    rows.add("Uniform + Reversed", ensemble_eval(uniform, reversed, b.test));
    rows.add("BBN", error_rate(model, b.test));
  } else if (command == "analyze-norms") {
    std::vector<double> counts(b.train.class_counts.begin(), b.train.class_counts.end());
    std::string summary = "source,sigma,spearman_vs_counts\n";
    auto report = [&](const NormReport& rep) {
      norm_csv(ctx, rep, seed);
      rows.add(rep.source, rep.sigma);
      summary += rep.source + "," + csv_number(rep.sigma) + "," + csv_number(spearman(rep.per_class_norm, counts)) + "\n";
    };
    for (Manner m : kAllManners) {
      const Network net = train_manner_logged(ctx, b, m, seed, std::string(to_string(m)));
      report(classifier_norms(final_classifier(net).weight.value, std::string(to_string(m))));
    }
    const BBNModel model = train_bbn_logged(ctx, b, bbn_config(cfg, seed), "BBN");
    report(classifier_norms(model.W_c.value, "BBN-CB"));
    report(classifier_norms(model.W_r.value, "BBN-RB"));
    report(classifier_norms(combined_classifier(model), "BBN-ALL"));
    ctx.artifact("norms_summary" + sfx + ".csv", summary);
  } else if (command == "analyze-compactness") {
    for (Manner m : kAllManners) {
      const Network net = train_manner_logged(ctx, b, m, seed, std::string(to_string(m)));
      const Tensor feats = predict(feature_extractor(net), b.test.features);
      const CompactnessReport rep = compactness(feats, b.test.labels, b.test.num_classes(), true);
      std::string s = "class,mean_distance\n";
      for (std::size_t i = 0; i < rep.per_class_mean_distance.size(); ++i)
        s += std::to_string(i) + "," + csv_number(rep.per_class_mean_distance[i]) + "\n";
      ctx.artifact("compactness_" + std::string(to_string(m)) + sfx + ".csv", s);
      rows.add(std::string(to_string(m)), head_mean(rep.per_class_mean_distance, 3));
    }
  } else {
    throw ConfigError("unknown command \"" + command + "\"");
  }
}

inline std::string table_for(const std::string& command) {
  if (command == "train-manner" || command == "train-bbn" || command == "two-stage") return "table1";
  if (command == "ablate-sampler") return "table3";
  if (command == "ablate-adaptor") return "table4";
  if (command == "feature-quality") return "table5";
  if (command == "ensemble") return "table6";
  if (command == "decouple-grid") return "fig2";
  if (command == "analyze-norms") return "fig5";
  if (command == "analyze-compactness") return "compactness";
  return "";
}

inline std::string table_header(const std::string& table) {
  if (table == "fig5") return "source,sigma";
  if (table == "compactness") return "manner,head_mean_distance";
  if (table == "table3") return "sampler,error";
  if (table == "table4") return "adaptor,error";
  if (table == "table5") return "representation,error";
  return "method,error";
}

}  // namespace runner_detail

struct RunOutcome {
  RunRecord record;
  fs::path dir;
};

// Runs one command for every seed and writes its run directory. Refuses to
// touch an existing run directory.
inline RunOutcome run_command(const std::string& command, const std::string& variant, const ExperimentConfig& cfg,
                              const std::vector<std::uint64_t>& seeds, const fs::path& out_root) {
  using namespace runner_detail;
  if (command == "export-tables") throw ConfigError("export-tables takes run ids, not a config");
  if (std::find(command_names().begin(), command_names().end(), command) == command_names().end()) {
    throw ConfigError("unknown command \"" + command + "\"");
  }
  if (seeds.empty()) throw ConfigError("no seeds to run");
  cfg.validate();
  RunOutcome out;
  RunRecord& rec = out.record;
  rec.run_id = run_id(command, variant, cfg, seeds);
  rec.command = command;
  rec.variant = variant;
  rec.table = table_for(command);
  rec.seeds = seeds;
  out.dir = out_root / rec.run_id;
  if (fs::exists(out.dir)) throw ConfigError("run " + rec.run_id + " already exists in " + out_root.string());
  fs::create_directories(out.dir);
  write_text(out.dir / "config.ini", canonical_text(cfg));

  Context ctx{cfg, out.dir, rec};
  RowTable rows;
  for (std::uint64_t seed : seeds) run_seed(command, variant, ctx, seed, rows);
  rec.rows = rows.finish();

  if (command == "decouple-grid") {
    std::string s = "representation,CE,RW,RS\n";
    for (Manner rep : kAllManners) {
      s += std::string(to_string(rep));
      for (Manner cls : kAllManners) {
        const std::string key = std::string(to_string(rep)) + "/" + std::string(to_string(cls));
        for (const auto& r : rec.rows)
          if (r.label == key) s += "," + csv_number(r.value);
      }
      s += "\n";
    }
    ctx.artifact("grid.csv", s);
  } else if (!rec.table.empty()) {
    ctx.artifact("results.csv", rows_csv(table_header(rec.table), rec.rows));
  }
  write_text(out.dir / "record.json", to_json(rec).dump(2) + "\n");
  return out;
}

inline RunRecord load_record(const fs::path& run_dir) {
  std::ifstream in(run_dir / "record.json");
  if (!in) throw Error("cannot read " + (run_dir / "record.json").string());
  return record_from_json(nlohmann::json::parse(in));
}

// One CSV per table kind across the given runs; values are copied from the
// records, never recomputed. Nothing is written unless every run exists.
inline std::vector<fs::path> export_tables(const fs::path& runs_root, const std::vector<std::string>& ids,
                                           const fs::path& out_dir) {
  using namespace runner_detail;
  if (ids.empty()) throw ConfigError("export-tables needs at least one run id");
  std::vector<std::string> missing;
  for (const auto& id : ids)
    if (!fs::exists(runs_root / id / "record.json")) missing.push_back(id);
  if (!missing.empty()) {
    std::string msg = "missing runs:";
    for (const auto& id : missing) msg += " " + id;
    throw ConfigError(msg);
  }
  std::map<std::string, std::vector<ResultRow>> tables;
  std::vector<std::string> order;
  for (const auto& id : ids) {
    const RunRecord rec = load_record(runs_root / id);
    if (rec.table.empty()) continue;
    if (!tables.count(rec.table)) order.push_back(rec.table);
    auto& rows = tables[rec.table];
    rows.insert(rows.end(), rec.rows.begin(), rec.rows.end());
  }
  if (order.empty()) throw ConfigError("none of the runs produced table rows");
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& t : order) {
    const fs::path p = out_dir / (t + ".csv");
    write_text(p, rows_csv(table_header(t), tables[t]));
    written.push_back(p);
  }
  return written;
}

}  // namespace bbn
