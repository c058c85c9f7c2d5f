#pragma once

#include "baselines.hpp"
#include "pipeline.hpp"
#include "synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace osta {

namespace fs = std::filesystem;

inline constexpr int kConfigSchemaVersion = 1;

/// Raised for malformed or inconsistent configuration files (exit code 2).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline const std::vector<std::string>& known_methods() {
  // Execution order; finetune_from_supernet consumes the osta cell of the same seed.
  static const std::vector<std::string> m = {"sgs", "df", "pca", "entropy_select", "osta", "rank_once",
                                             "finetune_from_supernet"};
  return m;
}

struct ExperimentConfig {
  std::optional<fs::path> dataset; // manifest.json
  std::optional<SyntheticSpec> synthetic;
  bool dataset_per_seed = false;   // synthetic only: regenerate the data with each run seed
  double val_fraction = 0.25;      // used when the dataset has no subtrain/subval tags
  RunConfig run;
  std::vector<std::string> methods;
  fs::path output = "results";
  std::vector<std::uint64_t> seeds;
  int workers = 1;

  void validate() const {
    if (dataset.has_value() == synthetic.has_value()) throw ConfigError("config needs exactly one of dataset or synthetic");
    if (dataset && !fs::exists(*dataset)) throw ConfigError("dataset manifest " + dataset->string() + " does not exist");
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (methods.empty()) throw ConfigError("methods must be non-empty");
    for (const auto& m : methods) {
      if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end()) {
        throw ConfigError("unknown method '" + m + "'");
      }
    }
    if (run.init_checkpoint && !fs::exists(*run.init_checkpoint)) {
      throw ConfigError("initial checkpoint " + run.init_checkpoint->string() + " does not exist");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0, 1)");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    try {
      run.train.validate();
      if (run.strategy == Strategy::None) throw std::invalid_argument("strategy none is only meaningful with a fixed IC");
      if (synthetic) synthetic->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
};

inline nlohmann::json run_to_json(const RunConfig& r) {
  const auto& s = r.train.schedule;
  nlohmann::json j = {{"k", r.k},
                      {"total_iters", s.total_iters},
                      {"fractions", {s.supernet_fraction, s.pruning_fraction, s.finetune_fraction}},
                      {"base_lr", s.base_lr},
                      {"poly_power", s.poly_power},
                      {"warmup", s.warmup_enabled},
                      {"supernet_stage", s.supernet_stage_enabled},
                      {"strategy", to_string(r.strategy)},
                      {"criterion", to_string(r.criterion)},
                      {"metric", to_string(r.train.metric)},
                      {"batch_size", r.train.batch_size},
                      {"patch", {r.train.patch_h, r.train.patch_w}}};
  if (r.init_checkpoint) {
    j["init"] = {{"checkpoint", r.init_checkpoint->string()}};
  } else {
    j["init"] = "random";
  }
  return j;
}

inline RunConfig run_from_json(const nlohmann::json& j) {
  RunConfig r;
  auto& s = r.train.schedule;
  r.k = j.value("k", r.k);
  s.total_iters = j.value("total_iters", s.total_iters);
  if (j.contains("fractions")) {
    const auto f = j.at("fractions").get<std::vector<double>>();
    if (f.size() != 3) throw ConfigError("fractions must have three entries");
    s.supernet_fraction = f[0];
    s.pruning_fraction = f[1];
    s.finetune_fraction = f[2];
  }
  s.base_lr = j.value("base_lr", s.base_lr);
  s.poly_power = j.value("poly_power", s.poly_power);
  s.warmup_enabled = j.value("warmup", s.warmup_enabled);
  s.supernet_stage_enabled = j.value("supernet_stage", s.supernet_stage_enabled);
  r.strategy = parse_strategy(j.value("strategy", std::string("progressive")));
  r.criterion = parse_criterion(j.value("criterion", std::string("val_acc")));
  r.train.metric = parse_metric(j.value("metric", std::string("mIoU")));
  r.train.batch_size = j.value("batch_size", r.train.batch_size);
  if (j.contains("patch")) {
    const auto p = j.at("patch").get<std::vector<int>>();
    if (p.size() != 2) throw ConfigError("patch must be [height, width]");
    r.train.patch_h = p[0];
    r.train.patch_w = p[1];
  }
  if (j.contains("init")) {
    const auto& init = j.at("init");
    if (init.is_string()) {
      if (init.get<std::string>() != "random") throw ConfigError("init must be \"random\" or {\"checkpoint\": path}");
    } else {
      r.init_checkpoint = fs::path(init.at("checkpoint").get<std::string>());
    }
  }
  return r;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j = {{"schema_version", kConfigSchemaVersion},
                      {"run", run_to_json(c.run)},
                      {"methods", c.methods},
                      {"output", c.output.string()},
                      {"seeds", c.seeds},
                      {"val_fraction", c.val_fraction},
                      {"workers", c.workers}};
  if (c.dataset) j["dataset"] = c.dataset->string();
  if (c.synthetic) {
    j["synthetic"] = to_json(*c.synthetic);
    j["dataset_per_seed"] = c.dataset_per_seed;
  }
  return j;
}

/// Parses a configuration document. Relative paths resolve against `base`.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j, const fs::path& base = {}) {
  ExperimentConfig c;
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kConfigSchemaVersion) {
      throw ConfigError("unsupported schema_version " + std::to_string(version));
    }
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() || base.empty() ? fs::path(p) : base / p; };
    if (j.contains("dataset")) c.dataset = resolve(j.at("dataset").get<std::string>());
    if (j.contains("synthetic")) {
      c.synthetic = synthetic_spec_from_json(j.at("synthetic"));
      c.dataset_per_seed = j.value("dataset_per_seed", false);
    }
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.run = run_from_json(j.value("run", nlohmann::json::object()));
    if (c.run.init_checkpoint) c.run.init_checkpoint = resolve(c.run.init_checkpoint->string());
    c.methods = j.at("methods").get<std::vector<std::string>>();
    c.output = resolve(j.value("output", std::string("results")));
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.workers = j.value("workers", c.workers);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return experiment_from_json(j, path.parent_path());
}

/// Standardized dataset with subtrain/subval tags, ready for every method.
inline Dataset prepare_dataset(const ExperimentConfig& c, std::uint64_t seed) {
  Dataset ds;
  if (c.synthetic) {
    const std::uint64_t data_seed = c.dataset_per_seed ? seed : c.synthetic->seed;
    ds = synthesize(*c.synthetic, data_seed);
  } else {
    ds = load_dataset(*c.dataset);
  }
  if (ds.manifest.normalization.empty() || c.synthetic) standardize(ds);
  if (ds.indices({Split::SubVal}).empty()) split_dataset(ds, c.val_fraction, ds.manifest.seed);
  return ds;
}

// ---------------------------------------------------------------------------
// Result tree

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }
inline nlohmann::json read_json(const fs::path& path) { return nlohmann::json::parse(read_text(path)); }

inline fs::path cell_dir(const fs::path& out, const std::string& method, std::uint64_t seed) {
  return out / "runs" / method / ("seed_" + std::to_string(seed));
}

inline nlohmann::json combination_json(const ChannelCombination& c, const DatasetManifest& m) {
  std::vector<std::string> names;
  for (int ch : c.channels) names.push_back(m.channel_names.at(static_cast<std::size_t>(ch - 1)));
  return {{"index", c.index}, {"channels", c.channels}, {"names", names}};
}

inline nlohmann::json confusion_json(const ConfusionMatrix& m) { return m.rows(); }

inline ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
  return ConfusionMatrix::from_rows(j.get<std::vector<std::vector<std::uint64_t>>>());
}

inline std::string key_values(std::initializer_list<std::pair<const char*, std::string>> kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    if (!out.empty()) out += ' ';
    out += k;
    out += '=';
    out += v;
  }
  return out;
}

struct CellOutcome {
  std::string method;
  std::uint64_t seed = 0;
  bool skipped = false;
  bool failed = false;
  int trainings = 0;
  std::string error;
};

struct ExperimentSummary {
  std::vector<CellOutcome> cells;
  int trainings = 0;
  bool partial() const {
    return std::any_of(cells.begin(), cells.end(), [](const CellOutcome& c) { return c.failed; });
  }
};

namespace detail {

inline nlohmann::json unit_metrics(const std::string& method, std::uint64_t seed, const UnitResult& u,
                                   const DatasetManifest& m, Metric metric, bool has_combination) {
  nlohmann::json j = {{"method", method},
                      {"seed", seed},
                      {"metric", to_string(metric)},
                      {"accuracy", u.test_accuracy},
                      {"confusion", confusion_json(u.test_confusion)},
                      {"final_loss", u.final_loss},
                      {"train_seconds", u.train_seconds},
                      {"peak_bytes", u.peak_bytes}};
  j["combination"] = has_combination ? combination_json(u.comb, m) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json osta_metrics(const std::string& method, std::uint64_t seed, const OstaResult& r,
                                   const DatasetManifest& m, const RunConfig& cfg) {
  nlohmann::json elim = nlohmann::json::array();
  for (const auto& e : r.eliminated) elim.push_back({{"pause", e.pause}, {"index", e.index}, {"score", e.score}});
  nlohmann::json sel = nlohmann::json::array();
  for (const auto& s : r.selection) sel.push_back({{"index", s.index}, {"score", s.score}});
  return {{"method", method},
          {"seed", seed},
          {"metric", to_string(cfg.train.metric)},
          {"strategy", to_string(cfg.strategy)},
          {"criterion", to_string(cfg.criterion)},
          {"combination", combination_json(r.scc, m)},
          {"accuracy", r.test_accuracy},
          {"confusion", confusion_json(r.test_confusion)},
          {"final_loss", r.final_loss},
          {"train_seconds", r.train_seconds},
          {"stage_seconds", r.stage_seconds},
          {"peak_bytes", r.peak_bytes},
          {"eliminated", elim},
          {"selection", sel}};
}

inline void write_log(const fs::path& dir, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  write_text(dir / "log.txt", text);
}

} // namespace detail

/// Completed-run manifest at <out>/completed.json.
inline std::set<std::string> completed_cells(const fs::path& out) {
  std::set<std::string> done;
  const auto path = out / "completed.json";
  if (!fs::exists(path)) return done;
  const auto j = read_json(path);
  for (const auto& e : j.at("runs")) done.insert(e.at("path").get<std::string>());
  return done;
}

inline void record_completed(const fs::path& out, const std::set<std::string>& done) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& p : done) runs.push_back({{"path", p}});
  write_json(out / "completed.json", {{"runs", runs}});
}

/// Runs every (method, seed) cell not yet recorded as complete. Failed cells
/// are reported and leave completed cells untouched.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg, bool force = false,
                                        std::ostream* log = &std::cerr) {
  cfg.validate();
  const fs::path out = cfg.output;
  fs::create_directories(out);
  write_json(out / "config.json", to_json(cfg));
  auto done = force ? std::set<std::string>{} : completed_cells(out);
  ExperimentSummary summary;
  auto say = [&](const std::string& line) {
    if (log) *log << line << std::endl;
  };

  std::vector<std::string> methods;
  for (const auto& m : known_methods()) {
    if (std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end()) methods.push_back(m);
  }

  for (std::uint64_t seed : cfg.seeds) {
    std::optional<Dataset> ds;
    for (const auto& method : methods) {
      const auto dir = cell_dir(out, method, seed);
      const auto rel = fs::relative(dir, out).generic_string();
      CellOutcome cell;
      cell.method = method;
      cell.seed = seed;
      if (done.count(rel) && fs::exists(dir / "metrics.json")) {
        cell.skipped = true;
        summary.cells.push_back(cell);
        say(key_values({{"event", "skip"}, {"method", method}, {"seed", std::to_string(seed)}}));
        continue;
      }
      say(key_values({{"event", "start"}, {"method", method}, {"seed", std::to_string(seed)}}));
      try {
        if (!ds) ds = prepare_dataset(cfg, seed);
        const auto& m = ds->manifest;
        const auto& tc = cfg.run.train;
        fs::create_directories(dir);
        if (method == "sgs") {
          SgsOptions opts;
          opts.workers = cfg.workers;
          opts.on_member = [&](const UnitResult& u) {
            const auto mdir = dir / "members" / ("index_" + std::to_string(u.comb.index));
            write_json(mdir / "metrics.json", detail::unit_metrics("sgs", seed, u, m, tc.metric, true));
            save_checkpoint(mdir / "checkpoint.ostk", unit_checkpoint(u, seed, tc.schedule.total_iters));
            say(key_values({{"event", "sgs_member"}, {"seed", std::to_string(seed)},
                            {"index", std::to_string(u.comb.index)}, {"accuracy", std::to_string(u.test_accuracy)}}));
          };
          auto res = run_sgs(*ds, cfg.run.k, tc, seed, opts);
          cell.trainings = static_cast<int>(res.table.rows.size() + res.failures.size());
          write_text(dir / "sgs.csv", sgs_to_csv(res.table));
          nlohmann::json rows = nlohmann::json::array();
          for (const auto& u : res.members) {
            if (u.params.tensors.empty()) continue;
            rows.push_back({{"index", u.comb.index},
                            {"path", "members/index_" + std::to_string(u.comb.index) + "/metrics.json"}});
          }
          nlohmann::json failures = nlohmann::json::array();
          for (const auto& f : res.failures) failures.push_back({{"index", f.index}, {"error", f.message}});
          if (res.table.partial) {
            write_json(dir / "failures.json", failures);
            throw std::runtime_error("SGS table is partial (" + std::to_string(res.failures.size()) + " failed members)");
          }
          write_json(dir / "metrics.json", {{"method", "sgs"},
                                            {"seed", seed},
                                            {"metric", to_string(tc.metric)},
                                            {"k", cfg.run.k},
                                            {"members", rows},
                                            {"partial", res.table.partial}});
        } else if (method == "df") {
          auto u = run_df(*ds, tc, seed);
          cell.trainings = 1;
          write_json(dir / "metrics.json", detail::unit_metrics(method, seed, u, m, tc.metric, false));
          save_checkpoint(dir / "checkpoint.ostk", unit_checkpoint(u, seed, tc.schedule.total_iters));
        } else if (method == "pca") {
          auto pca = pca_extract(*ds, cfg.run.k);
          auto u = train_combination(pca.data, all_channels(cfg.run.k), tc, seed);
          cell.trainings = 1;
          auto j = detail::unit_metrics(method, seed, u, m, tc.metric, false);
          j["pca"] = {{"rank_deficient", pca.model.rank_deficient}, {"informative", pca.model.informative}};
          write_json(dir / "metrics.json", j);
          save_checkpoint(dir / "checkpoint.ostk", unit_checkpoint(u, seed, tc.schedule.total_iters));
        } else if (method == "entropy_select") {
          const auto comb = entropy_select(*ds, cfg.run.k);
          auto u = train_combination(*ds, comb, tc, seed);
          cell.trainings = 1;
          write_json(dir / "metrics.json", detail::unit_metrics(method, seed, u, m, tc.metric, true));
          save_checkpoint(dir / "checkpoint.ostk", unit_checkpoint(u, seed, tc.schedule.total_iters));
        } else if (method == "osta" || method == "rank_once") {
          auto rc = cfg.run;
          if (method == "rank_once") rc.strategy = Strategy::RankOnce;
          auto r = run_osta(*ds, rc, seed, [&](const std::string& l) { say(l); });
          cell.trainings = 1;
          write_json(dir / "metrics.json", detail::osta_metrics(method, seed, r, m, rc));
          write_text(dir / "elimination.csv", elimination_csv(r.eliminated));
          detail::write_log(dir, r.log);
          save_checkpoint(dir / "checkpoint.ostk", r.checkpoint(seed, tc.schedule.total_iters));
          if (r.supernet_checkpoint) save_checkpoint(dir / "supernet.ostk", *r.supernet_checkpoint);
        } else if (method == "finetune_from_supernet") {
          const auto src = cell_dir(out, "osta", seed);
          if (!fs::exists(src / "metrics.json") || !fs::exists(src / "supernet.ostk")) {
            throw std::runtime_error("finetune_from_supernet needs a completed osta cell with a supernet checkpoint");
          }
          const auto scc_index = read_json(src / "metrics.json").at("combination").at("index").get<std::uint64_t>();
          const auto comb = combination_from_index(ds->n_channels(), cfg.run.k, scc_index);
          const auto ck = load_checkpoint(src / "supernet.ostk");
          auto r = finetune_from_supernet(*ds, ck, comb, tc, seed);
          cell.trainings = 1;
          write_json(dir / "metrics.json", detail::osta_metrics(method, seed, r, m, cfg.run));
          save_checkpoint(dir / "checkpoint.ostk", r.checkpoint(seed, tc.schedule.total_iters));
        }
        done.insert(rel);
        record_completed(out, done);
        say(key_values({{"event", "done"}, {"method", method}, {"seed", std::to_string(seed)}}));
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
        say(key_values({{"event", "failed"}, {"method", method}, {"seed", std::to_string(seed)},
                        {"error", "\"" + std::string(e.what()) + "\""}}));
      }
      summary.trainings += cell.trainings;
      summary.cells.push_back(cell);
    }
  }
  return summary;
}

} // namespace osta
