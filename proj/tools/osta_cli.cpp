// Command-line front end: dataset generation, splitting, experiment runs,
// reports, plots and verification.

#include "osta/osta.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace osta;

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kPartial = 3, kMismatch = 4 };

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  int workers = 0;
};

void log_line(std::initializer_list<std::pair<const char*, std::string>> kv) { std::cerr << key_values(kv) << '\n'; }

std::string quoted(const std::string& s) { return '"' + s + '"'; }

SyntheticSpec spec_from_config(const std::string& path) {
  if (path.empty()) return SyntheticSpec{};
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (j.contains("schema_version")) {
    if (!j.contains("synthetic")) throw ConfigError("experiment config has no synthetic section");
    j = j.at("synthetic");
  }
  try {
    return synthetic_spec_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

int cmd_gen(const Globals& g) {
  if (g.out.empty()) throw ConfigError("gen needs --out");
  auto spec = spec_from_config(g.config);
  const std::uint64_t seed = g.seed.value_or(spec.seed);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto ds = generate_synthetic(spec, seed, g.out);
  // Raw values stay on disk; the statistics are applied when the dataset is loaded.
  auto stats = channel_statistics(ds);
  for (auto& s : stats) {
    if (!(s.std > 0.0)) s.std = 1.0;
  }
  ds.manifest.normalization = stats;
  save_manifest(fs::path(g.out) / "manifest.json", ds.manifest);
  log_line({{"event", "generated"}, {"out", g.out}, {"seed", std::to_string(seed)},
            {"samples", std::to_string(ds.samples.size())}});
  return kOk;
}

int cmd_split(const Globals& g, const std::string& manifest, double fraction) {
  if (manifest.empty()) throw ConfigError("split needs --manifest");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("--val-fraction must lie in (0, 1)");
  auto ds = load_dataset(manifest, false);
  const auto res = split_dataset(ds, fraction, g.seed.value_or(ds.manifest.seed));
  const fs::path target = g.out.empty() ? fs::path(manifest) : fs::path(g.out) / "manifest.json";
  if (!g.out.empty() && fs::path(g.out) != fs::path(manifest).parent_path()) {
    save_dataset(g.out, ds);
  } else {
    save_manifest(target, ds.manifest);
  }
  log_line({{"event", "split"}, {"manifest", target.string()}, {"subtrain", std::to_string(res.subtrain.size())},
            {"subval", std::to_string(res.subval.size())}});
  return kOk;
}

int cmd_run(const Globals& g) {
  if (g.config.empty()) throw ConfigError("run needs --config");
  auto cfg = load_experiment(g.config);
  if (g.seed) cfg.seeds = {*g.seed};
  if (!g.out.empty()) cfg.output = g.out;
  if (g.workers > 0) cfg.workers = g.workers;
  const auto summary = run_experiment(cfg, g.force);
  int skipped = 0, failed = 0;
  for (const auto& c : summary.cells) {
    skipped += c.skipped;
    failed += c.failed;
  }
  log_line({{"event", "summary"}, {"cells", std::to_string(summary.cells.size())}, {"skipped", std::to_string(skipped)},
            {"failed", std::to_string(failed)}, {"trainings", std::to_string(summary.trainings)}});
  if (summary.partial()) return kPartial;
  try {
    emit_report(cfg.output);
  } catch (const std::exception& e) {
    log_line({{"event", "report_failed"}, {"error", quoted(e.what())}});
  }
  return kOk;
}

fs::path result_root(const Globals& g) {
  if (!g.out.empty()) return g.out;
  if (!g.config.empty()) return load_experiment(g.config).output;
  throw ConfigError("need --out or --config to locate the result tree");
}

int cmd_report(const Globals& g) {
  const auto root = result_root(g);
  const auto r = emit_report(root);
  for (const auto& w : r.warnings) log_line({{"event", "warning"}, {"message", quoted(w)}});
  for (const auto& [name, text] : r.files) log_line({{"event", "wrote"}, {"file", (root / name).string()}});
  return kOk;
}

int cmd_plot(const Globals& g) {
  const auto root = result_root(g);
  const auto r = emit_scatter(root);
  for (const auto& [name, text] : r.files) log_line({{"event", "wrote"}, {"file", (root / name).string()}});
  return kOk;
}

int cmd_verify(const Globals& g) {
  const auto root = result_root(g);
  const auto issues = verify_results(root);
  for (const auto& i : issues) log_line({{"event", "mismatch"}, {"detail", quoted(i)}});
  log_line({{"event", "verify"}, {"root", root.string()}, {"mismatches", std::to_string(issues.size())}});
  return issues.empty() ? kOk : kMismatch;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-shot task-adaptive channel selection"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "Experiment or synthetic-spec JSON");
  auto* seed_opt = app.add_option("--seed", seed, "Seed override");
  app.add_option("--out", g.out, "Output directory or result tree");
  app.add_flag("--force", g.force, "Re-run cells that are already complete");
  app.add_option("--workers", g.workers, "Worker threads for SGS members")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen", "Generate a planted-subset synthetic dataset");
  auto* split = app.add_subcommand("split", "Stratified subtrain/subval split of a dataset");
  std::string manifest;
  double fraction = 0.25;
  split->add_option("--manifest", manifest, "Dataset manifest.json")->required();
  split->add_option("--val-fraction", fraction, "Share of training samples moved to subval");
  auto* run = app.add_subcommand("run", "Run an experiment configuration");
  auto* report = app.add_subcommand("report", "Write report tables for a result tree");
  auto* plot = app.add_subcommand("plot", "Write CAP/accuracy scatter plots");
  auto* verify = app.add_subcommand("verify", "Recompute reports and compare with the files on disk");
  app.fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    if (gen->parsed()) return cmd_gen(g);
    if (split->parsed()) return cmd_split(g, manifest, fraction);
    if (run->parsed()) return cmd_run(g);
    if (report->parsed()) return cmd_report(g);
    if (plot->parsed()) return cmd_plot(g);
    if (verify->parsed()) return cmd_verify(g);
  } catch (const ConfigError& e) {
    log_line({{"event", "config_error"}, {"error", quoted(e.what())}});
    return kConfig;
  } catch (const std::exception& e) {
    log_line({{"event", "error"}, {"error", quoted(e.what())}});
    return kFailure;
  }
  return kFailure;
}
