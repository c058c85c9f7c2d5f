#pragma once

#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace osta {

/// One completed cell of a result tree, with accuracies recomputed from the
/// stored confusion matrices.
struct RunRecord {
  std::string method;
  std::uint64_t seed = 0;
  nlohmann::json metrics;
  std::optional<std::uint64_t> index;
  std::string channels = "-";
  double accuracy = 0.0;
};

struct ResultTree {
  std::vector<RunRecord> runs;              // known_methods order, then seed
  std::map<std::uint64_t, SgsTable> sgs;    // by seed
  std::map<std::uint64_t, std::map<std::uint64_t, RunRecord>> sgs_members; // seed -> index -> member
};

namespace detail {

inline double recompute_accuracy(const nlohmann::json& m) {
  return score(confusion_from_json(m.at("confusion")), parse_metric(m.at("metric").get<std::string>()));
}

inline RunRecord make_record(const std::string& method, std::uint64_t seed, nlohmann::json m) {
  RunRecord r;
  r.method = method;
  r.seed = seed;
  r.metrics = std::move(m);
  const auto& c = r.metrics.at("combination");
  if (!c.is_null()) {
    r.index = c.at("index").get<std::uint64_t>();
    std::string names;
    for (const auto& n : c.at("names")) names += (names.empty() ? "" : " ") + n.get<std::string>();
    r.channels = names;
  }
  r.accuracy = recompute_accuracy(r.metrics);
  return r;
}

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  // avoid "-0.00"
  if (std::string(buf).find_first_not_of("-0.") == std::string::npos) std::snprintf(buf, sizeof buf, "%.*f", digits, 0.0);
  return buf;
}

inline std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::uint64_t seed_of(const fs::path& dir) {
  const auto name = dir.filename().string();
  if (name.rfind("seed_", 0) != 0) throw std::runtime_error("unexpected run directory " + dir.string());
  return std::stoull(name.substr(5));
}

inline bool is_osta_like(const std::string& m) { return m == "osta" || m == "rank_once" || m == "finetune_from_supernet"; }

} // namespace detail

inline ResultTree load_results(const fs::path& out) {
  ResultTree tree;
  for (const auto& method : known_methods()) {
    const auto mdir = out / "runs" / method;
    if (!fs::is_directory(mdir)) continue;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(mdir)) {
      if (e.is_directory() && fs::exists(e.path() / "metrics.json")) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end(),
              [](const fs::path& a, const fs::path& b) { return detail::seed_of(a) < detail::seed_of(b); });
    for (const auto& dir : dirs) {
      const auto seed = detail::seed_of(dir);
      auto m = read_json(dir / "metrics.json");
      if (method == "sgs") {
        SgsTable table;
        table.base_seed = seed;
        table.partial = m.value("partial", false);
        std::map<std::uint64_t, RunRecord> members;
        for (const auto& row : m.at("members")) {
          auto rec = detail::make_record("sgs", seed, read_json(dir / row.at("path").get<std::string>()));
          table.rows.push_back({*rec.index, rec.accuracy});
          members.emplace(*rec.index, std::move(rec));
        }
        std::sort(table.rows.begin(), table.rows.end(), [](const SgsRow& a, const SgsRow& b) { return a.index < b.index; });
        if (table.rows.empty()) continue;
        // The SGS summary row is the best member.
        const auto best = std::max_element(table.rows.begin(), table.rows.end(), [](const SgsRow& a, const SgsRow& b) {
          return a.accuracy < b.accuracy || (a.accuracy == b.accuracy && a.index > b.index);
        });
        tree.runs.push_back(members.at(best->index));
        tree.sgs.emplace(seed, std::move(table));
        tree.sgs_members.emplace(seed, std::move(members));
      } else {
        tree.runs.push_back(detail::make_record(method, seed, std::move(m)));
      }
    }
  }
  return tree;
}

/// Rendered report files keyed by path relative to the result root.
struct RenderedFiles {
  std::map<std::string, std::string> files;
  std::vector<std::string> warnings;
};

inline RenderedFiles render_report(const ResultTree& tree) {
  using detail::fixed;
  RenderedFiles out;
  if (tree.runs.empty()) throw std::runtime_error("result tree has no completed runs");
  const bool has_sgs = !tree.sgs.empty();
  const bool has_osta = std::any_of(tree.runs.begin(), tree.runs.end(),
                                    [](const RunRecord& r) { return detail::is_osta_like(r.method); });
  const bool show_dca = has_sgs && has_osta;
  if (!has_sgs) out.warnings.push_back("no SGS table in the result tree; CAP and DCA columns omitted");

  std::string csv = "method,seed,index,channels,accuracy";
  if (has_sgs) csv += ",cap";
  if (show_dca) csv += ",dca";
  csv += "\n";
  nlohmann::json rows = nlohmann::json::array();
  std::vector<double> dcas;
  for (const auto& r : tree.runs) {
    const auto table = tree.sgs.find(r.seed);
    std::optional<double> cap_v, dca_v;
    if (table != tree.sgs.end()) {
      cap_v = cap(r.accuracy, table->second);
      if (detail::is_osta_like(r.method) && r.index) dca_v = dca(r.accuracy, *r.index, table->second);
    }
    if (r.method == "osta" && dca_v) dcas.push_back(*dca_v);
    csv += r.method + "," + std::to_string(r.seed) + "," + (r.index ? std::to_string(*r.index) : "-") + "," + r.channels +
           "," + fixed(r.accuracy, 2);
    if (has_sgs) csv += "," + (cap_v ? fixed(*cap_v, 2) : std::string());
    if (show_dca) csv += "," + (dca_v ? fixed(*dca_v, 2) : std::string());
    csv += "\n";
    nlohmann::json row = {{"method", r.method},
                          {"seed", r.seed},
                          {"index", r.index ? nlohmann::json(*r.index) : nlohmann::json("-")},
                          {"channels", r.channels},
                          {"accuracy", r.accuracy}};
    if (cap_v) row["cap"] = *cap_v;
    if (dca_v) row["dca"] = *dca_v;
    rows.push_back(row);
  }
  out.files["report.csv"] = csv;

  nlohmann::json report = {{"rows", rows}, {"warnings", out.warnings}};

  // Measured RAT / RAM against the SGS member trained on the same combination.
  if (has_sgs && has_osta) {
    std::string eff = "seed,index,osta_seconds,direct_seconds,rat,osta_peak_bytes,direct_peak_bytes,ram\n";
    nlohmann::json ej = nlohmann::json::array();
    for (const auto& r : tree.runs) {
      if (r.method != "osta" || !r.index) continue;
      const auto members = tree.sgs_members.find(r.seed);
      if (members == tree.sgs_members.end() || !members->second.count(*r.index)) continue;
      const auto& direct = members->second.at(*r.index).metrics;
      auto peak = [](const nlohmann::json& m) {
        std::int64_t p = 0;
        for (const auto& [phase, bytes] : m.at("peak_bytes").items()) p = std::max(p, bytes.get<std::int64_t>());
        return p;
      };
      const double os = r.metrics.at("train_seconds").get<double>();
      const double ds = direct.at("train_seconds").get<double>();
      const auto op = peak(r.metrics), dp = peak(direct);
      const double rat = measure_rat(os, ds), ram = measure_ram(op, dp);
      eff += std::to_string(r.seed) + "," + std::to_string(*r.index) + "," + fixed(os, 3) + "," + fixed(ds, 3) + "," +
             fixed(rat, 1) + "," + std::to_string(op) + "," + std::to_string(dp) + "," + fixed(ram, 1) + "\n";
      ej.push_back({{"seed", r.seed}, {"index", *r.index}, {"osta_seconds", os}, {"direct_seconds", ds},
                    {"rat", rat}, {"osta_peak_bytes", op}, {"direct_peak_bytes", dp}, {"ram", ram}});
    }
    out.files["efficiency.csv"] = eff;
    report["efficiency"] = ej;
  }

  // Most robust combination: CAP of each combination across SGS tables.
  if (tree.sgs.size() >= 2) {
    std::map<std::uint64_t, std::vector<double>> caps;
    std::map<std::uint64_t, std::string> names;
    for (const auto& [seed, table] : tree.sgs) {
      for (const auto& row : table.rows) {
        caps[row.index].push_back(cap(row.accuracy, table));
        names[row.index] = tree.sgs_members.at(seed).at(row.index).channels;
      }
    }
    struct MrcRow {
      std::uint64_t index;
      MeanStd s;
      std::size_t runs;
    };
    std::vector<MrcRow> mrc;
    for (const auto& [index, v] : caps) {
      if (v.size() >= 2) mrc.push_back({index, mrc_summary(v), v.size()});
    }
    std::sort(mrc.begin(), mrc.end(), [](const MrcRow& a, const MrcRow& b) {
      return a.s.mean > b.s.mean || (a.s.mean == b.s.mean && a.index < b.index);
    });
    std::string text = "index,channels,mean_cap,std_cap,runs\n";
    nlohmann::json mj = nlohmann::json::array();
    for (const auto& m : mrc) {
      text += std::to_string(m.index) + "," + names[m.index] + "," + fixed(m.s.mean, 2) + "," + fixed(m.s.std, 2) + "," +
              std::to_string(m.runs) + "\n";
      mj.push_back({{"index", m.index}, {"mean_cap", m.s.mean}, {"std_cap", m.s.std}, {"runs", m.runs}});
    }
    out.files["mrc.csv"] = text;
    report["mrc"] = mj;
  }

  if (!dcas.empty()) {
    auto sorted = dcas;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    report["dca_median"] = median;
    report["dca_median_negative"] = median < 0;
  }
  out.files["report.json"] = report.dump(2) + "\n";
  return out;
}

namespace detail {

struct Marker {
  std::string kind; // sgs or a method name
  std::string label;
  double cap;
  double accuracy;
};

inline std::string svg_marker(const Marker& m, double x, double y) {
  char buf[320];
  if (m.kind == "sgs") {
    std::snprintf(buf, sizeof buf, "<circle class=\"sgs\" cx=\"%.3f\" cy=\"%.3f\" r=\"4\" fill=\"#9aa5b1\"/>\n", x, y);
  } else {
    static const std::map<std::string, std::string> colors = {
        {"osta", "#d1495b"}, {"rank_once", "#edae49"}, {"finetune_from_supernet", "#8e44ad"},
        {"df", "#00798c"},   {"pca", "#30638e"},       {"entropy_select", "#3a7d44"}};
    const auto it = colors.find(m.kind);
    const std::string color = it == colors.end() ? "#333333" : it->second;
    std::snprintf(buf, sizeof buf,
                  "<path class=\"%s\" d=\"M %.3f %.3f l 7 7 l -7 7 l -7 -7 z\" fill=\"%s\" stroke=\"#222\"><title>%s</title></path>\n",
                  m.kind.c_str(), x, y - 7, color.c_str(), m.label.c_str());
  }
  return buf;
}

} // namespace detail

/// One SVG and one CSV per seed with an SGS table: SGS combinations as grey
/// dots, every other method as a coloured diamond.
inline RenderedFiles render_scatter(const ResultTree& tree) {
  RenderedFiles out;
  if (tree.sgs.empty()) throw std::runtime_error("scatter plot needs an SGS table");
  for (const auto& [seed, table] : tree.sgs) {
    std::vector<detail::Marker> markers;
    for (const auto& row : table.rows) {
      markers.push_back({"sgs", "sgs " + std::to_string(row.index), cap(row.accuracy, table), row.accuracy});
    }
    for (const auto& r : tree.runs) {
      if (r.seed != seed || r.method == "sgs") continue;
      markers.push_back({r.method, r.method, cap(r.accuracy, table), r.accuracy});
    }
    double lo = markers.front().accuracy, hi = lo;
    for (const auto& m : markers) {
      lo = std::min(lo, m.accuracy);
      hi = std::max(hi, m.accuracy);
    }
    const double pad = std::max(1.0, 0.05 * (hi - lo));
    lo = std::max(0.0, lo - pad);
    hi = std::min(100.0, hi + pad);
    if (hi <= lo) hi = lo + 1.0;

    const double W = 640, H = 480, L = 60, R = 20, Tm = 20, B = 50;
    auto px = [&](double cap_v) { return L + (W - L - R) * cap_v / 100.0; };
    auto py = [&](double acc) { return H - B - (H - Tm - B) * (acc - lo) / (hi - lo); };

    std::string csv = "kind,label,cap,accuracy\n";
    char buf[256];
    std::string svg;
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n", W,
                  H, W, H);
    svg += buf;
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<path d=\"M %.0f %.0f L %.0f %.0f L %.0f %.0f\" fill=\"none\" stroke=\"black\"/>\n", L, Tm, L, H - B,
                  W - R, H - B);
    svg += buf;
    for (int t = 0; t <= 100; t += 20) {
      std::snprintf(buf, sizeof buf,
                    "<text x=\"%.3f\" y=\"%.0f\" font-size=\"11\" text-anchor=\"middle\">%d</text>\n", px(t), H - B + 16, t);
      svg += buf;
    }
    for (int t = 0; t <= 4; ++t) {
      const double v = lo + (hi - lo) * t / 4.0;
      std::snprintf(buf, sizeof buf, "<text x=\"%.0f\" y=\"%.3f\" font-size=\"11\" text-anchor=\"end\">%.1f</text>\n",
                    L - 6, py(v) + 4, v);
      svg += buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.0f\" y=\"%.0f\" font-size=\"12\" text-anchor=\"middle\">CAP (%%)</text>\n"
                  "<text x=\"14\" y=\"%.0f\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 %.0f)\">accuracy (%%)</text>\n",
                  (L + W - R) / 2, H - 12, (Tm + H - B) / 2, (Tm + H - B) / 2);
    svg += buf;
    for (const auto& m : markers) {
      svg += detail::svg_marker(m, px(m.cap), py(m.accuracy));
      csv += m.kind + "," + m.label + "," + detail::exact(m.cap) + "," + detail::exact(m.accuracy) + "\n";
    }
    svg += "</svg>\n";
    const std::string stem = "plots/scatter_seed_" + std::to_string(seed);
    out.files[stem + ".svg"] = svg;
    out.files[stem + ".csv"] = csv;
  }
  return out;
}

inline void write_rendered(const fs::path& out, const RenderedFiles& r) {
  for (const auto& [rel, text] : r.files) write_text(out / rel, text);
}

inline RenderedFiles emit_report(const fs::path& out) {
  auto r = render_report(load_results(out));
  write_rendered(out, r);
  return r;
}

inline RenderedFiles emit_scatter(const fs::path& out) {
  auto r = render_scatter(load_results(out));
  write_rendered(out, r);
  return r;
}

/// Recomputes every stored accuracy and every emitted report/plot file and
/// lists the differences. An empty list means the tree verifies.
inline std::vector<std::string> verify_results(const fs::path& out) {
  std::vector<std::string> issues;
  const auto tree = load_results(out);
  auto check_stored = [&](const RunRecord& r, const std::string& where) {
    const double stored = r.metrics.at("accuracy").get<double>();
    if (stored != r.accuracy) {
      issues.push_back(where + ": stored accuracy " + detail::exact(stored) + " != recomputed " + detail::exact(r.accuracy));
    }
  };
  for (const auto& r : tree.runs) check_stored(r, "runs/" + r.method + "/seed_" + std::to_string(r.seed));
  for (const auto& [seed, members] : tree.sgs_members) {
    for (const auto& [index, rec] : members) check_stored(rec, "sgs seed " + std::to_string(seed) + " index " + std::to_string(index));
    const auto csv_path = cell_dir(out, "sgs", seed) / "sgs.csv";
    if (fs::exists(csv_path) && read_text(csv_path) != sgs_to_csv(tree.sgs.at(seed))) {
      issues.push_back("sgs seed " + std::to_string(seed) + ": sgs.csv differs from member metrics");
    }
  }
  auto compare = [&](const RenderedFiles& r) {
    for (const auto& [rel, text] : r.files) {
      const auto path = out / rel;
      if (!fs::exists(path)) {
        issues.push_back(rel + ": missing");
      } else if (read_text(path) != text) {
        issues.push_back(rel + ": differs from recomputation");
      }
    }
  };
  compare(render_report(tree));
  if (!tree.sgs.empty()) compare(render_scatter(tree));
  return issues;
}

} // namespace osta
