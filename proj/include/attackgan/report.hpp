#pragma once

// Post-hoc curves and summary table from metric CSVs.

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "attackgan/metrics.hpp"
#include "attackgan/png.hpp"

namespace attackgan {

struct RunCurves {
  std::string run;  // label, usually the run directory name
  std::vector<MetricRecord> rows;
};

struct SummaryRow {
  std::string run;
  std::string which;  // "final" or "best"
  MetricRecord record;
  double asr_original = 0.0;
  double asir = 0.0;  // record.asr - asr_original
};

inline constexpr const char* kSummaryCsvHeader = "run,row,epoch,nids_kind,mu,embedding_mode,afr,asr,asir,mape,asr_original";

inline std::string plot_file_name(const std::string& metric, const std::string& nids, const std::string& mu, Granularity mode) {
  return metric + "_" + nids + "_" + mu + "_" + std::string(to_string(mode)) + ".png";
}

namespace detail {

/// ASR of the untouched malicious packets, recovered from a row as asr - asir.
inline double original_asr(const MetricRecord& r) { return round_percent(r.asr - r.asir); }

inline double metric_value(const MetricRecord& r, const std::string& metric) {
  if (metric == "afr") return r.afr;
  if (metric == "mape") return r.mape;
  if (metric == "asir") return r.asir;
  if (metric == "asr") return r.asr;
  throw Error("report", "unknown metric '" + metric + "'");
}

inline Series series_of(const std::vector<MetricRecord>& rows, const std::string& metric, const std::string& label) {
  Series s{label, {}, {}};
  for (const auto& r : rows) {
    s.x.push_back(static_cast<double>(r.epoch));
    s.y.push_back(metric_value(r, metric));
  }
  return s;
}

}  // namespace detail

inline const std::vector<std::string>& report_metrics() {
  static const std::vector<std::string> m{"afr", "mape", "asir"};
  return m;
}

/// Final and best-AFR rows for every (run, nids_kind). Ties on AFR keep the
/// earliest epoch.
inline std::vector<SummaryRow> summarize(const std::vector<RunCurves>& runs) {
  std::vector<SummaryRow> out;
  for (const auto& run : runs) {
    std::map<std::string, std::vector<MetricRecord>> by_kind;
    for (const auto& r : run.rows) by_kind[r.nids_kind].push_back(r);
    for (const auto& [kind, rows] : by_kind) {
      const MetricRecord* best = &rows.front();
      for (const auto& r : rows)
        if (r.afr < best->afr) best = &r;
      for (const auto& [which, rec] : {std::pair<std::string, const MetricRecord*>{"final", &rows.back()}, {"best", best}}) {
        SummaryRow s{run.run, which, *rec, detail::original_asr(*rec), 0.0};
        s.asir = round_percent(rec->asr - s.asr_original);
        out.push_back(s);
      }
    }
  }
  return out;
}

inline std::string format_summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out = std::string(kSummaryCsvHeader) + "\n";
  char buf[512];
  for (const auto& s : rows) {
    const auto& r = s.record;
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%s,%zu,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", s.run.c_str(), s.which.c_str(), r.epoch,
                  r.nids_kind.c_str(), r.mu, std::string(to_string(r.embedding_mode)).c_str(), r.afr, r.asr, s.asir, r.mape,
                  s.asr_original);
    out += buf;
  }
  return out;
}

struct ReportOutput {
  std::vector<std::filesystem::path> plots;
  std::filesystem::path summary;
};

/// Writes one plot per metric and (nids_kind, mu, mode), overlaying runs that
/// share the key, plus a "sweep" plot per (nids_kind, mode) when several mu
/// values are present, and summary.csv.
inline ReportOutput write_report(const std::vector<RunCurves>& runs, const std::filesystem::path& out_dir) {
  for (const auto& run : runs)
    if (run.rows.empty()) throw Error("report", "run " + run.run + " has no metric rows");
  std::filesystem::create_directories(out_dir);
  ReportOutput out;
  using Key = std::tuple<std::string, std::size_t, Granularity>;
  std::map<Key, std::vector<std::pair<std::string, std::vector<MetricRecord>>>> groups;
  for (const auto& run : runs) {
    std::map<Key, std::vector<MetricRecord>> split;
    for (const auto& r : run.rows) split[{r.nids_kind, r.mu, r.embedding_mode}].push_back(r);
    for (auto& [key, rows] : split) groups[key].emplace_back(run.run, std::move(rows));
  }
  for (const auto& metric : report_metrics()) {
    std::map<std::pair<std::string, Granularity>, std::vector<Series>> sweeps;
    std::map<std::pair<std::string, Granularity>, std::set<std::size_t>> sweep_mus;
    for (const auto& [key, members] : groups) {
      const auto& [nids, mu, mode] = key;
      std::vector<Series> series;
      for (const auto& [name, rows] : members) {
        series.push_back(detail::series_of(rows, metric, name));
        sweeps[{nids, mode}].push_back(detail::series_of(rows, metric, "mu=" + std::to_string(mu) + " " + name));
        sweep_mus[{nids, mode}].insert(mu);
      }
      const auto path = out_dir / plot_file_name(metric, nids, std::to_string(mu), mode);
      write_line_plot(path, metric + " vs epoch, " + nids + ", mu=" + std::to_string(mu) + ", " + std::string(to_string(mode)),
                      series);
      out.plots.push_back(path);
    }
    for (const auto& [key, series] : sweeps) {
      if (sweep_mus[key].size() < 2) continue;
      const auto path = out_dir / plot_file_name(metric, key.first, "sweep", key.second);
      write_line_plot(path, metric + " vs epoch, " + key.first + ", mu sweep, " + std::string(to_string(key.second)), series);
      out.plots.push_back(path);
    }
  }
  out.summary = out_dir / "summary.csv";
  const std::string text = format_summary_csv(summarize(runs));
  detail::write_file_bytes(out.summary, std::vector<unsigned char>(text.begin(), text.end()), "report");
  return out;
}

/// Loads metrics.csv from each run directory and writes the report.
inline ReportOutput report(const std::vector<std::filesystem::path>& run_dirs, const std::filesystem::path& out_dir) {
  if (run_dirs.empty()) throw Error("report", "no run directories given");
  std::vector<RunCurves> runs;
  for (const auto& dir : run_dirs) {
    const auto csv = std::filesystem::is_directory(dir) ? dir / "metrics.csv" : dir;
    if (!std::filesystem::exists(csv)) throw Error("report", "missing " + csv.string());
    auto label = (std::filesystem::is_directory(dir) ? dir : dir.parent_path()).lexically_normal().filename().string();
    if (label.empty()) label = std::filesystem::absolute(dir).lexically_normal().parent_path().filename().string();
    runs.push_back({label, read_metric_csv(csv)});
  }
  return write_report(runs, out_dir);
}

}  // namespace attackgan
