#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "attackgan/embedding.hpp"

namespace attackgan {

/// Per-dimension min and max over all rows of an embedding table.
struct NormalizationStats {
  Vec<double> min;
  Vec<double> max;
};

template <typename Derived>
NormalizationStats normalization_stats(const Eigen::MatrixBase<Derived>& table) {
  if (table.rows() == 0) throw Error("metrics", "embedding table is empty");
  return {table.template cast<double>().colwise().minCoeff().transpose(),
          table.template cast<double>().colwise().maxCoeff().transpose()};
}

inline NormalizationStats normalization_stats(const EmbeddingMatrix& emb) { return normalization_stats(emb.table); }

inline constexpr double kMapeEpsilon = 1e-8;

namespace detail {

template <typename Derived>
double normalized_norm(const Eigen::MatrixBase<Derived>& table, Token tok, const NormalizationStats& stats) {
  double sq = 0.0;
  for (Eigen::Index k = 0; k < table.cols(); ++k) {
    const double span = stats.max(k) - stats.min(k);
    const double v = span > 0 ? (static_cast<double>(table(static_cast<Eigen::Index>(tok), k)) - stats.min(k)) / span : 0.0;
    sq += v * v;
  }
  return std::sqrt(sq);
}

}  // namespace detail

/// (100/T) sum_t |(|x_t| - |y_t|) / |x_t|| over min-max normalized token
/// embeddings. The reference x supplies the denominator.
template <typename Derived>
double mape(const TokenSequence& x, const TokenSequence& y, const Eigen::MatrixBase<Derived>& table,
            const NormalizationStats& stats) {
  if (x.size() != y.size()) {
    throw Error("metrics", "mape needs equal lengths, got " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  }
  if (x.granularity != y.granularity) throw Error("metrics", "mape needs sequences of one granularity");
  if (x.size() == 0) throw Error("metrics", "mape of empty sequences");
  double sum = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    if (x.tokens[t] >= static_cast<std::size_t>(table.rows()) || y.tokens[t] >= static_cast<std::size_t>(table.rows())) {
      throw Error("metrics", "token outside embedding table");
    }
    const double nx = detail::normalized_norm(table, x.tokens[t], stats);
    const double ny = detail::normalized_norm(table, y.tokens[t], stats);
    sum += std::abs((nx - ny) / (nx > 0 ? nx : kMapeEpsilon));
  }
  return 100.0 * sum / static_cast<double>(x.size());
}

inline double mape(const TokenSequence& x, const TokenSequence& y, const EmbeddingMatrix& emb,
                   const NormalizationStats& stats) {
  if (x.granularity != emb.granularity) throw Error("metrics", "sequence granularity does not match embedding");
  return mape(x, y, emb.table, stats);
}

/// Percentages are rounded to 6 decimals so CSV text round-trips exactly.
inline double round_percent(double v) { return std::round(v * 1e6) / 1e6; }

/// Percentage of labels flagged malicious.
inline double afr(std::span<const Label> labels) {
  if (labels.empty()) throw Error("metrics", "afr of an empty label list");
  std::size_t fail = 0;
  for (Label l : labels) fail += l == Label::malicious;
  return round_percent(100.0 * static_cast<double>(fail) / static_cast<double>(labels.size()));
}

inline double asr_from_afr(double afr_percent) { return round_percent(100.0 - afr_percent); }

inline double asr(std::span<const Label> labels) { return asr_from_afr(afr(labels)); }

inline double asir(double asr_attack, double asr_original) { return asr_attack - asr_original; }

struct MetricRecord {
  std::size_t epoch = 0;
  std::string nids_kind;
  std::size_t mu = 0;
  Granularity embedding_mode = Granularity::one_byte;
  double afr = 0.0;
  double asr = 0.0;
  double asir = 0.0;
  double mape = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

inline constexpr const char* kMetricCsvHeader = "epoch,nids_kind,mu,embedding_mode,afr,asr,asir,mape";

inline std::string format_metric_row(const MetricRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%s,%zu,%s,%.6f,%.6f,%.6f,%.6f", r.epoch, r.nids_kind.c_str(), r.mu,
                std::string(to_string(r.embedding_mode)).c_str(), r.afr, r.asr, r.asir, r.mape);
  return buf;
}

inline std::string format_metric_csv(std::span<const MetricRecord> rows) {
  std::string out = std::string(kMetricCsvHeader) + "\n";
  for (const auto& r : rows) out += format_metric_row(r) + "\n";
  return out;
}

inline MetricRecord parse_metric_row(const std::string& line, std::size_t line_no = 0) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
  if (f.size() != 8) {
    throw Error("metrics", "line " + std::to_string(line_no) + ": expected 8 fields, found " + std::to_string(f.size()));
  }
  try {
    MetricRecord r;
    r.epoch = std::stoull(f[0]);
    r.nids_kind = f[1];
    r.mu = std::stoull(f[2]);
    r.embedding_mode = granularity_from_string(f[3]);
    r.afr = std::stod(f[4]);
    r.asr = std::stod(f[5]);
    r.asir = std::stod(f[6]);
    r.mape = std::stod(f[7]);
    return r;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    throw Error("metrics", "line " + std::to_string(line_no) + ": malformed number");
  }
}

inline std::vector<MetricRecord> parse_metric_csv(const std::string& text) {
  std::stringstream ss(text);
  std::string line;
  if (!std::getline(ss, line)) throw Error("metrics", "metric CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kMetricCsvHeader) throw Error("metrics", "unexpected metric CSV header '" + line + "'");
  std::vector<MetricRecord> rows;
  std::size_t line_no = 1;
  while (std::getline(ss, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(parse_metric_row(line, line_no));
  }
  return rows;
}

inline std::vector<MetricRecord> read_metric_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("metrics", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_metric_csv(ss.str());
}

}  // namespace attackgan
