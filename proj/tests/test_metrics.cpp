#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "attackgan/metrics.hpp"
#include "test_util.hpp"

using namespace attackgan;

namespace {

TokenSequence seq_of(std::vector<Token> t) { return TokenSequence{std::move(t), Granularity::one_byte}; }

EmbeddingMatrix random_embedding(std::size_t V, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-2.0f, 3.0f);
  EmbeddingMatrix e;
  e.table.resize(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < e.table.size(); ++i) e.table.data()[i] = u(rng);
  return e;
}

TokenSequence random_seq(std::mt19937_64& rng, std::size_t T, std::size_t V) {
  TokenSequence s = seq_of(std::vector<Token>(T));
  for (auto& t : s.tokens) t = static_cast<Token>(rng() % V);
  return s;
}

}  // namespace

TEST(Metrics, NormalizationStatsArePerDimension) {
  RowMat<float> t(3, 2);
  t << 1, -4, 5, 2, -3, 0;
  const auto s = normalization_stats(t);
  EXPECT_EQ(s.min(0), -3.0);
  EXPECT_EQ(s.max(0), 5.0);
  EXPECT_EQ(s.min(1), -4.0);
  EXPECT_EQ(s.max(1), 2.0);
  EXPECT_THROW(normalization_stats(RowMat<float>(0, 2)), Error);
}

TEST(Metrics, MapeOfIdenticalSequencesIsZero) {
  const auto emb = random_embedding(50, 6, 1);
  const auto stats = normalization_stats(emb);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto x = random_seq(rng, 20, 50);
    EXPECT_EQ(mape(x, x, emb, stats), 0.0);
  }
}

TEST(Metrics, MapeAnalyticHalf) {
  // Normalized norms: token 0 -> 2, token 1 -> 1, token 2 -> 0.
  EmbeddingMatrix emb;
  emb.table.resize(3, 4);
  emb.table.row(0).setConstant(1.0f);
  emb.table.row(1).setConstant(0.5f);
  emb.table.row(2).setZero();
  const auto stats = normalization_stats(emb);
  EXPECT_DOUBLE_EQ(mape(seq_of({0}), seq_of({1}), emb, stats), 50.0);
  // The reference supplies the denominator, so the reverse pair differs.
  EXPECT_DOUBLE_EQ(mape(seq_of({1}), seq_of({0}), emb, stats), 100.0);
  EXPECT_DOUBLE_EQ(mape(seq_of({0, 0}), seq_of({1, 0}), emb, stats), 25.0);
  // Zero reference norm falls back to the epsilon denominator.
  EXPECT_DOUBLE_EQ(mape(seq_of({2}), seq_of({1}), emb, stats), 100.0 / kMapeEpsilon);
}

TEST(Metrics, MapeRejectsMismatchedInputs) {
  const auto emb = random_embedding(10, 3, 1);
  const auto stats = normalization_stats(emb);
  EXPECT_THROW(mape(seq_of({1, 2}), seq_of({1}), emb, stats), Error);
  EXPECT_THROW(mape(seq_of({}), seq_of({}), emb, stats), Error);
  EXPECT_THROW(mape(seq_of({1}), seq_of({11}), emb, stats), Error);
}

TEST(Metrics, MapeIsPermutationInvariant) {
  const auto emb = random_embedding(30, 5, 3);
  const auto stats = normalization_stats(emb);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    auto x = random_seq(rng, 16, 30), y = random_seq(rng, 16, 30);
    const double before = mape(x, y, emb, stats);
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    auto px = x, py = y;
    for (std::size_t t = 0; t < 16; ++t) px.tokens[t] = x.tokens[perm[t]], py.tokens[t] = y.tokens[perm[t]];
    EXPECT_NEAR(mape(px, py, emb, stats), before, 1e-10);
  }
}

TEST(Metrics, MapeIsScaleInvariant) {
  const auto emb = random_embedding(30, 5, 3);
  auto scaled = emb;
  scaled.table *= 3.5f;
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    const auto x = random_seq(rng, 16, 30), y = random_seq(rng, 16, 30);
    EXPECT_NEAR(mape(x, y, scaled, normalization_stats(scaled)), mape(x, y, emb, normalization_stats(emb)), 1e-4);
  }
  // In double the only drift is rounding.
  const Mat<double> base = emb.table.cast<double>();
  for (double c : {0.01, 7.0 / 3.0, 1e3}) {
    const Mat<double> s = base * c;
    for (int i = 0; i < 20; ++i) {
      const auto x = random_seq(rng, 16, 30), y = random_seq(rng, 16, 30);
      EXPECT_NEAR(mape(x, y, s, normalization_stats(s)), mape(x, y, base, normalization_stats(base)), 1e-8);
    }
  }
}

TEST(Metrics, AfrCountsFlaggedPackets) {
  const std::vector<Label> l{Label::malicious, Label::malicious, Label::benign, Label::malicious};
  EXPECT_EQ(afr(l), 75.0);
  EXPECT_EQ(asr(l), 25.0);
  EXPECT_EQ(afr(std::vector<Label>(5, Label::benign)), 0.0);
  EXPECT_THROW(afr(std::vector<Label>{}), Error);
  EXPECT_EQ(asir(40.0, 40.0), 0.0);
  EXPECT_EQ(asir(30.0, 45.0), -15.0);
}

TEST(Metrics, AfrMatchesTallyAndComplementsAsr) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 700;
    std::vector<Label> l(n);
    std::size_t flagged = 0;
    for (auto& v : l) {
      v = rng() % 3 ? Label::malicious : Label::benign;
      flagged += v == Label::malicious;
    }
    const double tally = std::round(100.0 * static_cast<double>(flagged) / static_cast<double>(n) * 1e6) / 1e6;
    EXPECT_EQ(afr(l), tally);
    EXPECT_EQ(afr(l) + asr(l), 100.0);
  }
}

TEST(Metrics, CsvRoundTrip) {
  std::vector<MetricRecord> rows;
  for (std::size_t e = 1; e <= 4; ++e) {
    MetricRecord r{e, "svm", 20, e % 2 ? Granularity::one_byte : Granularity::two_byte, 0, 0, 0, 0};
    r.afr = round_percent(100.0 * static_cast<double>(e) / 7.0);
    r.asr = asr_from_afr(r.afr);
    r.asir = round_percent(r.asr - 12.5);
    r.mape = round_percent(17.0 + 1.0 / static_cast<double>(e));
    rows.push_back(r);
  }
  const std::string text = format_metric_csv(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')), "epoch,nids_kind,mu,embedding_mode,afr,asr,asir,mape");
  EXPECT_EQ(parse_metric_csv(text), rows);
  EXPECT_EQ(format_metric_csv(parse_metric_csv(text)), text);
  EXPECT_THROW(parse_metric_csv("epoch,afr\n1,2\n"), Error);
  EXPECT_THROW(parse_metric_csv(std::string(kMetricCsvHeader) + "\n1,dt,2\n"), Error);
}
