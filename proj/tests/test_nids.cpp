#include <random>

#include <gtest/gtest.h>

#include "attackgan/nids.hpp"
#include "test_util.hpp"

using namespace attackgan;

namespace {

LabeledDataset desk(std::size_t n, std::uint64_t seed) {
  SynthSpec s;
  s.n_benign = n;
  s.n_malicious = n;
  s.packet_length = 64;
  for (std::size_t i = 8; i < 40; ++i) s.signature_positions.push_back(i);
  s.noise_seed = seed;
  return synthesize_corpus(s);
}

/// Two overlapping Gaussian blobs in 2-D, scaled into [0, 1].
std::pair<detail::DMat, std::vector<double>> blobs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.12);
  detail::DMat X(static_cast<Eigen::Index>(n), 2);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i % 2 ? 1.0 : 0.0;
    const double c = y[i] > 0.5 ? 0.65 : 0.35;
    X(static_cast<Eigen::Index>(i), 0) = std::clamp(c + g(rng), 0.0, 1.0);
    X(static_cast<Eigen::Index>(i), 1) = std::clamp(c + g(rng), 0.0, 1.0);
  }
  return {X, y};
}

std::vector<Label> truth_of(const LabeledDataset& ds) {
  std::vector<Label> t;
  for (const auto& p : ds.packets) t.push_back(p.label);
  return t;
}

}  // namespace

TEST(Features, ZeroPacketGivesZeroVector) {
  NormalizedPacket p;
  p.bytes.assign(300, 0);
  const auto f = extract_features(p);
  EXPECT_EQ(f.values, std::vector<double>(300, 0.0));
}

TEST(Features, ByteScalingEndpoint) {
  NormalizedPacket p;
  p.bytes.assign(8, 0);
  p.bytes[3] = 255;
  EXPECT_EQ(extract_features(p).values[3], 1.0);
}

TEST(Features, MonotoneInByteValue) {
  NormalizedPacket a, b;
  a.bytes = {0};
  b.bytes = {0};
  for (int x = 0; x < 256; ++x) {
    for (int z = x + 1; z < 256; ++z) {
      a.bytes[0] = static_cast<Byte>(x);
      b.bytes[0] = static_cast<Byte>(z);
      ASSERT_LT(extract_features(a).values[0], extract_features(b).values[0]);
    }
  }
  for (int x = 0; x < 256; ++x) {
    a.bytes[0] = static_cast<Byte>(x);
    const double v = extract_features(a).values[0];
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(ClassifierMetrics, PerfectPredictions) {
  const std::vector<Label> t{Label::benign, Label::malicious, Label::malicious};
  const auto m = classifier_metrics(t, t);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
}

TEST(ClassifierMetrics, AllBenignPredictorOnBalancedSet) {
  std::vector<Label> t, p;
  for (int i = 0; i < 50; ++i) {
    t.push_back(i % 2 ? Label::malicious : Label::benign);
    p.push_back(Label::benign);
  }
  const auto m = classifier_metrics(t, p);
  EXPECT_EQ(m.recall, 0.0);
  EXPECT_EQ(m.accuracy, 0.5);
  EXPECT_EQ(m.precision, 0.0);
}

TEST(ClassifierMetrics, MatchesConfusionTally) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<Label> t, p;
    int tally[2][2] = {{0, 0}, {0, 0}};
    for (int i = 0; i < 97; ++i) {
      const int a = static_cast<int>(rng() % 2), b = static_cast<int>(rng() % 2);
      t.push_back(static_cast<Label>(a));
      p.push_back(static_cast<Label>(b));
      ++tally[a][b];
    }
    const auto m = classifier_metrics(t, p);
    const double tp = tally[1][1], fp = tally[0][1], tn = tally[0][0], fn = tally[1][0];
    EXPECT_DOUBLE_EQ(m.accuracy, (tp + tn) / 97.0);
    EXPECT_DOUBLE_EQ(m.precision, tp / (tp + fp));
    EXPECT_DOUBLE_EQ(m.recall, tp / (tp + fn));
  }
}

TEST(TrainNids, SingleClassRejected) {
  auto ds = desk(20, 1);
  ds.packets.erase(std::remove_if(ds.packets.begin(), ds.packets.end(),
                                  [](const auto& p) { return p.label == Label::malicious; }),
                   ds.packets.end());
  for (auto k : {NidsKind::mlp, NidsKind::svm, NidsKind::dt, NidsKind::lr}) EXPECT_THROW(train_nids(k, ds, 1), Error);
}

TEST(TrainNids, AllKindsSeparateDeskCorpus) {
  const auto ds = desk(400, 2);
  const auto [train, test] = split_dataset(ds, 0.75, 3);
  for (auto k : {NidsKind::mlp, NidsKind::svm, NidsKind::dt, NidsKind::lr}) {
    const auto rep = train_nids(k, train, 4);
    const auto m = evaluate_nids(rep.model, test);
    EXPECT_GE(m.accuracy, 0.95) << to_string(k);
    if (k == NidsKind::dt) {
      EXPECT_EQ(rep.train_metrics.accuracy, 1.0);
    }
  }
}

TEST(TrainNids, TreeFitToPurityReproducesTrainingLabels) {
  std::mt19937_64 rng(5);
  LabeledDataset ds;
  for (int i = 0; i < 40; ++i) ds.packets.push_back(testutil::random_packet(rng, 6, i % 3 ? Label::benign : Label::malicious));
  const auto rep = train_nids(NidsKind::dt, ds, 1);
  EXPECT_EQ(rep.model.predict_packets(ds.packets), truth_of(ds));
}

TEST(TrainNids, DeterministicAndPure) {
  const auto ds = desk(100, 6);
  for (auto k : {NidsKind::mlp, NidsKind::svm, NidsKind::dt, NidsKind::lr}) {
    const auto a = train_nids(k, ds, 9);
    const auto b = train_nids(k, ds, 9);
    Checkpoint ca("nids"), cb("nids");
    a.model.save(ca);
    b.model.save(cb);
    EXPECT_EQ(ca.serialize(), cb.serialize()) << to_string(k);
    std::vector<NormalizedPacket> dup{ds.packets[0], ds.packets[0], ds.packets[0]};
    const auto labels = a.model.predict_packets(dup);
    EXPECT_EQ(labels[0], labels[1]);
    EXPECT_EQ(labels[1], labels[2]);
    Checkpoint after("nids");
    a.model.predict_packets(ds.packets);
    a.model.save(after);
    EXPECT_EQ(after.serialize(), ca.serialize());
  }
}

TEST(TrainNids, CheckpointRoundTripKeepsPredictions) {
  const auto ds = desk(150, 7);
  std::mt19937_64 rng(1);
  std::vector<NormalizedPacket> probe;
  for (int i = 0; i < 200; ++i) probe.push_back(testutil::random_packet(rng, 64));
  for (auto k : {NidsKind::mlp, NidsKind::svm, NidsKind::dt, NidsKind::lr}) {
    const auto rep = train_nids(k, ds, 2);
    Checkpoint c("nids");
    rep.model.save(c);
    const auto back = NidsModel::load(Checkpoint::deserialize(c.serialize()), "bytescale-v1", 64);
    EXPECT_EQ(back.kind(), k);
    EXPECT_EQ(back.predict_packets(probe), rep.model.predict_packets(probe)) << to_string(k);
    EXPECT_EQ(back.metadata().at("kind"), std::string(to_string(k)));
  }
}

TEST(TrainNids, LoadRefusesMismatchedExtractorOrWidth) {
  const auto rep = train_nids(NidsKind::lr, desk(30, 8), 1);
  Checkpoint c("nids");
  rep.model.save(c);
  EXPECT_THROW(NidsModel::load(c, "flow-stats-v2"), Error);
  EXPECT_THROW(NidsModel::load(c, "bytescale-v1", 300), Error);
  EXPECT_NO_THROW(NidsModel::load(c, "bytescale-v1", 64));
}

TEST(TrainNids, DimensionMismatchRejected) {
  const auto rep = train_nids(NidsKind::dt, desk(30, 8), 1);
  std::vector<FeatureVector> bad{FeatureVector{std::vector<double>(10, 0.0), 0}};
  EXPECT_THROW(rep.model.predict(bad), Error);
}

TEST(TrainNids, KindNames) {
  for (auto k : {NidsKind::mlp, NidsKind::svm, NidsKind::dt, NidsKind::lr}) EXPECT_EQ(nids_kind_from_string(to_string(k)), k);
  EXPECT_THROW(nids_kind_from_string("knn"), Error);
}

TEST(LogisticFit, GradientVanishesAtSolution) {
  const auto [X, y] = blobs(200, 1);
  NidsOptions o;
  o.lr_c = 2.0;
  const auto m = detail::fit_logistic(X, y, o);
  // Oracle: gradient of sum log-loss + |w|^2 / (2C), recomputed here in double.
  Vec<double> gw = m.w / o.lr_c;
  double gb = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-(X.row(i).dot(m.w) + m.b)));
    gw += (p - y[static_cast<std::size_t>(i)]) * X.row(i).transpose();
    gb += p - y[static_cast<std::size_t>(i)];
  }
  EXPECT_LT(gw.lpNorm<Eigen::Infinity>(), 1e-3);
  EXPECT_LT(std::abs(gb), 1e-3);
}

TEST(SvmFit, SatisfiesKktConditions) {
  const auto [X, y] = blobs(120, 2);
  NidsOptions o;
  o.svm_c = 1.0;
  const auto m = detail::fit_svm(X, y, o);
  const auto f = m.decision(X);
  // Recover alpha per training row from the stored support vectors.
  std::vector<double> alpha(y.size(), 0.0);
  for (Eigen::Index k = 0; k < m.support.rows(); ++k) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      if ((X.row(i).cast<float>().cast<double>() - m.support.row(k)).squaredNorm() == 0.0) {
        alpha[static_cast<std::size_t>(i)] = std::abs(m.coef(k));
        break;
      }
    }
  }
  double balance = 0;
  const double tol = 1e-2;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double yi = y[i] > 0.5 ? 1.0 : -1.0;
    const double margin = yi * f(static_cast<Eigen::Index>(i));
    balance += alpha[i] * yi;
    ASSERT_GE(alpha[i], 0.0);
    ASSERT_LE(alpha[i], o.svm_c + 1e-6);
    if (alpha[i] == 0.0) EXPECT_GE(margin, 1 - tol) << i;
    else if (alpha[i] < o.svm_c - 1e-6) EXPECT_NEAR(margin, 1.0, tol) << i;
    else EXPECT_LE(margin, 1 + tol) << i;
  }
  EXPECT_NEAR(balance, 0.0, 1e-4);
}

TEST(MlpFit, LearnsBlobs) {
  const auto [X, y] = blobs(400, 3);
  NidsOptions o;
  o.mlp_epochs = 60;
  const auto m = detail::fit_mlp(X, y, o, 5);
  const auto z = m.logits(X);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) correct += (z(i) > 0) == (y[static_cast<std::size_t>(i)] > 0.5);
  EXPECT_GE(static_cast<double>(correct) / 400.0, 0.85);
}
