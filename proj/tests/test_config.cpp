#include <fstream>

#include <gtest/gtest.h>

#include "attackgan/config.hpp"
#include "attackgan/manifest.hpp"
#include "test_util.hpp"

using namespace attackgan;

namespace {

std::string config_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsResolve) {
  const auto r = resolve_config(Config{});
  EXPECT_EQ(r.P, 300u);
  EXPECT_EQ(r.mu, 20u);
  EXPECT_EQ(r.mask_positions.size(), 20u);
  EXPECT_EQ(r.mask_positions.front(), 0u);
  EXPECT_EQ(r.epochs, 30u);
  EXPECT_EQ(r.g_steps, 1u);
  EXPECT_EQ(r.d_steps, 3u);
  EXPECT_EQ(r.disc_k, 3u);
  EXPECT_EQ(r.mle_lr, 1e-3);
  EXPECT_EQ(r.pg_lr, 1e-4);
  EXPECT_EQ(r.eval_batch, 512u);
}

TEST(Config, UnknownKeyListsValidKeys) {
  Config c;
  const auto msg = config_error([&] { c.set_override("generator.hiden=3"); });
  EXPECT_NE(msg.find("unknown key 'generator.hiden'"), std::string::npos);
  EXPECT_NE(msg.find("generator.hidden"), std::string::npos);
  EXPECT_NE(msg.find("rollout.M"), std::string::npos);
}

TEST(Config, NegativeMuNamesTheInvariant) {
  Config c;
  c.set_override("mu=-1");
  const auto msg = config_error([&] { resolve_config(c); });
  EXPECT_NE(msg.find("mu must be >= 0"), std::string::npos) << msg;
}

TEST(Config, TypeAndRangeChecks) {
  Config c;
  EXPECT_FALSE(config_error([&] { c.set_override("nids=true"); }).empty());
  EXPECT_FALSE(config_error([&] { c.set_override("P=2.5"); }).empty());
  EXPECT_FALSE(config_error([&] { c.set_override("noequals"); }).empty());
  c.set_override("nids=knn");
  EXPECT_NE(config_error([&] { resolve_config(c); }).find("nids must be one of"), std::string::npos);
  Config d;
  d.set_override("rollout.M=0");
  EXPECT_NE(config_error([&] { resolve_config(d); }).find("rollout.M must be >= 1"), std::string::npos);
  Config e;
  e.set_override("granularity=two_byte");
  e.set_override("P=301");
  EXPECT_FALSE(config_error([&] { resolve_config(e); }).empty());
}

TEST(Config, OverridesParseAsJsonOrString) {
  Config c;
  c.set_override("nids=svm");
  c.set_override("disc.windows=[2,3]");
  c.set_override("generator.baseline=true");
  c.set_override("P=2.0e2");
  const auto r = resolve_config(c);
  EXPECT_EQ(r.nids, "svm");
  EXPECT_EQ(r.disc_windows, (std::vector<std::size_t>{2, 3}));
  EXPECT_TRUE(r.baseline);
  EXPECT_EQ(r.P, 200u);
}

TEST(Config, MaskPositionsMustAgreeWithMu) {
  Config c;
  c.set("mu", 2);
  c.set("mask.positions", json::array({7, 3}));
  EXPECT_EQ(resolve_config(c).mask_positions, (std::vector<std::size_t>{3, 7}));
  c.set("mask.positions", json::array({7, 3, 4}));
  EXPECT_NE(config_error([&] { resolve_config(c); }).find("mu is 2"), std::string::npos);
  c.set("mask.positions", json::array({3, 3}));
  EXPECT_FALSE(config_error([&] { resolve_config(c); }).empty());
  Config d;
  d.set("mu", 3);
  d.set("mask.candidates", json::array({9, 1, 5, 2}));
  EXPECT_EQ(resolve_config(d).mask_positions, (std::vector<std::size_t>{1, 5, 9}));
}

TEST(Config, ManifestIsAcceptedAsConfig) {
  testutil::TempDir dir("config");
  Config a;
  a.set("seed", 42);
  a.set("nids", "lr");
  const json manifest = {{"command", "train"}, {"status", "COMPLETED"}, {"config", a.values()}};
  std::ofstream(dir.path / "manifest.json") << manifest.dump(2);
  Config b;
  b.merge_file(dir.path / "manifest.json");
  EXPECT_EQ(b.values(), a.values());
  std::ofstream(dir.path / "bad.json") << "{ not json";
  EXPECT_THROW(Config{}.merge_file(dir.path / "bad.json"), ConfigError);
  EXPECT_THROW(Config{}.merge_file(dir.path / "missing.json"), ConfigError);
}

TEST(Manifest, GitBlobHashMatchesGit) {
  // `printf 'hello\n' | git hash-object --stdin`
  EXPECT_EQ(git_blob_hash(std::string("hello\n")), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(git_blob_hash(std::string()), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(Manifest, ExactDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567}) EXPECT_EQ(std::stod(exact_double(v)), v);
}
