#include <random>

#include <gtest/gtest.h>

#include "attackgan/adam.hpp"
#include "attackgan/checkpoint.hpp"
#include "test_util.hpp"

using namespace attackgan;

namespace {

struct Quadratic {
  Mat<float> a, b;
  std::vector<std::pair<std::string, Mat<float>*>> named_tensors() { return {{"a", &a}, {"b", &b}}; }
  std::vector<std::pair<std::string, const Mat<float>*>> named_tensors() const { return {{"a", &a}, {"b", &b}}; }
};

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n;
  Mat<float> m(5, 7);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  Checkpoint c("generator");
  c.add_matrix("w", m);
  c.add_scalar("s", 0.5);
  c.add_text("t", "hello=1\nworld");
  c.add(Tensor{"cube", {2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}});
  const auto back = Checkpoint::deserialize(c.serialize());
  EXPECT_EQ(back.module(), "generator");
  EXPECT_EQ(back.get_matrix<float>("w"), m);
  EXPECT_EQ(back.get_scalar("s"), 0.5);
  EXPECT_EQ(back.get_text("t"), "hello=1\nworld");
  EXPECT_EQ(back.get("cube").dims, (std::vector<std::uint32_t>{2, 2, 2}));
}

TEST(Checkpoint, ByteLayout) {
  Checkpoint c("m");
  c.add(Tensor{"x", {2}, {1.0f, -2.0f}});
  const auto b = c.serialize();
  // magic, version u16, name (u32 len + 1), tensor name (u32 + 1), rank u32, dim u32, 2 floats, crc
  ASSERT_EQ(b.size(), 4u + 2 + 5 + 5 + 4 + 4 + 8 + 4);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "ATKG");
  EXPECT_EQ(b[4] | (b[5] << 8), Checkpoint::kVersion);
  float f;
  std::memcpy(&f, &b[24], 4);
  EXPECT_EQ(f, 1.0f);
}

TEST(Checkpoint, CorruptionDetected) {
  Checkpoint c("m");
  c.add_scalar("x", 3.0);
  auto b = c.serialize();
  b[b.size() - 6] ^= 0x40;
  EXPECT_THROW(Checkpoint::deserialize(b), Error);
  auto truncated = c.serialize();
  truncated.resize(truncated.size() - 5);
  EXPECT_THROW(Checkpoint::deserialize(truncated), Error);
}

TEST(Checkpoint, MissingAndMisshapenTensorsNamed) {
  Checkpoint c("m");
  c.add_matrix("w", Mat<float>::Zero(2, 3));
  EXPECT_THROW(c.get("nope"), Error);
  EXPECT_THROW(c.get_matrix<float>("w", 3, 2), Error);
  EXPECT_THROW(c.add_matrix("w", Mat<float>::Zero(1, 1)), Error);
}

TEST(Checkpoint, SaveLoadFile) {
  testutil::TempDir dir("ckpt");
  Checkpoint c("disc");
  c.add_matrix("w", Mat<float>::Constant(3, 3, 0.25f));
  c.save(dir.path / "x.ckpt");
  EXPECT_EQ(Checkpoint::load(dir.path / "x.ckpt").get_matrix<float>("w"), Mat<float>::Constant(3, 3, 0.25f));
  EXPECT_THROW(Checkpoint::load(dir.path / "missing.ckpt"), Error);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps) per element.
  Quadratic p{Mat<float>::Zero(2, 2), Mat<float>::Zero(1, 3)};
  Quadratic g{Mat<float>::Constant(2, 2, 4.0f), Mat<float>::Constant(1, 3, -0.5f)};
  Adam<float> adam(AdamOptions{0.01});
  adam.step(p, g);
  EXPECT_NEAR(p.a(0, 0), -0.01f, 1e-7);
  EXPECT_NEAR(p.b(0, 2), 0.01f, 1e-7);
}

TEST(Adam, MinimizesQuadratic) {
  Quadratic p{Mat<float>::Constant(2, 2, 3.0f), Mat<float>::Constant(1, 3, -2.0f)};
  Adam<float> adam(AdamOptions{0.05});
  for (int i = 0; i < 2000; ++i) adam.step(p, p);  // gradient of 0.5|x|^2 is x
  EXPECT_LT(p.a.cwiseAbs().maxCoeff(), 1e-2f);
  EXPECT_LT(p.b.cwiseAbs().maxCoeff(), 1e-2f);
}

TEST(Adam, StateRoundTripContinuesIdentically) {
  Quadratic p{Mat<float>::Constant(2, 2, 1.0f), Mat<float>::Constant(1, 3, 1.5f)};
  Adam<float> a(AdamOptions{0.1});
  for (int i = 0; i < 5; ++i) a.step(p, p);
  Checkpoint c("opt");
  a.save(c, "adam", p);
  Adam<float> b(AdamOptions{0.1});
  b.load(Checkpoint::deserialize(c.serialize()), "adam", p);
  EXPECT_EQ(b.steps(), 5u);
  Quadratic q = p;
  for (int i = 0; i < 5; ++i) {
    a.step(p, p);
    b.step(q, q);
  }
  EXPECT_EQ(p.a, q.a);
  EXPECT_EQ(p.b, q.b);
}
