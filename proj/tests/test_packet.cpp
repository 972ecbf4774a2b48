#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "attackgan/packet.hpp"
#include "test_util.hpp"

using namespace attackgan;

namespace {

RawPacket raw_of(std::size_t n, Byte fill_base = 1) {
  RawPacket r;
  r.label = Label::malicious;
  for (std::size_t i = 0; i < n; ++i) r.bytes.push_back(static_cast<Byte>((fill_base + i) & 0xFF));
  return r;
}

}  // namespace

TEST(NormalizePacket, TruncatesLongPackets) {
  const auto raw = raw_of(320);
  const auto pkt = normalize_packet(raw, 300);
  ASSERT_EQ(pkt.length(), 300u);
  EXPECT_TRUE(std::equal(pkt.bytes.begin(), pkt.bytes.end(), raw.bytes.begin()));
  EXPECT_EQ(pkt.label, Label::malicious);
}

TEST(NormalizePacket, ZeroPadsShortPackets) {
  const auto raw = raw_of(200);
  const auto pkt = normalize_packet(raw, 300);
  ASSERT_EQ(pkt.length(), 300u);
  for (std::size_t i = 0; i < 200; ++i) EXPECT_EQ(pkt.bytes[i], raw.bytes[i]);
  for (std::size_t i = 200; i < 300; ++i) EXPECT_EQ(pkt.bytes[i], 0);
}

TEST(NormalizePacket, ExactLengthIsIdentity) {
  const auto raw = raw_of(300, 7);
  EXPECT_EQ(normalize_packet(raw, 300).bytes, raw.bytes);
}

TEST(NormalizePacket, RejectsZeroLengthAndEmptyInput) {
  EXPECT_THROW(normalize_packet(raw_of(10), 0), Error);
  EXPECT_THROW(normalize_packet(RawPacket{}, 10), Error);
}

TEST(NormalizePacket, Idempotent) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 50; ++k) {
    const auto raw = raw_of(1 + rng() % 400, static_cast<Byte>(rng()));
    const auto once = normalize_packet(raw, 300);
    EXPECT_EQ(normalize_packet(once, 300), once);
  }
}

TEST(Tokenize, OneByteMapsDirectly) {
  NormalizedPacket p;
  p.bytes = {0x00, 0xFF};
  EXPECT_EQ(tokenize(p, Granularity::one_byte).tokens, (std::vector<Token>{0, 255}));
}

TEST(Tokenize, TwoByteIsBigEndian) {
  NormalizedPacket p;
  p.bytes = {0x01, 0x02};
  const auto seq = tokenize(p, Granularity::two_byte);
  EXPECT_EQ(seq.tokens, (std::vector<Token>{258}));
  EXPECT_EQ(detokenize(seq, 2).bytes, p.bytes);
}

TEST(Tokenize, AllZeroPacketGivesZeroTokens) {
  NormalizedPacket p;
  p.bytes.assign(300, 0);
  for (auto g : {Granularity::one_byte, Granularity::two_byte}) {
    const auto seq = tokenize(p, g);
    EXPECT_EQ(seq.size(), 300 / bytes_per_token(g));
    for (Token t : seq.tokens) EXPECT_EQ(t, 0u);
  }
}

TEST(Tokenize, OddLengthRejectedForTwoByte) {
  NormalizedPacket p;
  p.bytes.assign(301, 0);
  EXPECT_THROW(tokenize(p, Granularity::two_byte), Error);
}

TEST(Detokenize, ZeroTokensGiveZeroBytesAndGeneratedOrigin) {
  TokenSequence s{std::vector<Token>(300, 0), Granularity::one_byte};
  const auto p = detokenize(s, 300);
  EXPECT_EQ(p.bytes, std::vector<Byte>(300, 0));
  EXPECT_EQ(p.origin, Origin::generated);
}

TEST(Detokenize, RejectsOutOfVocabularyTokens) {
  EXPECT_THROW(detokenize(TokenSequence{{256}, Granularity::one_byte}, 1), Error);
  EXPECT_THROW(detokenize(TokenSequence{{65536}, Granularity::two_byte}, 2), Error);
}

TEST(Detokenize, RoundTripOverRandomPackets) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 1000; ++k) {
    const auto p = testutil::random_packet(rng, 300);
    for (auto g : {Granularity::one_byte, Granularity::two_byte}) {
      const auto seq = tokenize(p, g);
      for (Token t : seq.tokens) ASSERT_LT(t, vocab_size(g));
      ASSERT_EQ(detokenize(seq, 300).bytes, p.bytes);
    }
  }
}

TEST(BuildMask, TwentyBytesAreTenTwoByteTokens) {
  std::mt19937_64 rng(5);
  const auto templ = testutil::random_packet(rng, 300);
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < 20; ++i) pos.push_back(40 + i);
  const auto one = build_mask(templ, pos, Granularity::one_byte);
  EXPECT_EQ(one.mu(), 20u);
  const auto two = build_mask(templ, pos, Granularity::two_byte);
  EXPECT_EQ(two.mu(), 20u);
  const auto flags = two.token_flags();
  EXPECT_EQ(std::count(flags.begin(), flags.end(), true), 10);
}

TEST(BuildMask, FortyBytesAreTwentyTokens) {
  std::mt19937_64 rng(6);
  const auto templ = testutil::random_packet(rng, 300);
  std::vector<std::size_t> pos(40);
  std::iota(pos.begin(), pos.end(), std::size_t{100});
  const auto m = build_mask(templ, pos, Granularity::two_byte);
  const auto flags = m.token_flags();
  EXPECT_EQ(std::count(flags.begin(), flags.end(), true), 20);
}

TEST(BuildMask, EmptyPositionSet) {
  std::mt19937_64 rng(7);
  const auto m = build_mask(testutil::random_packet(rng, 64), {}, Granularity::one_byte);
  EXPECT_EQ(m.mu(), 0u);
}

TEST(BuildMask, OddPositionsExpandToPairPartner) {
  std::mt19937_64 rng(8);
  const std::vector<std::size_t> pos{3, 10};
  const auto m = build_mask(testutil::random_packet(rng, 16), pos, Granularity::two_byte);
  EXPECT_EQ(m.fixed_byte_positions, (std::vector<std::size_t>{2, 3, 10, 11}));
  for (std::size_t p : m.fixed_byte_positions) {
    EXPECT_TRUE(std::binary_search(m.fixed_byte_positions.begin(), m.fixed_byte_positions.end(), p ^ 1u));
  }
}

TEST(BuildMask, RejectsOutOfRangePosition) {
  std::mt19937_64 rng(9);
  const std::vector<std::size_t> pos{64};
  EXPECT_THROW(build_mask(testutil::random_packet(rng, 64), pos, Granularity::one_byte), Error);
}

TEST(ApplyMask, EmptyMaskIsIdentity) {
  std::mt19937_64 rng(10);
  const auto seq = tokenize(testutil::random_packet(rng, 64), Granularity::one_byte);
  const auto m = build_mask(testutil::random_packet(rng, 64), {}, Granularity::one_byte);
  EXPECT_EQ(apply_mask(seq, m), seq);
}

TEST(ApplyMask, FullMaskGivesTemplate) {
  std::mt19937_64 rng(12);
  const auto templ = testutil::random_packet(rng, 64);
  std::vector<std::size_t> all(64);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (auto g : {Granularity::one_byte, Granularity::two_byte}) {
    const auto seq = tokenize(testutil::random_packet(rng, 64), g);
    EXPECT_EQ(apply_mask(seq, build_mask(templ, all, g)), tokenize(templ, g));
  }
}

TEST(ApplyMask, ExactlyMaskedBytesMatchTemplate) {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 200; ++k) {
    const auto templ = testutil::random_packet(rng, 300);
    const auto base = testutil::random_packet(rng, 300);
    std::vector<std::size_t> all(300);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<std::size_t> pos(all.begin(), all.begin() + 20);
    const auto m = build_mask(templ, pos, Granularity::one_byte);
    const auto out = detokenize(apply_mask(tokenize(base, Granularity::one_byte), m), 300);
    std::set<std::size_t> fixed(pos.begin(), pos.end());
    for (std::size_t i = 0; i < 300; ++i) {
      ASSERT_EQ(out.bytes[i], fixed.count(i) ? templ.bytes[i] : base.bytes[i]) << "byte " << i;
    }
    EXPECT_TRUE(satisfies_mask(out, m));
  }
}

TEST(ApplyMask, Fixpoint) {
  std::mt19937_64 rng(14);
  for (auto g : {Granularity::one_byte, Granularity::two_byte}) {
    const auto templ = testutil::random_packet(rng, 64);
    const std::vector<std::size_t> pos{1, 7, 20, 33, 63};
    const auto m = build_mask(templ, pos, g);
    const auto once = apply_mask(tokenize(testutil::random_packet(rng, 64), g), m);
    EXPECT_EQ(apply_mask(once, m), once);
  }
}

TEST(ApplyMask, GranularityMismatchRejected) {
  std::mt19937_64 rng(15);
  const auto p = testutil::random_packet(rng, 64);
  const auto m = build_mask(p, {}, Granularity::two_byte);
  EXPECT_THROW(apply_mask(tokenize(p, Granularity::one_byte), m), Error);
}
