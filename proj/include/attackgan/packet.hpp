#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "attackgan/common.hpp"

namespace attackgan {

struct RawPacket {
  std::vector<Byte> bytes;
  std::optional<double> capture_ts;
  Label label = Label::unlabeled;
};

/// Fixed-length packet; every training and generation step works on these.
struct NormalizedPacket {
  std::vector<Byte> bytes;
  Label label = Label::malicious;
  Origin origin = Origin::captured;

  std::size_t length() const noexcept { return bytes.size(); }
  bool operator==(const NormalizedPacket&) const = default;
};

struct TokenSequence {
  std::vector<Token> tokens;
  Granularity granularity = Granularity::one_byte;

  std::size_t size() const noexcept { return tokens.size(); }
  bool operator==(const TokenSequence&) const = default;
};

/// Byte positions pinned to a real malicious template so generated packets keep
/// their attack-functional fields.
struct ConstraintMask {
  std::vector<std::size_t> fixed_byte_positions;  // sorted, unique
  NormalizedPacket templ;
  Granularity granularity = Granularity::one_byte;

  std::size_t mu() const noexcept { return fixed_byte_positions.size(); }
  std::size_t packet_length() const noexcept { return templ.length(); }
  std::size_t token_count() const noexcept { return templ.length() / bytes_per_token(granularity); }

  /// One flag per token position; true where the token is forced.
  std::vector<bool> token_flags() const {
    std::vector<bool> flags(token_count(), false);
    const std::size_t width = bytes_per_token(granularity);
    for (std::size_t p : fixed_byte_positions) flags[p / width] = true;
    return flags;
  }
};

// ---------------------------------------------------------------------------

inline NormalizedPacket normalize_packet(const RawPacket& raw, std::size_t length) {
  if (length == 0) throw Error("packet_model", "normalized packet length must be positive");
  if (raw.bytes.empty()) throw Error("packet_model", "cannot normalize an empty packet");
  NormalizedPacket out;
  out.bytes.assign(length, Byte{0});
  const std::size_t keep = std::min(raw.bytes.size(), length);
  std::copy_n(raw.bytes.begin(), keep, out.bytes.begin());
  out.label = raw.label == Label::benign ? Label::benign : Label::malicious;
  out.origin = Origin::captured;
  return out;
}

/// Re-normalizing an already normalized packet to a new length.
inline NormalizedPacket normalize_packet(const NormalizedPacket& pkt, std::size_t length) {
  RawPacket raw{pkt.bytes, std::nullopt, pkt.label};
  NormalizedPacket out = normalize_packet(raw, length);
  out.origin = pkt.origin;
  return out;
}

inline TokenSequence tokenize(const NormalizedPacket& pkt, Granularity granularity) {
  TokenSequence seq;
  seq.granularity = granularity;
  if (granularity == Granularity::one_byte) {
    seq.tokens.assign(pkt.bytes.begin(), pkt.bytes.end());
    return seq;
  }
  if (pkt.length() % 2 != 0) {
    throw Error("packet_model", "two_byte tokenization needs an even packet length, got " +
                                    std::to_string(pkt.length()));
  }
  seq.tokens.resize(pkt.length() / 2);
  // Big-endian pairing, matching network byte order of multi-octet fields.
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    seq.tokens[i] = static_cast<Token>(pkt.bytes[2 * i]) << 8 | pkt.bytes[2 * i + 1];
  }
  return seq;
}

inline NormalizedPacket detokenize(const TokenSequence& seq, std::size_t length) {
  const std::size_t width = bytes_per_token(seq.granularity);
  const std::size_t vocab = vocab_size(seq.granularity);
  if (seq.size() * width != length) {
    throw Error("packet_model", "token count " + std::to_string(seq.size()) + " does not cover " +
                                    std::to_string(length) + " bytes");
  }
  NormalizedPacket out;
  out.label = Label::malicious;
  out.origin = Origin::generated;
  out.bytes.resize(length);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Token tok = seq.tokens[i];
    if (tok >= vocab) {
      throw Error("packet_model", "token " + std::to_string(tok) + " outside vocabulary of " + std::to_string(vocab));
    }
    if (width == 1) {
      out.bytes[i] = static_cast<Byte>(tok);
    } else {
      out.bytes[2 * i] = static_cast<Byte>(tok >> 8);
      out.bytes[2 * i + 1] = static_cast<Byte>(tok & 0xFF);
    }
  }
  return out;
}

/// Positions are expanded to whole tokens under two_byte granularity, so a mask
/// given on one octet of a pair pins both.
inline ConstraintMask build_mask(const NormalizedPacket& templ, std::span<const std::size_t> positions,
                                 Granularity granularity) {
  const std::size_t length = templ.length();
  if (granularity == Granularity::two_byte && length % 2 != 0) {
    throw Error("packet_model", "two_byte mask needs an even packet length");
  }
  std::set<std::size_t> expanded;
  for (std::size_t p : positions) {
    if (p >= length) {
      throw Error("packet_model", "mask position " + std::to_string(p) + " out of range for length " +
                                      std::to_string(length));
    }
    expanded.insert(p);
    if (granularity == Granularity::two_byte) expanded.insert(p ^ std::size_t{1});
  }
  ConstraintMask mask;
  mask.fixed_byte_positions.assign(expanded.begin(), expanded.end());
  mask.templ = templ;
  mask.granularity = granularity;
  return mask;
}

inline TokenSequence apply_mask(const TokenSequence& seq, const ConstraintMask& mask) {
  if (seq.granularity != mask.granularity) throw Error("packet_model", "mask and sequence granularity differ");
  if (seq.size() != mask.token_count()) throw Error("packet_model", "mask and sequence lengths differ");
  TokenSequence out = seq;
  if (mask.mu() == 0) return out;
  const TokenSequence templ = tokenize(mask.templ, mask.granularity);
  const std::size_t width = bytes_per_token(mask.granularity);
  for (std::size_t p : mask.fixed_byte_positions) out.tokens[p / width] = templ.tokens[p / width];
  return out;
}

/// Post-generation check: every masked byte equals the template byte.
inline bool satisfies_mask(const NormalizedPacket& pkt, const ConstraintMask& mask) {
  if (pkt.length() != mask.packet_length()) return false;
  return std::all_of(mask.fixed_byte_positions.begin(), mask.fixed_byte_positions.end(),
                     [&](std::size_t p) { return pkt.bytes[p] == mask.templ.bytes[p]; });
}

inline bool satisfies_mask(const TokenSequence& seq, const ConstraintMask& mask) {
  if (seq.granularity != mask.granularity || seq.size() != mask.token_count()) return false;
  return satisfies_mask(detokenize(seq, mask.packet_length()), mask);
}

}  // namespace attackgan
