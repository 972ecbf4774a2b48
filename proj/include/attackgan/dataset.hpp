#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "attackgan/checkpoint.hpp"
#include "attackgan/packet.hpp"

namespace attackgan {

enum class SplitTag : std::uint8_t { all, train, test };

struct LabeledDataset {
  std::vector<NormalizedPacket> packets;
  SplitTag split = SplitTag::all;

  std::size_t size() const noexcept { return packets.size(); }
  bool empty() const noexcept { return packets.empty(); }
  std::size_t packet_length() const { return packets.empty() ? 0 : packets.front().length(); }

  std::size_t count(Label label) const {
    return static_cast<std::size_t>(
        std::count_if(packets.begin(), packets.end(), [label](const auto& p) { return p.label == label; }));
  }

  std::map<Label, std::size_t> class_counts() const {
    std::map<Label, std::size_t> counts{{Label::benign, 0}, {Label::malicious, 0}};
    for (const auto& p : packets) ++counts[p.label];
    return counts;
  }

  std::vector<NormalizedPacket> with_label(Label label) const {
    std::vector<NormalizedPacket> out;
    for (const auto& p : packets)
      if (p.label == label) out.push_back(p);
    return out;
  }
};

struct ByteRange {
  Byte lo = 0;
  Byte hi = 255;

  bool contains(Byte b) const noexcept { return b >= lo && b <= hi; }
  bool overlaps(const ByteRange& o) const noexcept { return lo <= o.hi && o.lo <= hi; }
};

/// Desk-scale stand-in for a labeled capture: benign and malicious packets share
/// a per-position background profile and differ only at the signature bytes.
struct SynthSpec {
  std::size_t n_benign = 2000;
  std::size_t n_malicious = 2000;
  std::size_t packet_length = 64;
  std::vector<std::size_t> signature_positions;
  ByteRange benign_range{0, 127};
  ByteRange malicious_range{128, 255};
  std::uint64_t noise_seed = 1;
};

inline LabeledDataset synthesize_corpus(const SynthSpec& spec) {
  const std::size_t P = spec.packet_length;
  if (P == 0) throw Error("ingest", "packet length must be positive");
  if (spec.n_benign + spec.n_malicious == 0) throw Error("ingest", "corpus needs at least one packet");
  if (spec.benign_range.lo > spec.benign_range.hi || spec.malicious_range.lo > spec.malicious_range.hi) {
    throw Error("ingest", "empty signature value range");
  }
  if (spec.benign_range.overlaps(spec.malicious_range)) {
    throw Error("ingest", "benign and malicious signature ranges overlap");
  }
  std::set<std::size_t> signature(spec.signature_positions.begin(), spec.signature_positions.end());
  for (std::size_t p : signature) {
    if (p >= P) throw Error("ingest", "signature position " + std::to_string(p) + " outside packet length");
  }
  const std::size_t min_len =
      std::max<std::size_t>(signature.empty() ? 1 : *signature.rbegin() + 1, (3 * P) / 4);

  // Header-like background: constants, small enumerations, and free payload bytes.
  enum class Kind { constant, choice, uniform, zero };
  struct Profile {
    Kind kind;
    std::vector<Byte> values;
  };
  Rng profile_rng = make_rng(spec.noise_seed, stream_id("synth/profile"));
  std::vector<Profile> profile(P);
  for (std::size_t p = 0; p < P; ++p) {
    const double u = uniform01(profile_rng);
    Profile& prof = profile[p];
    if (u < 0.35) {
      prof.kind = Kind::constant;
      prof.values = {static_cast<Byte>(profile_rng() & 0xFF)};
    } else if (u < 0.70) {
      prof.kind = Kind::choice;
      for (int k = 0; k < 4; ++k) prof.values.push_back(static_cast<Byte>(profile_rng() & 0xFF));
    } else if (u < 0.85) {
      prof.kind = Kind::uniform;
    } else {
      prof.kind = Kind::zero;
      prof.values = {0};
    }
  }

  auto make_packet = [&](Label label, std::size_t index) {
    Rng rng = make_rng(spec.noise_seed, stream_id("synth/packet"), static_cast<std::uint64_t>(label), index);
    const std::size_t max_len = P + P / 4;
    const std::size_t len = min_len + uniform_index(rng, max_len - min_len + 1);
    const ByteRange& range = label == Label::benign ? spec.benign_range : spec.malicious_range;
    RawPacket raw;
    raw.label = label;
    raw.bytes.resize(len);
    for (std::size_t p = 0; p < len; ++p) {
      if (signature.count(p)) {
        raw.bytes[p] = static_cast<Byte>(range.lo + uniform_index(rng, std::size_t{range.hi} - range.lo + 1));
        continue;
      }
      const Profile& prof = p < P ? profile[p] : profile[p % P];
      switch (prof.kind) {
        case Kind::constant:
        case Kind::zero: raw.bytes[p] = prof.values[0]; break;
        case Kind::choice: raw.bytes[p] = prof.values[uniform_index(rng, prof.values.size())]; break;
        case Kind::uniform: raw.bytes[p] = static_cast<Byte>(rng() & 0xFF); break;
      }
    }
    NormalizedPacket pkt = normalize_packet(raw, P);
    pkt.origin = Origin::synthetic;
    return pkt;
  };

  LabeledDataset ds;
  ds.packets.reserve(spec.n_benign + spec.n_malicious);
  for (std::size_t i = 0; i < spec.n_benign; ++i) ds.packets.push_back(make_packet(Label::benign, i));
  for (std::size_t i = 0; i < spec.n_malicious; ++i) ds.packets.push_back(make_packet(Label::malicious, i));
  return ds;
}

/// Stratified split; each class contributes round(fraction * n) packets to train.
inline std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double train_fraction,
                                                               std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error("ingest", "train fraction must lie strictly between 0 and 1");
  }
  LabeledDataset train, test;
  train.split = SplitTag::train;
  test.split = SplitTag::test;
  for (Label label : {Label::benign, Label::malicious}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.packets[i].label == label) idx.push_back(i);
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      throw Error("ingest", "class " + std::string(to_string(label)) + " has fewer than 2 members; cannot stratify");
    }
    Rng rng = make_rng(seed, stream_id("split"), static_cast<std::uint64_t>(label));
    shuffle(idx, rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      (k < n_train ? train : test).packets.push_back(ds.packets[idx[k]]);
    }
  }
  return {std::move(train), std::move(test)};
}

/// Dataset container: "ATKD" | version u16 | P u32 | count u32 | (label u8, P bytes)*.
inline std::vector<unsigned char> serialize_dataset(const LabeledDataset& ds) {
  const std::size_t P = ds.packet_length();
  detail::ByteWriter w;
  w.raw("ATKD", 4);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(P));
  w.u32(static_cast<std::uint32_t>(ds.size()));
  for (const auto& pkt : ds.packets) {
    if (pkt.length() != P) throw Error("ingest", "dataset packets have mixed lengths");
    const auto label = static_cast<unsigned char>(pkt.label);
    w.raw(&label, 1);
    w.raw(pkt.bytes.data(), P);
  }
  return std::move(w.bytes());
}

inline LabeledDataset deserialize_dataset(const std::vector<unsigned char>& bytes, Origin origin = Origin::captured) {
  detail::ByteReader r(bytes.data(), bytes.size(), "ingest");
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, "ATKD", 4) != 0) throw Error("ingest", "not a dataset container (bad magic)");
  if (const auto version = r.u16(); version != 1) {
    throw Error("ingest", "unsupported dataset version " + std::to_string(version));
  }
  const std::uint32_t P = r.u32();
  const std::uint32_t count = r.u32();
  LabeledDataset ds;
  ds.packets.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    unsigned char label = 0;
    r.raw(&label, 1);
    if (label > 1) throw Error("ingest", "record " + std::to_string(i) + " has invalid label");
    NormalizedPacket pkt;
    pkt.label = static_cast<Label>(label);
    pkt.origin = origin;
    pkt.bytes.resize(P);
    r.raw(pkt.bytes.data(), P);
    ds.packets.push_back(std::move(pkt));
  }
  if (r.remaining() != 0) throw Error("ingest", "trailing bytes after dataset records");
  return ds;
}

inline std::filesystem::path dataset_manifest_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".manifest.txt");
}

inline void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds, const std::string& provenance) {
  detail::write_file_bytes(path, serialize_dataset(ds), "ingest");
  std::ofstream manifest(dataset_manifest_path(path), std::ios::trunc);
  manifest << "format: ATKD v1\n"
           << "packet_length: " << ds.packet_length() << "\n"
           << "count: " << ds.size() << "\n"
           << "benign: " << ds.count(Label::benign) << "\n"
           << "malicious: " << ds.count(Label::malicious) << "\n"
           << "provenance: " << provenance << "\n";
}

inline LabeledDataset load_dataset(const std::filesystem::path& path) {
  Origin origin = Origin::captured;
  if (std::ifstream manifest(dataset_manifest_path(path)); manifest) {
    std::string line;
    while (std::getline(manifest, line)) {
      if (line.rfind("provenance: synth", 0) == 0) origin = Origin::synthetic;
    }
  }
  return deserialize_dataset(detail::read_file_bytes(path, "ingest"), origin);
}

}  // namespace attackgan
