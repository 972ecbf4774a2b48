#pragma once

// Classic libpcap capture files (24-byte global header, 16-byte record
// headers). Byte order is taken from the magic number.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "attackgan/checkpoint.hpp"
#include "attackgan/packet.hpp"

namespace attackgan {

struct PcapRecord {
  std::uint32_t ts_sec = 0;
  std::uint32_t ts_usec = 0;
  std::uint32_t captured_len = 0;
  std::uint32_t original_len = 0;
  std::vector<Byte> payload;
};

struct PcapFile {
  bool swapped = false;  // file written in the opposite byte order to little-endian
  std::uint16_t version_major = 2;
  std::uint16_t version_minor = 4;
  std::uint32_t snaplen = 65535;
  std::uint32_t linktype = 1;
  std::vector<PcapRecord> records;
};

namespace detail {

inline std::uint32_t load_u32(const unsigned char* p, bool big_endian) {
  return big_endian ? (std::uint32_t{p[0]} << 24 | std::uint32_t{p[1]} << 16 | std::uint32_t{p[2]} << 8 | p[3])
                    : (std::uint32_t{p[3]} << 24 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[1]} << 8 | p[0]);
}

inline std::uint16_t load_u16(const unsigned char* p, bool big_endian) {
  return big_endian ? static_cast<std::uint16_t>(p[0] << 8 | p[1]) : static_cast<std::uint16_t>(p[1] << 8 | p[0]);
}

inline void store_u32(std::vector<unsigned char>& out, std::uint32_t v, bool big_endian) {
  for (int i = 0; i < 4; ++i) {
    const int shift = big_endian ? 8 * (3 - i) : 8 * i;
    out.push_back(static_cast<unsigned char>(v >> shift));
  }
}

inline void store_u16(std::vector<unsigned char>& out, std::uint16_t v, bool big_endian) {
  if (big_endian) {
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
  } else {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
  }
}

}  // namespace detail

inline PcapFile parse_pcap(std::span<const unsigned char> bytes) {
  if (bytes.size() < 24) throw Error("ingest", "pcap global header truncated");
  const std::uint32_t magic_le = detail::load_u32(bytes.data(), false);
  bool big_endian = false;
  if (magic_le == 0xA1B2C3D4u) {
    big_endian = false;
  } else if (magic_le == 0xD4C3B2A1u) {
    big_endian = true;
  } else {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", magic_le);
    throw Error("ingest", std::string("unknown pcap magic ") + buf);
  }
  PcapFile file;
  file.swapped = big_endian;
  file.version_major = detail::load_u16(bytes.data() + 4, big_endian);
  file.version_minor = detail::load_u16(bytes.data() + 6, big_endian);
  file.snaplen = detail::load_u32(bytes.data() + 16, big_endian);
  file.linktype = detail::load_u32(bytes.data() + 20, big_endian);

  std::size_t offset = 24;
  std::size_t index = 0;
  while (offset < bytes.size()) {
    if (bytes.size() - offset < 16) {
      throw Error("ingest", "record " + std::to_string(index) + " header truncated at offset " + std::to_string(offset));
    }
    const unsigned char* h = bytes.data() + offset;
    PcapRecord rec;
    rec.ts_sec = detail::load_u32(h, big_endian);
    rec.ts_usec = detail::load_u32(h + 4, big_endian);
    rec.captured_len = detail::load_u32(h + 8, big_endian);
    rec.original_len = detail::load_u32(h + 12, big_endian);
    if (rec.captured_len > bytes.size() - offset - 16) {
      throw Error("ingest", "record " + std::to_string(index) + " at offset " + std::to_string(offset) +
                                " claims " + std::to_string(rec.captured_len) + " bytes beyond end of file");
    }
    if (rec.captured_len > rec.original_len || rec.captured_len > file.snaplen) {
      throw Error("ingest", "record " + std::to_string(index) + " at offset " + std::to_string(offset) +
                                " has inconsistent lengths");
    }
    rec.payload.assign(h + 16, h + 16 + rec.captured_len);
    offset += 16 + rec.captured_len;
    file.records.push_back(std::move(rec));
    ++index;
  }
  return file;
}

inline std::vector<unsigned char> serialize_pcap(const PcapFile& file) {
  const bool be = file.swapped;
  std::vector<unsigned char> out;
  detail::store_u32(out, 0xA1B2C3D4u, be);
  detail::store_u16(out, file.version_major, be);
  detail::store_u16(out, file.version_minor, be);
  detail::store_u32(out, 0, be);  // thiszone
  detail::store_u32(out, 0, be);  // sigfigs
  detail::store_u32(out, file.snaplen, be);
  detail::store_u32(out, file.linktype, be);
  for (const PcapRecord& rec : file.records) {
    detail::store_u32(out, rec.ts_sec, be);
    detail::store_u32(out, rec.ts_usec, be);
    detail::store_u32(out, static_cast<std::uint32_t>(rec.payload.size()), be);
    detail::store_u32(out, std::max(rec.original_len, static_cast<std::uint32_t>(rec.payload.size())), be);
    out.insert(out.end(), rec.payload.begin(), rec.payload.end());
  }
  return out;
}

inline PcapFile read_pcap_file(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path, "ingest");
  return parse_pcap(bytes);
}

/// One RawPacket per record, in capture order. `strip` drops that many leading
/// bytes (e.g. a link-layer header); records no longer than `strip` are skipped.
inline std::vector<RawPacket> read_pcap(const std::filesystem::path& path, std::size_t strip = 0,
                                        Label label = Label::unlabeled) {
  const PcapFile file = read_pcap_file(path);
  std::vector<RawPacket> packets;
  packets.reserve(file.records.size());
  for (const PcapRecord& rec : file.records) {
    if (rec.payload.size() <= strip) continue;
    RawPacket pkt;
    pkt.bytes.assign(rec.payload.begin() + static_cast<std::ptrdiff_t>(strip), rec.payload.end());
    pkt.capture_ts = static_cast<double>(rec.ts_sec) + static_cast<double>(rec.ts_usec) * 1e-6;
    pkt.label = label;
    packets.push_back(std::move(pkt));
  }
  return packets;
}

inline void write_pcap(const std::filesystem::path& path, std::span<const RawPacket> packets, bool big_endian = false,
                       std::uint32_t snaplen = 65535) {
  PcapFile file;
  file.swapped = big_endian;
  file.snaplen = snaplen;
  for (const RawPacket& pkt : packets) {
    if (pkt.bytes.size() > snaplen) throw Error("ingest", "packet longer than snaplen");
    PcapRecord rec;
    const double ts = pkt.capture_ts.value_or(0.0);
    rec.ts_sec = static_cast<std::uint32_t>(std::floor(ts));
    rec.ts_usec = static_cast<std::uint32_t>(std::llround((ts - std::floor(ts)) * 1e6)) % 1000000u;
    rec.payload = pkt.bytes;
    rec.captured_len = rec.original_len = static_cast<std::uint32_t>(pkt.bytes.size());
    file.records.push_back(std::move(rec));
  }
  detail::write_file_bytes(path, serialize_pcap(file), "ingest");
}

}  // namespace attackgan
