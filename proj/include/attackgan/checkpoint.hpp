#pragma once

// Binary tensor container shared by all trained modules.
//
//   "ATKG" | version u16 | module name (u32 length + bytes)
//   entries: name (u32 length + bytes) | rank u32 | dims u32 x rank | f32 data
//   CRC32 (u32) over every preceding byte
//
// All integers and floats are little-endian.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include <zlib.h>

#include "attackgan/common.hpp"

namespace attackgan {

struct Tensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u16(std::uint16_t v) { put_le(v); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  template <typename T>
  void put_le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size, std::string module)
      : data_(data), size_(size), module_(std::move(module)) {}

  std::uint16_t u16() { return get_le<std::uint16_t>(); }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(get_le<std::uint32_t>()); }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (size_ - pos_ < n) throw Error(module_, "truncated input at offset " + std::to_string(pos_));
  }
  template <typename T>
  T get_le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string module_;
};

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path, const std::string& module) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(module, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes,
                             const std::string& module) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(module, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(module, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

class Checkpoint {
 public:
  static constexpr std::uint16_t kVersion = 1;

  Checkpoint() = default;
  explicit Checkpoint(std::string module) : module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }
  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }

  void add(Tensor tensor) {
    if (tensor.element_count() != tensor.data.size()) {
      throw Error("checkpoint", "tensor '" + tensor.name + "' dims disagree with data size");
    }
    if (index_.count(tensor.name)) throw Error("checkpoint", "duplicate tensor '" + tensor.name + "'");
    index_[tensor.name] = tensors_.size();
    tensors_.push_back(std::move(tensor));
  }

  /// Stores a matrix row-major with dims [rows, cols].
  template <typename Derived>
  void add_matrix(const std::string& name, const Eigen::MatrixBase<Derived>& m) {
    Tensor t{name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}};
    t.data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) t.data.push_back(static_cast<float>(m(r, c)));
    add(std::move(t));
  }

  void add_scalar(const std::string& name, double value) { add(Tensor{name, {1}, {static_cast<float>(value)}}); }

  void add_text(const std::string& name, const std::string& text) {
    Tensor t{name, {static_cast<std::uint32_t>(text.size())}, {}};
    for (unsigned char c : text) t.data.push_back(static_cast<float>(c));
    add(std::move(t));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("checkpoint", "missing tensor '" + name + "' in module " + module_);
    return tensors_[it->second];
  }

  template <typename Scalar>
  Mat<Scalar> get_matrix(const std::string& name) const {
    const Tensor& t = get(name);
    if (t.dims.size() != 2) throw Error("checkpoint", "tensor '" + name + "' is not rank 2");
    Mat<Scalar> m(t.dims[0], t.dims[1]);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(t.data[k++]);
    return m;
  }

  template <typename Scalar>
  Mat<Scalar> get_matrix(const std::string& name, Eigen::Index rows, Eigen::Index cols) const {
    Mat<Scalar> m = get_matrix<Scalar>(name);
    if (m.rows() != rows || m.cols() != cols) {
      throw Error("checkpoint", "tensor '" + name + "' has shape " + std::to_string(m.rows()) + "x" +
                                    std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
    }
    return m;
  }

  double get_scalar(const std::string& name) const {
    const Tensor& t = get(name);
    if (t.data.size() != 1) throw Error("checkpoint", "tensor '" + name + "' is not a scalar");
    return t.data[0];
  }

  std::string get_text(const std::string& name) const {
    std::string s;
    for (float f : get(name).data) s.push_back(static_cast<char>(static_cast<unsigned char>(f)));
    return s;
  }

  std::vector<unsigned char> serialize() const {
    detail::ByteWriter w;
    w.raw("ATKG", 4);
    w.u16(kVersion);
    w.str(module_);
    for (const Tensor& t : tensors_) {
      w.str(t.name);
      w.u32(static_cast<std::uint32_t>(t.dims.size()));
      for (auto d : t.dims) w.u32(d);
      for (float f : t.data) w.f32(f);
    }
    auto& bytes = w.bytes();
    const std::uint32_t crc = detail::crc32_of(bytes.data(), bytes.size());
    w.u32(crc);
    return std::move(bytes);
  }

  static Checkpoint deserialize(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 4 + 2 + 4 + 4 || std::memcmp(bytes.data(), "ATKG", 4) != 0) {
      throw Error("checkpoint", "not a checkpoint container (bad magic)");
    }
    const std::size_t body = bytes.size() - 4;
    detail::ByteReader crc_reader(bytes.data() + body, 4, "checkpoint");
    if (crc_reader.u32() != detail::crc32_of(bytes.data(), body)) throw Error("checkpoint", "CRC32 mismatch");
    detail::ByteReader r(bytes.data(), body, "checkpoint");
    char magic[4];
    r.raw(magic, 4);
    const std::uint16_t version = r.u16();
    if (version != kVersion) throw Error("checkpoint", "unsupported container version " + std::to_string(version));
    Checkpoint ckpt(r.str());
    while (r.remaining() > 0) {
      Tensor t;
      t.name = r.str();
      const std::uint32_t rank = r.u32();
      if (rank > 8) throw Error("checkpoint", "implausible rank for tensor '" + t.name + "'");
      for (std::uint32_t i = 0; i < rank; ++i) t.dims.push_back(r.u32());
      const std::size_t n = t.element_count();
      if (n > r.remaining() / 4) throw Error("checkpoint", "tensor '" + t.name + "' overruns the container");
      t.data.resize(n);
      for (auto& f : t.data) f = r.f32();
      ckpt.add(std::move(t));
    }
    return ckpt;
  }

  void save(const std::filesystem::path& path) const { detail::write_file_bytes(path, serialize(), "checkpoint"); }

  static Checkpoint load(const std::filesystem::path& path) {
    return deserialize(detail::read_file_bytes(path, "checkpoint"));
  }

 private:
  std::string module_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace attackgan
