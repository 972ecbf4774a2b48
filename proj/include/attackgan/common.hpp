#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace attackgan {

using Byte = std::uint8_t;
using Token = std::uint32_t;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Failure raised by a library module. `module()` names the subsystem so the
/// CLI can report which stage of the pipeline broke.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

enum class Label : std::uint8_t { benign = 0, malicious = 1, unlabeled = 2 };
enum class Origin : std::uint8_t { captured = 0, synthetic = 1, generated = 2 };
enum class Granularity : std::uint8_t { one_byte = 0, two_byte = 1 };

inline std::string_view to_string(Label label) {
  switch (label) {
    case Label::benign: return "benign";
    case Label::malicious: return "malicious";
    case Label::unlabeled: return "unlabeled";
  }
  return "unknown";
}

inline std::string_view to_string(Granularity g) {
  return g == Granularity::one_byte ? "one_byte" : "two_byte";
}

inline Granularity granularity_from_string(std::string_view name) {
  if (name == "one_byte") return Granularity::one_byte;
  if (name == "two_byte") return Granularity::two_byte;
  throw Error("packet_model", "unknown granularity '" + std::string(name) + "'");
}

inline std::size_t vocab_size(Granularity g) { return g == Granularity::one_byte ? 256 : 65536; }
inline std::size_t bytes_per_token(Granularity g) { return g == Granularity::one_byte ? 1 : 2; }

// ---------------------------------------------------------------------------
// Seed derivation. Every random stream in the pipeline is derived from the run
// seed plus a tuple of identifiers, so results never depend on call order.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_id(std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base) { return splitmix64(base); }

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t next, Rest... rest) {
  return derive_seed(splitmix64(base) ^ splitmix64(next + 0x632BE59BD9B4E019ull), static_cast<std::uint64_t>(rest)...);
}

using Rng = std::mt19937_64;

template <typename... Parts>
Rng make_rng(std::uint64_t base, Parts... parts) {
  return Rng(derive_seed(base, static_cast<std::uint64_t>(parts)...));
}

/// Splitmix64 sequence with eight bytes of state, for places where many
/// independent streams are live at once (one per sampled column).
class StreamRng {
 public:
  using result_type = std::uint64_t;
  explicit StreamRng(std::uint64_t seed = 0) : state_(seed) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() {
    const std::uint64_t out = splitmix64(state_);
    state_ += 0x9E3779B97F4A7C15ull;
    return out;
  }

 private:
  std::uint64_t state_;
};

template <typename... Parts>
StreamRng make_stream_rng(std::uint64_t base, Parts... parts) {
  return StreamRng(derive_seed(base, static_cast<std::uint64_t>(parts)...));
}

/// Uniform double in [0, 1) with 53 random bits; independent of the
/// standard library's distribution implementations.
template <typename G>
double uniform01(G& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename G>
std::size_t uniform_index(G& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

template <typename T, typename G>
void shuffle(std::vector<T>& items, G& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace attackgan
