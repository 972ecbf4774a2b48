#pragma once

// Flat dotted-key run configuration. Every key has a typed default; files and
// --set overrides may only name known keys.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attackgan/common.hpp"

namespace attackgan {

using json = nlohmann::json;

/// Invalid configuration or usage; the CLI reports these as usage errors.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

inline const json& config_defaults() {
  static const json defaults = {
      {"seed", 1},
      {"P", 300},
      {"granularity", "one_byte"},
      {"nids", "dt"},
      {"mu", 20},
      {"mask.positions", json::array()},
      {"mask.candidates", json::array()},
      {"data.path", ""},
      {"synth.n_benign", 2000},
      {"synth.n_malicious", 2000},
      {"synth.signature_start", 8},
      {"synth.signature_count", 32},
      {"synth.benign_lo", 0},
      {"synth.benign_hi", 127},
      {"synth.malicious_lo", 128},
      {"synth.malicious_hi", 255},
      {"synth.noise_seed", 1},
      {"split.train_fraction", 0.75},
      {"embedding.dim", 32},
      {"embedding.window", 2},
      {"embedding.epochs", 5},
      {"embedding.lr", 0.025},
      {"embedding.negatives", 5},
      {"embedding.checkpoint", ""},
      {"nids.checkpoint", ""},
      {"nids.mlp_hidden", 64},
      {"nids.mlp_epochs", 100},
      {"nids.svm_c", 1.0},
      {"nids.lr_c", 1.0},
      {"generator.hidden", 64},
      {"generator.mle_epochs", 10},
      {"generator.mle_lr", 1e-3},
      {"generator.mle_batch", 32},
      {"generator.pg_lr", 1e-4},
      {"generator.baseline", false},
      {"rollout.M", 16},
      {"rollout.lag", 0},
      {"disc.windows", {3, 4, 5}},
      {"disc.filters", 64},
      {"disc.lr", 1e-4},
      {"disc.batch", 64},
      {"disc.dropout", 0.0},
      {"disc.pretrain_epochs", 3},
      {"disc.epochs_per_step", 3},
      {"train.epochs", 30},
      {"train.g_steps", 1},
      {"train.d_steps", 3},
      {"train.pg_batch", 64},
      {"train.adv_batch", 256},
      {"train.benign_batch", 256},
      {"train.eval_batch", 512},
      {"train.early_stop", false},
  };
  return defaults;
}

inline std::string valid_config_keys() {
  std::string out;
  for (auto it = config_defaults().begin(); it != config_defaults().end(); ++it) {
    if (!out.empty()) out += ", ";
    out += it.key();
  }
  return out;
}

class Config {
 public:
  Config() : values_(config_defaults()) {}

  const json& values() const noexcept { return values_; }

  /// Sets a key from a JSON value, checking it exists and the type matches.
  void set(const std::string& key, const json& value) {
    if (!config_defaults().contains(key)) {
      throw ConfigError("unknown key '" + key + "'; valid keys: " + valid_config_keys());
    }
    const json& def = config_defaults().at(key);
    const bool ok = (def.is_number() && value.is_number()) || (def.is_string() && value.is_string()) ||
                    (def.is_boolean() && value.is_boolean()) || (def.is_array() && value.is_array());
    if (!ok) throw ConfigError("key '" + key + "' expects a " + std::string(def.type_name()) + " value");
    if (def.is_number_integer() && !value.is_number_integer()) {
      const double v = value.get<double>();
      if (v != std::floor(v)) throw ConfigError("key '" + key + "' expects an integer");
      values_[key] = static_cast<std::int64_t>(v);
      return;
    }
    values_[key] = value;
  }

  /// `key=value` as given on the command line. The value is read as JSON when
  /// it parses, otherwise as a bare string.
  void set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    set(key, value);
  }

  /// Overlays a JSON object. A run manifest is accepted too: its "config"
  /// member is used.
  void merge(const json& obj) {
    const json& src = obj.contains("config") && obj["config"].is_object() ? obj["config"] : obj;
    if (!src.is_object()) throw ConfigError("configuration must be a JSON object");
    for (auto it = src.begin(); it != src.end(); ++it) set(it.key(), it.value());
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json parsed = json::parse(in, nullptr, false);
    if (parsed.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
    merge(parsed);
  }

  template <typename T>
  T get(const std::string& key) const {
    if (!values_.contains(key)) throw ConfigError("unknown key '" + key + "'");
    return values_.at(key).get<T>();
  }

  std::string dump() const { return values_.dump(2); }

 private:
  json values_;
};

/// Typed, validated view of a Config.
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t P = 300;
  Granularity granularity = Granularity::one_byte;
  std::string nids = "dt";
  std::size_t mu = 20;
  std::vector<std::size_t> mask_positions;  // resolved byte positions
  std::string data_path;

  std::size_t synth_n_benign = 2000, synth_n_malicious = 2000;
  std::size_t synth_signature_start = 8, synth_signature_count = 32;
  int synth_benign_lo = 0, synth_benign_hi = 127, synth_malicious_lo = 128, synth_malicious_hi = 255;
  std::uint64_t synth_noise_seed = 1;
  double train_fraction = 0.75;

  std::size_t emb_dim = 32, emb_window = 2, emb_epochs = 5, emb_negatives = 5;
  double emb_lr = 0.025;
  std::string emb_checkpoint;

  std::string nids_checkpoint;
  std::size_t nids_mlp_hidden = 64, nids_mlp_epochs = 100;
  double nids_svm_c = 1.0, nids_lr_c = 1.0;

  std::size_t gen_hidden = 64, mle_epochs = 10, mle_batch = 32;
  double mle_lr = 1e-3, pg_lr = 1e-4;
  bool baseline = false;

  std::size_t rollout_M = 16, rollout_lag = 0;

  std::vector<std::size_t> disc_windows{3, 4, 5};
  std::size_t disc_filters = 64, disc_batch = 64, disc_pretrain_epochs = 3, disc_k = 3;
  double disc_lr = 1e-4, disc_dropout = 0.0;

  std::size_t epochs = 30, g_steps = 1, d_steps = 3, pg_batch = 64, adv_batch = 256, benign_batch = 256,
              eval_batch = 512;
  bool early_stop = false;

  std::size_t token_count() const { return P / bytes_per_token(granularity); }
};

namespace detail {

inline std::size_t count_key(const Config& c, const std::string& key, std::size_t min_value) {
  const auto v = c.get<std::int64_t>(key);
  if (v < static_cast<std::int64_t>(min_value)) {
    throw ConfigError(key + " must be >= " + std::to_string(min_value) + ", got " + std::to_string(v));
  }
  return static_cast<std::size_t>(v);
}

inline std::vector<std::size_t> index_list(const Config& c, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& v : c.values().at(key)) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(key + " must list non-negative integers");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

}  // namespace detail

inline RunConfig resolve_config(const Config& c) {
  RunConfig r;
  const auto seed = c.get<std::int64_t>("seed");
  if (seed < 0) throw ConfigError("seed must be non-negative");
  r.seed = static_cast<std::uint64_t>(seed);
  r.P = detail::count_key(c, "P", 1);
  try {
    r.granularity = granularity_from_string(c.get<std::string>("granularity"));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (r.granularity == Granularity::two_byte && r.P % 2 != 0) throw ConfigError("two_byte granularity needs an even P");
  r.nids = c.get<std::string>("nids");
  if (r.nids != "mlp" && r.nids != "svm" && r.nids != "dt" && r.nids != "lr") {
    throw ConfigError("nids must be one of mlp, svm, dt, lr; got '" + r.nids + "'");
  }
  {
    const auto mu = c.get<std::int64_t>("mu");
    if (mu < 0) throw ConfigError("mu must be >= 0 (number of fixed byte positions), got " + std::to_string(mu));
    if (mu > static_cast<std::int64_t>(r.P)) throw ConfigError("mu must not exceed P");
    r.mu = static_cast<std::size_t>(mu);
  }
  const auto explicit_positions = detail::index_list(c, "mask.positions");
  if (!explicit_positions.empty()) {
    if (explicit_positions.size() != r.mu) {
      throw ConfigError("mask.positions lists " + std::to_string(explicit_positions.size()) + " positions but mu is " +
                        std::to_string(r.mu));
    }
    r.mask_positions = explicit_positions;
  } else {
    auto candidates = detail::index_list(c, "mask.candidates");
    if (candidates.empty()) {
      candidates.resize(r.P);
      std::iota(candidates.begin(), candidates.end(), std::size_t{0});
    }
    if (candidates.size() < r.mu) throw ConfigError("mask.candidates has fewer entries than mu");
    r.mask_positions.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(r.mu));
  }
  for (std::size_t p : r.mask_positions)
    if (p >= r.P) throw ConfigError("mask position " + std::to_string(p) + " outside packet length P");
  std::sort(r.mask_positions.begin(), r.mask_positions.end());
  if (std::adjacent_find(r.mask_positions.begin(), r.mask_positions.end()) != r.mask_positions.end()) {
    throw ConfigError("mask positions must be distinct");
  }
  r.data_path = c.get<std::string>("data.path");

  r.synth_n_benign = detail::count_key(c, "synth.n_benign", 0);
  r.synth_n_malicious = detail::count_key(c, "synth.n_malicious", 0);
  r.synth_signature_start = detail::count_key(c, "synth.signature_start", 0);
  r.synth_signature_count = detail::count_key(c, "synth.signature_count", 0);
  if (r.data_path.empty() && r.synth_signature_start + r.synth_signature_count > r.P) {
    throw ConfigError("synthetic signature positions exceed P");
  }
  auto byte_key = [&](const std::string& key) {
    const auto v = c.get<std::int64_t>(key);
    if (v < 0 || v > 255) throw ConfigError(key + " must lie in [0, 255]");
    return static_cast<int>(v);
  };
  r.synth_benign_lo = byte_key("synth.benign_lo");
  r.synth_benign_hi = byte_key("synth.benign_hi");
  r.synth_malicious_lo = byte_key("synth.malicious_lo");
  r.synth_malicious_hi = byte_key("synth.malicious_hi");
  r.synth_noise_seed = detail::count_key(c, "synth.noise_seed", 0);
  r.train_fraction = c.get<double>("split.train_fraction");
  if (!(r.train_fraction > 0 && r.train_fraction < 1)) throw ConfigError("split.train_fraction must lie in (0, 1)");

  r.emb_dim = detail::count_key(c, "embedding.dim", 1);
  r.emb_window = detail::count_key(c, "embedding.window", 1);
  r.emb_epochs = detail::count_key(c, "embedding.epochs", 0);
  r.emb_negatives = detail::count_key(c, "embedding.negatives", 1);
  r.emb_lr = c.get<double>("embedding.lr");
  if (!(r.emb_lr > 0)) throw ConfigError("embedding.lr must be positive");
  r.emb_checkpoint = c.get<std::string>("embedding.checkpoint");

  r.nids_checkpoint = c.get<std::string>("nids.checkpoint");
  r.nids_mlp_hidden = detail::count_key(c, "nids.mlp_hidden", 1);
  r.nids_mlp_epochs = detail::count_key(c, "nids.mlp_epochs", 1);
  r.nids_svm_c = c.get<double>("nids.svm_c");
  r.nids_lr_c = c.get<double>("nids.lr_c");
  if (!(r.nids_svm_c > 0) || !(r.nids_lr_c > 0)) throw ConfigError("NIDS regularization constants must be positive");

  r.gen_hidden = detail::count_key(c, "generator.hidden", 1);
  r.mle_epochs = detail::count_key(c, "generator.mle_epochs", 0);
  r.mle_batch = detail::count_key(c, "generator.mle_batch", 1);
  r.mle_lr = c.get<double>("generator.mle_lr");
  r.pg_lr = c.get<double>("generator.pg_lr");
  if (!(r.mle_lr > 0) || !(r.pg_lr > 0)) throw ConfigError("generator learning rates must be positive");
  r.baseline = c.get<bool>("generator.baseline");

  r.rollout_M = detail::count_key(c, "rollout.M", 1);
  r.rollout_lag = detail::count_key(c, "rollout.lag", 0);

  r.disc_windows = detail::index_list(c, "disc.windows");
  if (r.disc_windows.empty()) throw ConfigError("disc.windows must not be empty");
  for (std::size_t l : r.disc_windows) {
    if (l == 0) throw ConfigError("disc.windows entries must be >= 1");
    if (l > r.token_count()) throw ConfigError("disc.windows entry " + std::to_string(l) + " exceeds sequence length");
  }
  r.disc_filters = detail::count_key(c, "disc.filters", 1);
  r.disc_batch = detail::count_key(c, "disc.batch", 2);
  r.disc_pretrain_epochs = detail::count_key(c, "disc.pretrain_epochs", 0);
  r.disc_k = detail::count_key(c, "disc.epochs_per_step", 1);
  r.disc_lr = c.get<double>("disc.lr");
  if (!(r.disc_lr > 0)) throw ConfigError("disc.lr must be positive");
  r.disc_dropout = c.get<double>("disc.dropout");
  if (!(r.disc_dropout >= 0 && r.disc_dropout < 1)) throw ConfigError("disc.dropout must lie in [0, 1)");

  r.epochs = detail::count_key(c, "train.epochs", 1);
  r.g_steps = detail::count_key(c, "train.g_steps", 1);
  r.d_steps = detail::count_key(c, "train.d_steps", 1);
  r.pg_batch = detail::count_key(c, "train.pg_batch", 1);
  r.adv_batch = detail::count_key(c, "train.adv_batch", 1);
  r.benign_batch = detail::count_key(c, "train.benign_batch", 1);
  r.eval_batch = detail::count_key(c, "train.eval_batch", 1);
  r.early_stop = c.get<bool>("train.early_stop");
  return r;
}

}  // namespace attackgan
