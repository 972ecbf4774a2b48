#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "attackgan/checkpoint.hpp"

namespace attackgan {

inline constexpr const char* kVersion = "0.1.0";

/// SHA-1 of "blob <size>\0" followed by the content, as git computes it.
inline std::string git_blob_hash(std::span<const unsigned char> content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("orchestrator", "cannot allocate hash context");
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("orchestrator", "SHA-1 computation failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

inline std::string git_blob_hash(const std::string& content) {
  return git_blob_hash(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(content.data()), content.size()));
}

inline nlohmann::json version_info() {
  return {{"attackgan", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", __VERSION__},
          {"checkpoint_format", Checkpoint::kVersion}};
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text, const std::string& module) {
  detail::write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()), module);
}

inline std::string read_text_file(const std::filesystem::path& path, const std::string& module) {
  const auto bytes = detail::read_file_bytes(path, module);
  return std::string(bytes.begin(), bytes.end());
}

inline nlohmann::json read_json_file(const std::filesystem::path& path, const std::string& module) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path, module), nullptr, false);
  if (j.is_discarded()) throw Error(module, path.string() + " is not valid JSON");
  return j;
}

/// Doubles as exact decimal text, for values that must survive a float32
/// checkpoint unchanged.
inline std::string exact_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace attackgan
