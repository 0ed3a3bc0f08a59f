#pragma once

#include <openssl/evp.h>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "meps/error.hpp"
#include "meps/geometry/mesh_io.hpp"

#ifndef MEPS_VERSION
#define MEPS_VERSION "0.1.0"
#endif

namespace meps::cli {

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

inline std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(geo::detail::read_text(path)); }

/// Record of one command invocation. The id is the SHA-256 of the canonical
/// JSON of every other field, so identical invocations get identical ids.
struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string version = "meps " MEPS_VERSION;
  std::vector<std::pair<std::string, std::string>> inputs;  // (path, sha256)
  std::vector<std::string> outputs;

  void add_input(const std::filesystem::path& p) { inputs.emplace_back(p.generic_string(), file_sha256(p)); }
  void add_output(const std::filesystem::path& p) { outputs.push_back(p.generic_string()); }

  nlohmann::json body() const {
    nlohmann::json in = nlohmann::json::array();
    for (const auto& [path, digest] : inputs) in.push_back({{"path", path}, {"sha256", digest}});
    return {{"command", command}, {"config", config}, {"seed", seed},
            {"version", version}, {"inputs", in},     {"outputs", outputs}};
  }

  std::string id() const { return sha256_hex(body().dump()); }

  nlohmann::json to_json() const {
    auto j = body();
    j["manifest_id"] = id();
    return j;
  }

  void write(const std::filesystem::path& path) const { geo::detail::write_text(path, to_json().dump(2) + "\n"); }
};

/// "# manifest <id>" followed by the header row.
inline std::string csv_preamble(const std::string& manifest_id, const std::string& header) {
  return "# manifest " + manifest_id + "\n" + header + "\n";
}

}  // namespace meps::cli
