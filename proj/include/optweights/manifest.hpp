#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace optw {

inline constexpr const char* kArtifactVersion = "0.1.0";

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct FileDigest {
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
  std::string version = kArtifactVersion;

  nlohmann::json to_json() const;
};

/// Fills in digests for `input_paths` and `output_paths` (which must exist)
/// and writes the manifest atomically.
RunManifest write_manifest(const std::filesystem::path& manifest_path, const std::string& command,
                           const nlohmann::json& config, const std::vector<std::uint64_t>& seeds,
                           const std::vector<std::filesystem::path>& input_paths,
                           const std::vector<std::filesystem::path>& output_paths);

/// True when every listed output still has the recorded digest.
bool verify_manifest(const std::filesystem::path& manifest_path);

}  // namespace optw
