#include "optweights/manifest.hpp"

#include <array>
#include <memory>

#include <openssl/evp.h>

#include "optweights/csv_io.hpp"
#include "optweights/error.hpp"

namespace optw {

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  require(ctx != nullptr, ErrorKind::IoError, "sha256: cannot allocate digest context");
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  const bool ok = EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx.get(), md.data(), &len) == 1;
  require(ok, ErrorKind::IoError, "sha256: digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[md[k] >> 4];
    out += hex[md[k] & 0xF];
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  return sha256_hex(read_text_file(path));
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config;
  j["seeds"] = seeds;
  auto list = [](const std::vector<FileDigest>& files) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : files) arr.push_back({{"path", f.path}, {"sha256", f.sha256}});
    return arr;
  };
  j["inputs"] = list(inputs);
  j["outputs"] = list(outputs);
  j["version"] = version;
  return j;
}

RunManifest write_manifest(const std::filesystem::path& manifest_path, const std::string& command,
                           const nlohmann::json& config, const std::vector<std::uint64_t>& seeds,
                           const std::vector<std::filesystem::path>& input_paths,
                           const std::vector<std::filesystem::path>& output_paths) {
  RunManifest m;
  m.command = command;
  m.config = config;
  m.seeds = seeds;
  for (const auto& p : input_paths) m.inputs.push_back({p.string(), sha256_file(p)});
  for (const auto& p : output_paths) m.outputs.push_back({p.string(), sha256_file(p)});
  write_file_atomic(manifest_path, m.to_json().dump(2) + "\n");
  return m;
}

bool verify_manifest(const std::filesystem::path& manifest_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::exception&) {
    return false;
  }
  if (!j.contains("outputs") || !j["outputs"].is_array()) return false;
  for (const auto& f : j["outputs"]) {
    const std::filesystem::path p = f.at("path").get<std::string>();
    if (!std::filesystem::exists(p)) return false;
    if (sha256_file(p) != f.at("sha256").get<std::string>()) return false;
  }
  return true;
}

}  // namespace optw
