#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "kgadapt/adapters.hpp"

namespace kgadapt {

inline constexpr int kCheckpointFormatVersion = 1;

std::string sha256_hex(std::string_view bytes);

/// Little-endian float32 bytes of the selected tensors in name order.
std::string tensor_bytes(const ParamSet& params, const std::function<bool(const std::string&)>& select);

/// SHA-256 over names, shapes and values of the selected tensors.
std::string params_checksum(const ParamSet& params, const std::function<bool(const std::string&)>& select);
std::string params_checksum(const ParamSet& params);

/// Checksums of the groups "backbone", "adapter.<KIND>", "fusion" present in the set.
std::map<std::string, std::string> group_checksums(const ParamSet& params);

struct Checkpoint {
  AdaptedEncoder model;
  nlohmann::json provenance = nlohmann::json::object();
  std::string content_hash;  // filled by save/load
};

nlohmann::json model_spec_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Writes <stem>.json (manifest) and <stem>.bin (tensor blob). Returns the content hash.
std::string save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& stem);
/// Throws ConfigError on a version mismatch and DataError when the blob does not match the manifest.
Checkpoint load_checkpoint(const std::filesystem::path& stem);

std::filesystem::path manifest_path(const std::filesystem::path& stem);
std::filesystem::path blob_path(const std::filesystem::path& stem);

}  // namespace kgadapt
