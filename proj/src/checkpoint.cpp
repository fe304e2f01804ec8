#include "kgadapt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <set>

#include <openssl/evp.h>

#include "kgadapt/errors.hpp"
#include "kgadapt/textio.hpp"

namespace kgadapt {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

namespace {
void append_le(std::string& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  char buf[4];
  std::memcpy(buf, &bits, 4);
  out.append(buf, 4);
}

float read_le(const char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}
}  // namespace

std::string tensor_bytes(const ParamSet& params, const std::function<bool(const std::string&)>& select) {
  std::string out;
  for (const auto& [name, entry] : params) {
    if (!select(name)) continue;
    out.reserve(out.size() + entry.value.numel() * 4);
    for (float v : entry.value.span()) append_le(out, v);
  }
  return out;
}

std::string params_checksum(const ParamSet& params, const std::function<bool(const std::string&)>& select) {
  std::string buf;
  for (const auto& [name, entry] : params) {
    if (!select(name)) continue;
    buf += name;
    buf.push_back('\0');
    buf += shape_str(entry.value.shape());
    buf.push_back('\0');
    for (float v : entry.value.span()) append_le(buf, v);
  }
  return sha256_hex(buf);
}

std::string params_checksum(const ParamSet& params) {
  return params_checksum(params, [](const std::string&) { return true; });
}

namespace {
std::string group_of(const std::string& name) {
  if (name.rfind(backbone_names::kPrefix, 0) == 0) return "backbone";
  if (name.rfind(adapter_names::kFusionPrefix, 0) == 0) return "fusion";
  const auto second = name.find('.', name.find('.') + 1);
  return name.substr(0, second);  // adapter.<KIND>
}
}  // namespace

std::map<std::string, std::string> group_checksums(const ParamSet& params) {
  std::set<std::string> groups;
  for (const auto& [name, _] : params) groups.insert(group_of(name));
  std::map<std::string, std::string> out;
  for (const auto& g : groups)
    out[g] = params_checksum(params, [&](const std::string& n) { return group_of(n) == g; });
  return out;
}

nlohmann::json model_spec_json(const ModelSpec& s) {
  nlohmann::json adapters = nlohmann::json::array();
  for (const auto& a : s.adapters) adapters.push_back({{"kind", to_string(a.kind)}, {"bottleneck", a.bottleneck}});
  return {{"encoder",
           {{"layers", s.encoder.layers},
            {"dim", s.encoder.dim},
            {"heads", s.encoder.heads},
            {"ffn_dim", s.encoder.ffn_dim},
            {"max_len", s.encoder.max_len},
            {"vocab_size", s.encoder.vocab_size}}},
          {"adapters", adapters},
          {"fusion", s.has_fusion},
          {"mode", to_string(s.mode)},
          {"active", s.active}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  const auto& e = j.at("encoder");
  s.encoder.layers = e.at("layers");
  s.encoder.dim = e.at("dim");
  s.encoder.heads = e.at("heads");
  s.encoder.ffn_dim = e.at("ffn_dim");
  s.encoder.max_len = e.at("max_len");
  s.encoder.vocab_size = e.at("vocab_size");
  for (const auto& a : j.at("adapters"))
    s.adapters.push_back({parse_adapter_kind(a.at("kind")), a.at("bottleneck").get<std::size_t>()});
  s.has_fusion = j.at("fusion");
  s.mode = parse_adapter_mode(j.at("mode"));
  s.active = j.at("active");
  return s;
}

std::filesystem::path manifest_path(const std::filesystem::path& stem) {
  auto p = stem;
  p += ".json";
  return p;
}

std::filesystem::path blob_path(const std::filesystem::path& stem) {
  auto p = stem;
  p += ".bin";
  return p;
}

std::string save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& stem) {
  ckpt.model.spec.validate();
  const std::string blob = tensor_bytes(ckpt.model.params, [](const std::string&) { return true; });
  const std::string hash = sha256_hex(blob);
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, entry] : ckpt.model.params) {
    tensors.push_back({{"name", name}, {"shape", entry.value.shape()}, {"offset", offset}});
    offset += entry.value.numel() * 4;
  }
  nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                             {"model", model_spec_json(ckpt.model.spec)},
                             {"tensors", tensors},
                             {"provenance", ckpt.provenance},
                             {"content_hash", hash}};
  write_file(blob_path(stem), blob);
  write_file(manifest_path(stem), manifest.dump(1) + "\n");
  return hash;
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path(stem)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint manifest " + manifest_path(stem).string() + ": " + e.what());
  }
  const int version = manifest.value("format_version", -1);
  if (version != kCheckpointFormatVersion)
    throw ConfigError("checkpoint " + stem.string() + " has format version " + std::to_string(version) +
                      ", expected " + std::to_string(kCheckpointFormatVersion));

  const std::string blob = read_file(blob_path(stem));
  const std::string expected = manifest.at("content_hash");
  const std::string actual = sha256_hex(blob);
  if (actual != expected)
    throw DataError("checkpoint " + stem.string() + ": content hash mismatch (blob corrupted or truncated)");

  Checkpoint ckpt;
  try {
    ckpt.model.spec = model_spec_from_json(manifest.at("model"));
    ckpt.provenance = manifest.at("provenance");
    for (const auto& t : manifest.at("tensors")) {
      const Shape shape = t.at("shape").get<Shape>();
      const std::size_t offset = t.at("offset");
      const std::size_t n = shape_numel(shape);
      if (offset + 4 * n > blob.size()) throw DataError("tensor " + t.at("name").get<std::string>() + " past blob end");
      std::vector<float> data(n);
      for (std::size_t i = 0; i < n; ++i) data[i] = read_le(blob.data() + offset + 4 * i);
      ckpt.model.params.add(t.at("name"), Tensor(shape, std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint manifest " + manifest_path(stem).string() + ": " + e.what());
  }
  ckpt.model.spec.validate();
  ckpt.content_hash = actual;
  return ckpt;
}

}  // namespace kgadapt
