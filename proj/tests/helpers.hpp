#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "kgadapt/adapters.hpp"
#include "kgadapt/objectives.hpp"
#include "kgadapt/synthetic.hpp"

namespace kgadapt::testing {

inline Vocab letters_vocab() {
  return Vocab({"[PAD]", "[UNK]", "[MASK]", "[SEP]", "a", "b", "c", "d", "e", "f", "g", "h"});
}

inline EncoderConfig tiny_encoder(std::size_t dim = 8, std::size_t vocab = 12) {
  EncoderConfig c;
  c.layers = 2;
  c.dim = dim;
  c.heads = 2;
  c.ffn_dim = 2 * dim;
  c.max_len = 8;
  c.vocab_size = vocab;
  return c;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(scale * rng.normal());
  return t;
}

inline std::vector<float> random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(scale * rng.normal());
  return v;
}

/// Four adapters and fusion over a random backbone, with adapter and fusion
/// weights rescaled so that every path carries a non-negligible gradient.
inline AdaptedEncoder fused_model(const EncoderConfig& config, std::size_t bottleneck, std::uint64_t seed,
                                  double scale = 0.3) {
  Rng rng(seed);
  auto model = insert_adapters(config, init_backbone(config, rng), knowledge_adapter_kinds(), bottleneck, seed + 1);
  add_fusion(model, rng);
  model.use_fusion();
  for (const auto& name : model.params.names()) {
    const bool up = name.find("W_up") != std::string::npos;
    const bool qk = name.ends_with(".Q") || name.ends_with(".K");
    if (!up && !qk) continue;
    auto& t = model.params.mutable_value(name);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(scale * rng.normal());
  }
  return model;
}

inline TextItem item(std::vector<std::string> tokens, Pool pool = Pool::Tokens, Span span = {}) {
  return TextItem{std::move(tokens), {"xx"}, pool, span};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("kgadapt-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::filesystem::path path_;
};

/// Small synthetic benchmark that generates in milliseconds.
inline SyntheticConfig small_synthetic(std::uint64_t seed = 7) {
  SyntheticConfig c;
  c.entities = 40;
  c.relations = 4;
  c.triples = 80;
  c.name_words = 30;
  c.seed = seed;
  return c;
}

}  // namespace kgadapt::testing
