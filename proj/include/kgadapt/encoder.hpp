#pragma once

#include <functional>
#include <span>
#include <vector>

#include "kgadapt/autodiff.hpp"
#include "kgadapt/rng.hpp"
#include "kgadapt/tensor.hpp"
#include "kgadapt/vocab.hpp"

namespace kgadapt {

/// Shape of the pre-norm transformer backbone.
struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t max_len = 32;
  std::size_t vocab_size = 0;

  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Sequences padded to a common length and flattened to rows b*tokens + t.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t tokens = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> positions;
  std::vector<std::uint8_t> mask;
  std::vector<std::size_t> lengths;

  /// Throws ShapeError when a sequence is longer than max_len or empty.
  static TokenBatch pack(std::span<const TokenSeq> seqs, std::size_t max_len);
  std::size_t row(std::size_t b, std::size_t t) const { return b * tokens + t; }
};

/// Transforms the feed-forward output of `layer` before the residual add.
template <typename T>
using AdapterHook = std::function<Var(Graph<T>&, std::size_t layer, Var ffn_out)>;

struct HiddenStateVars {
  std::vector<Var> layers;  // residual stream after each layer, [batch*tokens, d]
  Var final;                // final layer norm of the last layer
};

/// Per-layer token representations, each [batch, tokens, d].
struct HiddenStates {
  std::vector<Tensor> layers;
  Tensor final;
};

namespace backbone_names {
std::string tok_embed();
std::string pos_embed();
std::string layer(std::size_t m, const std::string& leaf);
std::string final_gain();
std::string final_bias();
std::string mlm_bias();
inline constexpr const char* kPrefix = "backbone.";
}  // namespace backbone_names

/// Fresh backbone parameters: N(0, 0.02) matrices and embeddings, unit LN gains.
ParamSet init_backbone(const EncoderConfig& config, Rng& rng);

template <typename T>
HiddenStateVars encode(Graph<T>& g, const EncoderConfig& config, const TokenBatch& batch,
                       const AdapterHook<T>* hook = nullptr);

HiddenStates to_hidden_states(const Graph<float>& g, const HiddenStateVars& vars, const TokenBatch& batch);

/// Mean of rows span.start..span.end of one sequence's [tokens, d] states.
std::vector<float> mean_pool(const Tensor& hidden, Span span, std::span<const std::uint8_t> mask);

}  // namespace kgadapt
