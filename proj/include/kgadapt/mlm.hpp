#pragma once

#include <span>
#include <vector>

#include "kgadapt/encoder.hpp"
#include "kgadapt/objectives.hpp"

namespace kgadapt {

struct MlmHyper {
  std::size_t batch = 32;
  std::size_t steps = 500;
  double lr = 1e-3;
  std::size_t warmup = 50;
  double mask_rate = 0.15;  // share of non-special tokens selected for prediction
  std::uint64_t seed = 7;

  /// Throws ConfigError for a zero masking rate (nothing to predict).
  void validate() const;
};

/// A padded batch with the selected positions and their original ids.
struct MaskedBatch {
  TokenBatch batch;
  std::vector<std::size_t> rows;     // flattened positions to predict
  std::vector<std::size_t> targets;  // original token ids at those rows
};

/// Selects tokens at `mask_rate` (at least one per batch) and corrupts them
/// 80/10/10 into MASK / a random regular token / unchanged.
MaskedBatch mask_tokens(std::span<const TokenSeq> seqs, std::size_t vocab_size, std::size_t max_len,
                        double mask_rate, Rng& rng);

/// Cross-entropy of the tied output embedding at the selected rows.
template <typename T>
Var mlm_loss(Graph<T>& g, const EncoderConfig& config, const MaskedBatch& batch);

struct MlmResult {
  ParamSet params;
  LossCurve curve;
};

/// Fresh backbone trained on `corpus` with epoch-wise shuffling.
MlmResult mlm_pretrain(const std::vector<TokenSeq>& corpus, const EncoderConfig& config, const MlmHyper& hyper);

}  // namespace kgadapt
