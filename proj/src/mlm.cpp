#include "kgadapt/mlm.hpp"

#include <cmath>

#include "kgadapt/errors.hpp"

namespace kgadapt {

void MlmHyper::validate() const {
  if (!(mask_rate > 0.0 && mask_rate <= 1.0))
    throw ConfigError("MLM masking rate must lie in (0, 1]; with no masked tokens the loss is undefined");
  if (batch == 0) throw ConfigError("MLM batch size must be positive");
  if (warmup == 0) throw ConfigError("warmup steps must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
}

MaskedBatch mask_tokens(std::span<const TokenSeq> seqs, std::size_t vocab_size, std::size_t max_len,
                        double mask_rate, Rng& rng) {
  if (vocab_size <= Vocab::kNumSpecial) throw ConfigError("MLM needs at least one regular token");
  MaskedBatch out;
  out.batch = TokenBatch::pack(seqs, max_len);
  auto& ids = out.batch.ids;
  std::vector<std::size_t> eligible;
  for (std::size_t r = 0; r < ids.size(); ++r)
    if (out.batch.mask[r] && !Vocab::is_special(static_cast<TokenId>(ids[r]))) eligible.push_back(r);
  if (eligible.empty()) throw DataError("MLM batch has no regular tokens");
  for (std::size_t r : eligible)
    if (rng.bernoulli(mask_rate)) out.rows.push_back(r);
  if (out.rows.empty()) out.rows.push_back(eligible[rng.below(eligible.size())]);
  for (std::size_t r : out.rows) {
    out.targets.push_back(ids[r]);
    const double u = rng.uniform();
    if (u < 0.8)
      ids[r] = Vocab::kMask;
    else if (u < 0.9)
      ids[r] = Vocab::kNumSpecial + rng.below(vocab_size - Vocab::kNumSpecial);
  }
  return out;
}

template <typename T>
Var mlm_loss(Graph<T>& g, const EncoderConfig& config, const MaskedBatch& batch) {
  const HiddenStateVars states = encode(g, config, batch.batch);
  Var picked = g.gather_rows(states.final, batch.rows);
  Var logits = g.add_bias(g.matmul_nt(picked, g.param(backbone_names::tok_embed())),
                          g.param(backbone_names::mlm_bias()));
  return g.cross_entropy(logits, batch.targets);
}

template Var mlm_loss<float>(Graph<float>&, const EncoderConfig&, const MaskedBatch&);
template Var mlm_loss<double>(Graph<double>&, const EncoderConfig&, const MaskedBatch&);

MlmResult mlm_pretrain(const std::vector<TokenSeq>& corpus, const EncoderConfig& config, const MlmHyper& hyper) {
  hyper.validate();
  config.validate();
  if (corpus.empty()) throw DataError("MLM corpus is empty");
  Rng root(hyper.seed);
  Rng init_rng = root.split("init");
  Rng order_rng = root.split("order");
  Rng mask_rng = root.split("mask");

  MlmResult result;
  result.params = init_backbone(config, init_rng);
  AdamState state;
  std::vector<std::size_t> order(corpus.size());
  std::size_t cursor = order.size();
  for (std::size_t step = 0; step < hyper.steps; ++step) {
    std::vector<TokenSeq> batch;
    while (batch.size() < std::min(hyper.batch, corpus.size())) {
      if (cursor == order.size()) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(corpus[order[cursor++]]);
    }
    const MaskedBatch masked = mask_tokens(batch, config.vocab_size, config.max_len, hyper.mask_rate, mask_rng);
    auto grads = grad_eval(result.params, [&](Graph<float>& g) { return mlm_loss(g, config, masked); });
    if (!std::isfinite(grads.loss)) throw NumericError("non-finite MLM loss at step " + std::to_string(step));
    const double lr = warmup_lr(step + 1, hyper.lr, hyper.warmup);
    adam_step(result.params, grads.grads, state, lr);
    result.curve.points.push_back({step, lr, static_cast<double>(grads.loss)});
  }
  return result;
}

}  // namespace kgadapt
