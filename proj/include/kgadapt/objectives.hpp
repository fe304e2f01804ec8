#pragma once

#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "kgadapt/adapters.hpp"
#include "kgadapt/mlkg.hpp"
#include "kgadapt/optim.hpp"
#include "kgadapt/rng.hpp"
#include "kgadapt/vocab.hpp"

namespace kgadapt {

// ---- InfoNCE ------------------------------------------------------------------

/// Fixed anchor/positive representations; row i of each matrix forms a pair.
struct ContrastiveBatch {
  Tensor anchors;    // [B, d]
  Tensor positives;  // [B, d]
  std::vector<std::string> provenance;
};

/// -(1/B) Σ_i log softmax_j(cos(a_i, p_j) / tau)[i], accumulated in double.
double infonce(const ContrastiveBatch& batch, double tau);

/// Same loss inside a graph; anchors and positives are [B, d].
template <typename T>
Var infonce_loss(Graph<T>& g, Var anchors, Var positives, T tau);

// ---- training items ---------------------------------------------------------------

enum class Pool {
  Tokens,  // every token except PAD, SEP and MASK
  Span,    // tokens span.start..span.end
};

/// One side of a training pair: a token sequence plus how to pool it.
struct TextItem {
  std::vector<std::string> tokens;
  std::vector<std::string> langs;  // every language contributing a token
  Pool pool = Pool::Tokens;
  Span span{};
};

struct TrainPair {
  TextItem anchor;
  TextItem positive;
  std::string source;  // record id for provenance
};

TextItem label_item(const std::string& label, const std::string& lang);

/// Mean-pooled final-layer representations, [items, d].
template <typename T>
Var encode_items(Graph<T>& g, const ModelSpec& spec, const Vocab& vocab, const std::vector<TextItem>& items);

/// Forward-only pooled representations, one row per item.
Tensor embed_items(const AdaptedEncoder& model, const Vocab& vocab, const std::vector<TextItem>& items,
                   std::size_t batch_size = 64);

// ---- samplers -----------------------------------------------------------------------
//
// Each sampler returns B pairs with distinct positives (so no in-batch negative
// is a duplicate of the gold item), drawn only from the languages present in
// the data it is given.

/// Entity alignment: two labels of the same entity in different languages.
class EpSampler {
 public:
  explicit EpSampler(const Mlkg& kg);
  std::vector<TrainPair> sample(std::size_t batch, Rng& rng) const;

 private:
  const Mlkg* kg_;
  std::vector<const Entity*> entities_;
  std::vector<std::uint64_t> cumulative_;  // ordered label pairs up to and including entity i
};

/// Triple completion: "subject SEP relation" -> object label, with code-switching.
class TpSampler {
 public:
  TpSampler(const Mlkg& kg, double code_switch);
  std::vector<TrainPair> sample(std::size_t batch, Rng& rng) const;
  std::size_t skipped() const { return skipped_; }

 private:
  const Mlkg* kg_;
  double code_switch_;
  std::vector<const Triple*> triples_;
  mutable std::size_t skipped_ = 0;
};

/// Entity mention in a C1 sentence -> the entity's label in another language.
class EsSampler {
 public:
  EsSampler(const std::vector<TaggedSentence>& c1, const Mlkg& kg);
  std::vector<TrainPair> sample(std::size_t batch, Rng& rng) const;

 private:
  const Mlkg* kg_;
  std::vector<const TaggedSentence*> records_;
};

/// C2 sentence with the object masked -> object label.
class TsSampler {
 public:
  explicit TsSampler(const std::vector<TripleSentence>& c2);
  std::vector<TrainPair> sample(std::size_t batch, Rng& rng) const;

 private:
  std::vector<const TripleSentence*> records_;
};

std::vector<TrainPair> sample_ep_batch(const Mlkg& kg, std::size_t batch, Rng& rng);
std::vector<TrainPair> sample_tp_batch(const Mlkg& kg, std::size_t batch, double code_switch, Rng& rng);
std::vector<TrainPair> sample_es_batch(const std::vector<TaggedSentence>& c1, const Mlkg& kg, std::size_t batch,
                                       Rng& rng);
std::vector<TrainPair> sample_ts_batch(const std::vector<TripleSentence>& c2, std::size_t batch, Rng& rng);

// ---- training -----------------------------------------------------------------------

struct TrainHyper {
  std::size_t batch = 32;
  std::size_t steps = 300;
  double lr = 1e-3;
  std::size_t warmup = 30;
  double tau = 0.05;
  double code_switch = 0.5;
  double fusion_reg = 0.0;  // weight of Σ(I − V)² over trainable fusion value matrices
  std::uint64_t seed = 7;

  void validate() const;
};

struct LossPoint {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct LossCurve {
  std::vector<LossPoint> points;
  std::string csv() const;  // header "step,lr,loss"
};

using BatchSource = std::function<std::vector<TrainPair>(std::size_t step, Rng& rng)>;
/// Observer called after each update with the step index and that step's pairs.
using StepObserver = std::function<void(std::size_t step, const std::vector<TrainPair>& pairs)>;

/// InfoNCE training of the parameters currently flagged trainable in `model.params`,
/// plus the fusion value regulariser when hyper.fusion_reg > 0. Throws NumericError
/// on a non-finite loss.
LossCurve train_contrastive(AdaptedEncoder& model, const Vocab& vocab, const BatchSource& source,
                            const TrainHyper& hyper, const StepObserver& observer = {});

/// Data an adapter may see: the KG restricted to the adapter-training languages,
/// C1 in those languages and monolingual C2.
struct AdapterData {
  Mlkg kg;
  std::vector<TaggedSentence> c1;
  std::vector<TripleSentence> c2;
};

BatchSource adapter_batches(AdapterKind kind, const AdapterData& data, const TrainHyper& hyper);

/// Trains adapter.<KIND>.* in single mode with everything else frozen. The
/// remaining parameter groups are checksummed before and after; any change
/// raises ContractViolation.
LossCurve train_adapter(AdaptedEncoder& model, AdapterKind kind, const Vocab& vocab, const AdapterData& data,
                        const TrainHyper& hyper, const StepObserver& observer = {});

/// Mean cosine between pooled anchors and positives of the given pairs.
double mean_pair_cosine(const AdaptedEncoder& model, const Vocab& vocab, const std::vector<TrainPair>& pairs);

}  // namespace kgadapt
