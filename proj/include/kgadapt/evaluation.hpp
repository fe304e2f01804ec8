#pragma once

#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgadapt/objectives.hpp"
#include "kgadapt/synthetic.hpp"

namespace kgadapt {

/// Rank assigned when the gold item is absent from the candidate set.
inline constexpr std::size_t kMissingRank = std::numeric_limits<std::size_t>::max();

struct CandidateIndex {
  std::string lang;
  std::vector<std::string> ids;  // ascending entity id
  Tensor embeddings;             // [ids, d]

  std::span<const float> row(std::size_t i) const;
};

/// Rows are mean-pooled encodings of each entity's `lang` label; entities without one are skipped.
CandidateIndex embed_labels(const AdaptedEncoder& model, const Vocab& vocab, const Mlkg& kg, const std::string& lang);

/// Candidate ids by descending cosine, ties by ascending id.
std::vector<std::string> rank(std::span<const float> query, const CandidateIndex& index);
/// 1-based rank of `gold`, or kMissingRank when it is not a candidate.
std::size_t gold_rank(std::span<const float> query, const CandidateIndex& index, const std::string& gold);

double hits_at_k(std::span<const std::size_t> ranks, std::size_t k);
double mrr(std::span<const std::size_t> ranks);

enum class Task { Completion, Alignment };
std::string to_string(Task task);
Task parse_task(const std::string& text);

struct LanguageMetrics {
  std::string lang;
  Category category = Category::Sup;
  std::size_t n = 0;
  double hit1 = 0.0;
  double hitk = 0.0;
  double mrr = 0.0;
  friend bool operator==(const LanguageMetrics&, const LanguageMetrics&) = default;
};

struct CategoryMetrics {
  std::size_t languages = 0;
  double hit1 = 0.0;
  double hitk = 0.0;
  double mrr = 0.0;
  friend bool operator==(const CategoryMetrics&, const CategoryMetrics&) = default;
};

struct MetricReport {
  Task task = Task::Completion;
  std::string variant = "model";
  std::size_t k = 10;
  std::vector<LanguageMetrics> languages;
  std::map<std::string, CategoryMetrics> categories;  // keyed by category name
  nlohmann::json meta = nlohmann::json::object();     // seed, checkpoint hash, config hash, profile

  /// Recomputes the unweighted per-category means from `languages`.
  void aggregate();
  /// Unweighted mean over every language in the report.
  CategoryMetrics overall() const;
  const LanguageMetrics* language(const std::string& lang) const;
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

LanguageMetrics summarize(const std::string& lang, Category category, std::span<const std::size_t> ranks,
                          std::size_t k);

TextItem completion_query(const Mlkg& kg, const Triple& t, const std::string& lang);

/// Per test language: rank every entity label of that language for "subject SEP relation".
MetricReport eval_completion(const AdaptedEncoder& model, const Vocab& vocab, const Mlkg& kg,
                             const std::vector<Triple>& test, const LanguageSplit& split,
                             const std::vector<std::string>& languages, std::size_t k = 10);

/// Per target language: rank every entity label of the target for the source label.
MetricReport eval_alignment(const AdaptedEncoder& model, const Vocab& vocab, const Mlkg& kg,
                            const std::vector<AlignmentPair>& test, const LanguageSplit& split, std::size_t k = 10);

/// Training pairs for the downstream tasks.
std::vector<TrainPair> completion_pairs(const Mlkg& kg, const std::vector<Triple>& train,
                                        const std::vector<std::string>& languages);
std::vector<TrainPair> alignment_pairs(const Mlkg& kg, const std::vector<AlignmentPair>& train);

/// Epoch-wise shuffled batches in which no two pairs share a positive label.
BatchSource epoch_batches(std::vector<TrainPair> pairs, std::size_t batch, std::size_t* steps_per_epoch);

struct FinetunePlan {
  TrainHyper hyper;
  std::size_t fusion_epochs = 1;  // stage 3: fusion only (skipped without fusion)
  std::size_t full_epochs = 1;    // stage 4: every parameter
  double fusion_lr = 0.0;         // stage 3 learning rate; 0 reuses hyper.lr
};

struct FinetuneResult {
  LossCurve fusion_curve;
  LossCurve full_curve;
};

/// Stage 3 then stage 4 on the given task pairs. Stage 3 verifies that only fusion.* changed.
FinetuneResult finetune_pairs(AdaptedEncoder& model, const Vocab& vocab, const std::vector<TrainPair>& pairs,
                              const FinetunePlan& plan);

FinetuneResult finetune_completion(AdaptedEncoder& model, const Vocab& vocab, const Mlkg& kg,
                                   const std::vector<Triple>& train, const LanguageSplit& split,
                                   const FinetunePlan& plan);
FinetuneResult finetune_alignment(AdaptedEncoder& model, const Vocab& vocab, const Mlkg& kg,
                                  const std::vector<AlignmentPair>& train, const FinetunePlan& plan);

}  // namespace kgadapt
