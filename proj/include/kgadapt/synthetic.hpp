#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "kgadapt/mlkg.hpp"

namespace kgadapt {

/// Desk-scale stand-in for a multilingual KG with description and fact corpora.
///
/// Language l0 is the base. Every other language rewrites each base word by
/// appending a suffix chosen by (language, word class); suffix letters never
/// occur in base words, so each rewrite is a bijection and alignment ground
/// truth is exact. With `zs_un_borrows_affixes`, ZS-Un languages take their
/// per-class suffixes from different ZS-In languages: each of their word forms
/// also exists in some ZS-In language, but no ZS-Un record is ever emitted into
/// an adapter-training or finetuning corpus.
struct SyntheticConfig {
  std::size_t languages = 6;
  std::size_t entities = 200;
  std::size_t relations = 8;
  std::size_t triples = 600;
  std::size_t sentences_per_entity = 2;
  std::size_t name_words = 60;  // size of the lexicon entity labels are drawn from
  std::size_t entity_types = 4;
  std::size_t affix_classes = 2;
  SplitSizes split;
  double completion_test_fraction = 0.15;
  double alignment_test_fraction = 0.3;
  double pretrain_triple_fraction = 0.5;  // per language, share of triples realised in the MLM corpus
  double pretrain_code_switch = 0.3;      // per-word rate of foreign forms in the MLM corpus
  bool zs_un_borrows_affixes = true;
  std::uint64_t seed = 7;

  void validate() const;
  friend bool operator==(const SyntheticConfig&, const SyntheticConfig&) = default;
};

struct AlignmentPair {
  std::string entity;
  std::string source;
  std::string target;
  friend auto operator<=>(const AlignmentPair&, const AlignmentPair&) = default;
};

struct CorpusLine {
  std::string lang;
  std::vector<std::string> tokens;
  friend bool operator==(const CorpusLine&, const CorpusLine&) = default;
};

struct SyntheticData {
  SyntheticConfig config;
  std::string base_lang;
  Mlkg kg;
  std::vector<TaggedSentence> c1;  // Sup and ZS-In languages only
  std::vector<TripleSentence> c2;  // base language only
  LanguageSplit split;
  std::vector<CorpusLine> pretrain_corpus;  // all languages
  std::vector<Triple> completion_train;
  std::vector<Triple> completion_test;
  std::vector<AlignmentPair> alignment_train;  // base -> non-base Sup languages
  std::vector<AlignmentPair> alignment_test;   // base -> every other language

  std::vector<std::string> all_languages() const;
  friend bool operator==(const SyntheticData&, const SyntheticData&) = default;
};

std::string language_name(std::size_t index);

nlohmann::json synthetic_config_json(const SyntheticConfig& config);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j);

SyntheticData gen_synthetic(const SyntheticConfig& config);

void save_synthetic(const SyntheticData& data, const std::filesystem::path& dir);
SyntheticData load_synthetic(const std::filesystem::path& dir);

/// Every whitespace string that may appear in an input sequence (labels and corpora).
std::vector<std::string> vocabulary_corpus(const SyntheticData& data);

}  // namespace kgadapt
