#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kgadapt/vocab.hpp"

namespace kgadapt {

using Labels = std::map<std::string, std::string>;  // language -> label

struct Entity {
  std::string id;
  Labels labels;
  const std::string* label(const std::string& lang) const;
  friend bool operator==(const Entity&, const Entity&) = default;
};

using Relation = Entity;

struct Triple {
  std::string head;
  std::string rel;
  std::string tail;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct MlkgStats {
  std::size_t entities = 0;
  std::size_t relations = 0;
  std::size_t triples = 0;
  std::size_t languages = 0;
  std::size_t labels = 0;
};

/// Entities and relations keyed by id (iteration is id order), triples in file order.
struct Mlkg {
  std::map<std::string, Entity> entities;
  std::map<std::string, Relation> relations;
  std::vector<Triple> triples;

  void add_entity(Entity e);
  void add_relation(Relation r);
  /// Throws DataError when an id does not resolve.
  void add_triple(Triple t);
  const Entity& entity(const std::string& id) const;
  const Relation& relation(const std::string& id) const;
  std::set<std::string> languages() const;
  MlkgStats stats() const;
  friend bool operator==(const Mlkg&, const Mlkg&) = default;
};

/// C1 record: an entity mention inside a sentence.
struct TaggedSentence {
  std::string lang;
  std::string entity;
  Span span;
  std::vector<std::string> tokens;
  friend bool operator==(const TaggedSentence&, const TaggedSentence&) = default;
};

/// C2 record: a sentence realising a triple, with the object span marked.
struct TripleSentence {
  Triple triple;
  Span object;
  std::vector<std::string> tokens;
  std::string lang;  // not stored in the file; C2 is monolingual
  friend bool operator==(const TripleSentence&, const TripleSentence&) = default;
};

Mlkg load_mlkg(const std::filesystem::path& entities, const std::filesystem::path& relations,
               const std::filesystem::path& triples);
void save_mlkg(const Mlkg& kg, const std::filesystem::path& entities, const std::filesystem::path& relations,
               const std::filesystem::path& triples);

std::vector<TaggedSentence> load_c1(const std::filesystem::path& path);
void save_c1(const std::vector<TaggedSentence>& records, const std::filesystem::path& path);
std::vector<TripleSentence> load_c2(const std::filesystem::path& path, const std::string& lang);
void save_c2(const std::vector<TripleSentence>& records, const std::filesystem::path& path);

/// Throws DataError unless every span reproduces the entity's label tokens.
void validate_c1(const std::vector<TaggedSentence>& records, const Mlkg& kg);

struct C2Ingest {
  std::vector<TripleSentence> accepted;
  std::size_t rejected = 0;
};
/// Drops records whose span is not the object label or that contain nothing but the label.
C2Ingest ingest_c2(const std::vector<TripleSentence>& records, const Mlkg& kg);

/// Keeps entities with strictly more than `min_labels` labels, then refilters triples.
Mlkg filter_entities(const Mlkg& kg, std::size_t min_labels);
std::vector<Triple> filter_triples(const std::vector<Triple>& triples, const std::set<std::string>& entities);
/// Keeps an entity's sentences iff they cover at least `min_langs` languages.
std::vector<TaggedSentence> filter_descriptions(const std::vector<TaggedSentence>& records, std::size_t min_langs);

/// Copy with labels restricted to `langs`; entities or relations left without labels are dropped
/// together with their triples.
Mlkg restrict_languages(const Mlkg& kg, const std::set<std::string>& langs);

enum class Category { Sup, ZsIn, ZsUn };
std::string to_string(Category c);
Category parse_category(const std::string& text);

struct LanguageSplit {
  std::vector<std::string> sup;
  std::vector<std::string> zs_in;
  std::vector<std::string> zs_un;

  /// Throws ConfigError when a language is listed twice.
  void validate() const;
  std::optional<Category> category(const std::string& lang) const;
  const std::vector<std::string>& languages(Category c) const;
  /// Languages whose data may feed adapter training (Sup and ZS-In).
  std::set<std::string> adapter_languages() const;
  friend bool operator==(const LanguageSplit&, const LanguageSplit&) = default;
};

struct SplitSizes {
  std::size_t sup = 3;
  std::size_t zs_in = 2;
  std::size_t zs_un = 1;
  friend bool operator==(const SplitSizes&, const SplitSizes&) = default;
};

/// Assigns languages in the given order: the first `sup` are Sup, then ZS-In, then ZS-Un.
LanguageSplit assign_language_splits(const std::vector<std::string>& languages, const SplitSizes& sizes);
void save_split(const LanguageSplit& split, const std::filesystem::path& path);
LanguageSplit load_split(const std::filesystem::path& path);

}  // namespace kgadapt
