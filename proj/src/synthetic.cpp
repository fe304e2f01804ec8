#include "kgadapt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "kgadapt/errors.hpp"
#include "kgadapt/rng.hpp"
#include "kgadapt/textio.hpp"

namespace kgadapt {

void SyntheticConfig::validate() const {
  if (languages < 3) throw ConfigError("synthetic: need at least 3 languages");
  if (entities < 10) throw ConfigError("synthetic: need at least 10 entities");
  if (relations < 2) throw ConfigError("synthetic: need at least 2 relations");
  if (entity_types == 0 || affix_classes == 0 || name_words < 4)
    throw ConfigError("synthetic: entity_types, affix_classes must be positive and name_words >= 4");
  if (split.sup == 0) throw ConfigError("synthetic: the base language must be supervised (sup >= 1)");
  if (split.sup + split.zs_in + split.zs_un > languages)
    throw ConfigError("synthetic: language categories exceed the number of languages");
  for (double f : {completion_test_fraction, alignment_test_fraction, pretrain_triple_fraction, pretrain_code_switch})
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("synthetic: fractions must lie in [0, 1]");
}

std::string language_name(std::size_t index) { return "l" + std::to_string(index); }

std::vector<std::string> SyntheticData::all_languages() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < config.languages; ++i) out.push_back(language_name(i));
  return out;
}

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstv";
constexpr std::string_view kVowels = "aeiou";
constexpr std::string_view kAffixLetters = "cjhqwxyz";
constexpr std::size_t kFillers = 12;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

class Lexicon {
 public:
  Lexicon(std::size_t count, Rng& rng) {
    std::set<std::string> seen;
    const std::size_t capacity = kConsonants.size() * kVowels.size();
    while (words_.size() < count) {
      // Two syllables until that space is crowded, then three.
      const std::size_t syllables = seen.size() < capacity * capacity / 2 ? 2 : 3;
      std::string w;
      for (std::size_t s = 0; s < syllables; ++s) {
        w.push_back(kConsonants[rng.below(kConsonants.size())]);
        w.push_back(kVowels[rng.below(kVowels.size())]);
      }
      if (seen.insert(w).second) words_.push_back(w);
    }
  }
  const std::string& operator[](std::size_t i) const { return words_.at(i); }

 private:
  std::vector<std::string> words_;
};

/// Per-language suffix tables.
class AffixScheme {
 public:
  AffixScheme(const SyntheticConfig& c, const LanguageSplit& split, Rng& rng) : classes_(c.affix_classes) {
    std::vector<std::string> pool;
    for (char a : kAffixLetters)
      for (char b : kAffixLetters) pool.push_back(std::string{a, b});
    rng.shuffle(pool);
    const std::set<std::string> zs_un(split.zs_un.begin(), split.zs_un.end());
    const bool borrow = c.zs_un_borrows_affixes && !split.zs_in.empty();
    std::size_t next = 0;
    suffix_[language_name(0)] = std::vector<std::string>(classes_);
    for (std::size_t l = 1; l < c.languages; ++l) {
      const std::string lang = language_name(l);
      if (borrow && zs_un.count(lang)) continue;
      auto& row = suffix_[lang];
      for (std::size_t k = 0; k < classes_; ++k) {
        if (next == pool.size()) throw ConfigError("synthetic: too many languages x affix classes");
        row.push_back(pool[next++]);
      }
    }
    if (borrow) {
      std::size_t u = 0;
      for (const auto& lang : split.zs_un) {
        auto& row = suffix_[lang];
        for (std::size_t k = 0; k < classes_; ++k)
          row.push_back(suffix_.at(split.zs_in[(k + u) % split.zs_in.size()])[k]);
        ++u;
      }
    }
  }

  std::string word(const std::string& lang, const std::string& base) const {
    return base + suffix_.at(lang)[fnv1a(base) % classes_];
  }

  std::vector<std::string> words(const std::string& lang, const std::vector<std::string>& base) const {
    std::vector<std::string> out;
    out.reserve(base.size());
    for (const auto& w : base) out.push_back(word(lang, w));
    return out;
  }

 private:
  std::size_t classes_;
  std::map<std::string, std::vector<std::string>> suffix_;
};

/// Base-language building blocks; every sentence is assembled in base words and then rewritten.
struct World {
  std::vector<std::string> entity_ids;
  std::map<std::string, std::vector<std::string>> entity_words;  // base label tokens
  std::map<std::string, std::size_t> entity_type;
  std::vector<std::string> type_words;
  std::vector<std::string> relation_ids;
  std::map<std::string, std::vector<std::string>> relation_words;
  std::vector<std::string> fillers;
  std::map<std::string, std::vector<std::size_t>> outgoing;  // entity -> triple indices
  std::map<std::string, std::vector<std::size_t>> incoming;
};

std::string padded_id(char prefix, std::size_t i, std::size_t width) {
  std::string n = std::to_string(i);
  return std::string(1, prefix) + std::string(width > n.size() ? width - n.size() : 0, '0') + n;
}

struct Piece {
  std::vector<std::string> words;
  bool target = false;
};

/// Concatenates pieces and records the span of the piece flagged as target.
std::pair<std::vector<std::string>, Span> assemble(const std::vector<Piece>& pieces) {
  std::vector<std::string> out;
  Span span;
  for (const auto& p : pieces) {
    if (p.target) span = {out.size(), out.size() + p.words.size() - 1};
    out.insert(out.end(), p.words.begin(), p.words.end());
  }
  return {out, span};
}

std::vector<std::string> one(const std::string& w) { return {w}; }

/// C1-style description sentence for entity e (target = e's mention).
std::pair<std::vector<std::string>, Span> description(const World& w, const std::vector<Triple>& triples,
                                                      const std::string& e, Rng& rng) {
  const auto& label = w.entity_words.at(e);
  const auto& type = one(w.type_words[w.entity_type.at(e)]);
  std::vector<int> forms{0, 1};
  if (w.outgoing.count(e)) forms.push_back(2);
  if (w.incoming.count(e)) forms.push_back(3);
  const auto& f = w.fillers;
  switch (forms[rng.below(forms.size())]) {
    case 0:
      return assemble({{label, true}, {one(f[0])}, {one(f[1])}, {type}});
    case 1:
      return assemble({{one(f[2])}, {label, true}, {one(f[3])}, {type}, {one(f[4])}});
    case 2: {
      const auto& out = w.outgoing.at(e);
      const Triple& t = triples[out[rng.below(out.size())]];
      return assemble({{label, true}, {w.relation_words.at(t.rel)}, {w.entity_words.at(t.tail)}, {one(f[5])}});
    }
    default: {
      const auto& in = w.incoming.at(e);
      const Triple& t = triples[in[rng.below(in.size())]];
      return assemble({{w.entity_words.at(t.head)}, {w.relation_words.at(t.rel)}, {label, true}, {one(f[6])}});
    }
  }
}

/// Sentence realising a triple (target = object mention).
std::pair<std::vector<std::string>, Span> fact(const World& w, const Triple& t, Rng& rng) {
  const auto& h = w.entity_words.at(t.head);
  const auto& r = w.relation_words.at(t.rel);
  const auto& o = w.entity_words.at(t.tail);
  const auto& f = w.fillers;
  switch (rng.below(3)) {
    case 0: return assemble({{h}, {r}, {o, true}, {one(f[7])}});
    case 1: return assemble({{one(f[8])}, {h}, {r}, {one(f[9])}, {o, true}});
    default: return assemble({{h}, {one(f[10])}, {r}, {o, true}, {one(f[11])}});
  }
}

}  // namespace

SyntheticData gen_synthetic(const SyntheticConfig& c) {
  c.validate();
  Rng root(c.seed);
  SyntheticData data;
  data.config = c;
  data.base_lang = language_name(0);
  data.split = assign_language_splits(data.all_languages(), c.split);
  const auto langs = data.all_languages();

  Rng lex_rng = root.split("lexicon");
  const Lexicon lex(c.name_words + c.entity_types + 2 * c.relations + kFillers, lex_rng);
  Rng affix_rng = root.split("affixes");
  const AffixScheme affixes(c, data.split, affix_rng);

  World w;
  std::size_t cursor = c.name_words;
  for (std::size_t t = 0; t < c.entity_types; ++t) w.type_words.push_back(lex[cursor++]);
  std::vector<std::vector<std::string>> rel_words;
  for (std::size_t r = 0; r < c.relations; ++r) {
    rel_words.push_back({lex[cursor], lex[cursor + 1]});
    cursor += 2;
  }
  for (std::size_t i = 0; i < kFillers; ++i) w.fillers.push_back(lex[cursor++]);

  auto labels_for = [&](const std::vector<std::string>& base) {
    Labels labels;
    for (const auto& lang : langs) labels[lang] = join_tokens(affixes.words(lang, base));
    return labels;
  };

  // Entities: 1-3 name words, unique per entity.
  Rng ent_rng = root.split("entities");
  std::set<std::vector<std::string>> used;
  std::vector<std::vector<std::string>> by_type(c.entity_types);
  const std::size_t id_width = std::to_string(c.entities - 1).size() < 4 ? 4 : std::to_string(c.entities - 1).size();
  for (std::size_t i = 0; i < c.entities; ++i) {
    std::vector<std::string> words;
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt > 10000) throw ConfigError("synthetic: name lexicon too small for unique entity labels");
      const double u = ent_rng.uniform();
      const std::size_t len = u < 0.3 ? 1 : (u < 0.8 ? 2 : 3);
      words.clear();
      for (std::size_t k = 0; k < len; ++k) words.push_back(lex[ent_rng.below(c.name_words)]);
      if (used.insert(words).second) break;
    }
    const std::string id = padded_id('E', i, id_width);
    const std::size_t type = ent_rng.below(c.entity_types);
    w.entity_ids.push_back(id);
    w.entity_words[id] = words;
    w.entity_type[id] = type;
    by_type[type].push_back(id);
    data.kg.add_entity({id, labels_for(words)});
  }

  // Relations draw any subject; the object type is fixed per relation.
  Rng rel_rng = root.split("relations");
  std::vector<std::size_t> range;
  for (std::size_t r = 0; r < c.relations; ++r) {
    const std::string id = padded_id('R', r, 2);
    std::size_t type;
    do {
      type = rel_rng.below(c.entity_types);
    } while (by_type[type].size() < 2);
    range.push_back(type);
    w.relation_ids.push_back(id);
    w.relation_words[id] = rel_words[r];
    data.kg.add_relation({id, labels_for(rel_words[r])});
  }

  // Triples: (head, relation) determines the object.
  Rng tri_rng = root.split("triples");
  std::set<std::pair<std::string, std::string>> head_rel;
  for (std::size_t attempt = 0; data.kg.triples.size() < c.triples && attempt < 50 * c.triples + 1000; ++attempt) {
    const std::size_t r = tri_rng.below(c.relations);
    const auto& tails = by_type[range[r]];
    const std::string& h = w.entity_ids[tri_rng.below(w.entity_ids.size())];
    const std::string& t = tails[tri_rng.below(tails.size())];
    if (h == t || !head_rel.emplace(h, w.relation_ids[r]).second) continue;
    w.outgoing[h].push_back(data.kg.triples.size());
    w.incoming[t].push_back(data.kg.triples.size());
    data.kg.add_triple({h, w.relation_ids[r], t});
  }
  if (data.kg.triples.size() < c.triples)
    throw ConfigError("synthetic: could only place " + std::to_string(data.kg.triples.size()) + " of " +
                      std::to_string(c.triples) + " triples");
  const auto& triples = data.kg.triples;

  // C1 descriptions in the adapter-training languages.
  Rng c1_rng = root.split("c1");
  const auto adapter_langs = data.split.adapter_languages();
  for (const auto& e : w.entity_ids)
    for (const auto& lang : langs) {
      if (!adapter_langs.count(lang)) continue;
      for (std::size_t s = 0; s < c.sentences_per_entity; ++s) {
        auto [tokens, span] = description(w, triples, e, c1_rng);
        data.c1.push_back({lang, e, span, affixes.words(lang, tokens)});
      }
    }

  // C2 fact sentences, base language only.
  Rng c2_rng = root.split("c2");
  for (const auto& t : triples) {
    auto [tokens, span] = fact(w, t, c2_rng);
    data.c2.push_back({t, span, tokens, data.base_lang});
  }

  // MLM corpus over every language.
  Rng pre_rng = root.split("pretrain");
  auto realise = [&](const std::string& lang, const std::vector<std::string>& base) {
    std::vector<std::string> out;
    for (const auto& word : base) {
      const std::string& l = pre_rng.bernoulli(c.pretrain_code_switch) ? langs[pre_rng.below(langs.size())] : lang;
      out.push_back(affixes.word(l, word));
    }
    return out;
  };
  for (const auto& lang : langs) {
    for (const auto& e : w.entity_ids)
      for (std::size_t s = 0; s < c.sentences_per_entity; ++s)
        data.pretrain_corpus.push_back({lang, realise(lang, description(w, triples, e, pre_rng).first)});
    for (const auto& t : triples)
      if (pre_rng.bernoulli(c.pretrain_triple_fraction))
        data.pretrain_corpus.push_back({lang, realise(lang, fact(w, t, pre_rng).first)});
  }
  pre_rng.shuffle(data.pretrain_corpus);

  // Held-out splits.
  Rng split_rng = root.split("splits");
  std::vector<std::size_t> order(triples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  split_rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::ceil(c.completion_test_fraction * static_cast<double>(order.size())));
  std::vector<bool> is_test(triples.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
  for (std::size_t i = 0; i < triples.size(); ++i)
    (is_test[i] ? data.completion_test : data.completion_train).push_back(triples[i]);

  std::vector<std::string> ents = w.entity_ids;
  split_rng.shuffle(ents);
  const auto n_align = static_cast<std::size_t>(std::ceil(c.alignment_test_fraction * static_cast<double>(ents.size())));
  std::set<std::string> align_test(ents.begin(), ents.begin() + static_cast<std::ptrdiff_t>(n_align));
  for (const auto& e : w.entity_ids) {
    if (align_test.count(e)) {
      for (std::size_t l = 1; l < langs.size(); ++l) data.alignment_test.push_back({e, data.base_lang, langs[l]});
    } else {
      for (const auto& lang : data.split.sup)
        if (lang != data.base_lang) data.alignment_train.push_back({e, data.base_lang, lang});
    }
  }
  return data;
}

// ---- persistence ---------------------------------------------------------------

nlohmann::json synthetic_config_json(const SyntheticConfig& c) {
  return {{"languages", c.languages},
          {"entities", c.entities},
          {"relations", c.relations},
          {"triples", c.triples},
          {"sentences_per_entity", c.sentences_per_entity},
          {"name_words", c.name_words},
          {"entity_types", c.entity_types},
          {"affix_classes", c.affix_classes},
          {"split", {{"sup", c.split.sup}, {"zs_in", c.split.zs_in}, {"zs_un", c.split.zs_un}}},
          {"completion_test_fraction", c.completion_test_fraction},
          {"alignment_test_fraction", c.alignment_test_fraction},
          {"pretrain_triple_fraction", c.pretrain_triple_fraction},
          {"pretrain_code_switch", c.pretrain_code_switch},
          {"zs_un_borrows_affixes", c.zs_un_borrows_affixes},
          {"seed", c.seed}};
}

SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  c.languages = j.at("languages");
  c.entities = j.at("entities");
  c.relations = j.at("relations");
  c.triples = j.at("triples");
  c.sentences_per_entity = j.at("sentences_per_entity");
  c.name_words = j.at("name_words");
  c.entity_types = j.at("entity_types");
  c.affix_classes = j.at("affix_classes");
  c.split.sup = j.at("split").at("sup");
  c.split.zs_in = j.at("split").at("zs_in");
  c.split.zs_un = j.at("split").at("zs_un");
  c.completion_test_fraction = j.at("completion_test_fraction");
  c.alignment_test_fraction = j.at("alignment_test_fraction");
  c.pretrain_triple_fraction = j.at("pretrain_triple_fraction");
  c.pretrain_code_switch = j.at("pretrain_code_switch");
  c.zs_un_borrows_affixes = j.at("zs_un_borrows_affixes");
  c.seed = j.at("seed");
  return c;
}

namespace {

std::string triples_tsv(const std::vector<Triple>& ts) {
  std::ostringstream out;
  for (const auto& t : ts) out << t.head << '\t' << t.rel << '\t' << t.tail << '\n';
  return out.str();
}

std::vector<Triple> parse_triples(const std::filesystem::path& path) {
  std::vector<Triple> out;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto f = split_fields(line, '\t');
    if (f.size() != 3) throw DataError(path.filename().string() + ": expected 3 fields");
    out.push_back({f[0], f[1], f[2]});
  }
  return out;
}

std::string pairs_tsv(const std::vector<AlignmentPair>& ps) {
  std::ostringstream out;
  for (const auto& p : ps) out << p.entity << '\t' << p.source << '\t' << p.target << '\n';
  return out.str();
}

std::vector<AlignmentPair> parse_pairs(const std::filesystem::path& path) {
  std::vector<AlignmentPair> out;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto f = split_fields(line, '\t');
    if (f.size() != 3) throw DataError(path.filename().string() + ": expected 3 fields");
    out.push_back({f[0], f[1], f[2]});
  }
  return out;
}
}  // namespace

void save_synthetic(const SyntheticData& d, const std::filesystem::path& dir) {
  nlohmann::json meta = {{"base_language", d.base_lang}, {"generator", synthetic_config_json(d.config)}};
  write_file(dir / "dataset.json", meta.dump(2) + "\n");
  save_mlkg(d.kg, dir / "entities.tsv", dir / "relations.tsv", dir / "triples.tsv");
  save_c1(d.c1, dir / "c1.tsv");
  save_c2(d.c2, dir / "c2.tsv");
  save_split(d.split, dir / "splits.tsv");
  std::ostringstream corpus;
  for (const auto& line : d.pretrain_corpus) corpus << line.lang << '\t' << join_tokens(line.tokens) << '\n';
  write_file(dir / "corpus.tsv", corpus.str());
  write_file(dir / "completion_train.tsv", triples_tsv(d.completion_train));
  write_file(dir / "completion_test.tsv", triples_tsv(d.completion_test));
  write_file(dir / "alignment_train.tsv", pairs_tsv(d.alignment_train));
  write_file(dir / "alignment_test.tsv", pairs_tsv(d.alignment_test));
}

SyntheticData load_synthetic(const std::filesystem::path& dir) {
  SyntheticData d;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / "dataset.json"));
    d.base_lang = meta.at("base_language");
    d.config = synthetic_config_from_json(meta.at("generator"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset.json: " + std::string(e.what()));
  }
  d.kg = load_mlkg(dir / "entities.tsv", dir / "relations.tsv", dir / "triples.tsv");
  d.c1 = load_c1(dir / "c1.tsv");
  validate_c1(d.c1, d.kg);
  d.c2 = load_c2(dir / "c2.tsv", d.base_lang);
  d.split = load_split(dir / "splits.tsv");
  for (const auto& line : read_lines(dir / "corpus.tsv")) {
    if (line.empty()) continue;
    auto f = split_fields(line, '\t');
    if (f.size() != 2) throw DataError("corpus.tsv: expected 'lang<TAB>sentence'");
    d.pretrain_corpus.push_back({f[0], split_whitespace(f[1])});
  }
  d.completion_train = parse_triples(dir / "completion_train.tsv");
  d.completion_test = parse_triples(dir / "completion_test.tsv");
  d.alignment_train = parse_pairs(dir / "alignment_train.tsv");
  d.alignment_test = parse_pairs(dir / "alignment_test.tsv");
  return d;
}

std::vector<std::string> vocabulary_corpus(const SyntheticData& d) {
  std::vector<std::string> texts;
  for (const auto& line : d.pretrain_corpus) texts.push_back(join_tokens(line.tokens));
  for (const auto& [_, e] : d.kg.entities)
    for (const auto& [__, label] : e.labels) texts.push_back(label);
  for (const auto& [_, r] : d.kg.relations)
    for (const auto& [__, label] : r.labels) texts.push_back(label);
  for (const auto& s : d.c1) texts.push_back(join_tokens(s.tokens));
  for (const auto& s : d.c2) texts.push_back(join_tokens(s.tokens));
  return texts;
}

}  // namespace kgadapt
