#include "kgadapt/mlkg.hpp"

#include <algorithm>
#include <sstream>

#include "kgadapt/errors.hpp"
#include "kgadapt/textio.hpp"

namespace kgadapt {

const std::string* Entity::label(const std::string& lang) const {
  auto it = labels.find(lang);
  return it == labels.end() ? nullptr : &it->second;
}

namespace {
void check_labels(const Entity& e, const char* what) {
  if (e.id.empty()) throw DataError(std::string(what) + " with empty id");
  if (e.labels.empty()) throw DataError(std::string(what) + " " + e.id + " has no labels");
  for (const auto& [lang, label] : e.labels)
    if (lang.empty() || label.empty()) throw DataError(std::string(what) + " " + e.id + " has an empty label");
}
}  // namespace

void Mlkg::add_entity(Entity e) {
  check_labels(e, "entity");
  const std::string id = e.id;
  if (!entities.emplace(id, std::move(e)).second) throw DataError("duplicate entity id " + id);
}

void Mlkg::add_relation(Relation r) {
  check_labels(r, "relation");
  const std::string id = r.id;
  if (!relations.emplace(id, std::move(r)).second) throw DataError("duplicate relation id " + id);
}

void Mlkg::add_triple(Triple t) {
  if (!entities.count(t.head)) throw DataError("triple references unknown entity " + t.head);
  if (!entities.count(t.tail)) throw DataError("triple references unknown entity " + t.tail);
  if (!relations.count(t.rel)) throw DataError("triple references unknown relation " + t.rel);
  triples.push_back(std::move(t));
}

const Entity& Mlkg::entity(const std::string& id) const {
  auto it = entities.find(id);
  if (it == entities.end()) throw DataError("unknown entity " + id);
  return it->second;
}

const Relation& Mlkg::relation(const std::string& id) const {
  auto it = relations.find(id);
  if (it == relations.end()) throw DataError("unknown relation " + id);
  return it->second;
}

std::set<std::string> Mlkg::languages() const {
  std::set<std::string> langs;
  for (const auto& [_, e] : entities)
    for (const auto& [lang, __] : e.labels) langs.insert(lang);
  for (const auto& [_, r] : relations)
    for (const auto& [lang, __] : r.labels) langs.insert(lang);
  return langs;
}

MlkgStats Mlkg::stats() const {
  MlkgStats s;
  s.entities = entities.size();
  s.relations = relations.size();
  s.triples = triples.size();
  s.languages = languages().size();
  for (const auto& [_, e] : entities) s.labels += e.labels.size();
  return s;
}

// ---- files ------------------------------------------------------------------

namespace {
std::string where(const std::filesystem::path& path, std::size_t line) {
  return path.filename().string() + ":" + std::to_string(line + 1);
}

std::vector<Entity> load_labelled(const std::filesystem::path& path) {
  std::vector<Entity> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto fields = split_fields(lines[i], '\t');
    if (fields.size() != 2) throw DataError(where(path, i) + ": expected 'id<TAB>lang=label|...'");
    Entity e;
    e.id = fields[0];
    for (const auto& pair : split_fields(fields[1], '|')) {
      const auto eq = pair.find('=');
      if (eq == std::string::npos || eq == 0 || eq + 1 == pair.size())
        throw DataError(where(path, i) + ": malformed label '" + pair + "'");
      if (!e.labels.emplace(pair.substr(0, eq), pair.substr(eq + 1)).second)
        throw DataError(where(path, i) + ": language " + pair.substr(0, eq) + " listed twice");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::string format_labelled(const std::map<std::string, Entity>& items) {
  std::ostringstream out;
  for (const auto& [id, e] : items) {
    out << id << '\t';
    bool first = true;
    for (const auto& [lang, label] : e.labels) {
      if (label.find_first_of("\t|\n") != std::string::npos)
        throw DataError("label of " + id + " contains a reserved character");
      out << (first ? "" : "|") << lang << '=' << label;
      first = false;
    }
    out << '\n';
  }
  return out.str();
}

Span parse_span(const std::string& a, const std::string& b, const std::string& ctx) {
  Span s{parse_index(a, ctx), parse_index(b, ctx)};
  if (s.start > s.end) throw DataError(ctx + ": span start after end");
  return s;
}

bool span_matches(const std::vector<std::string>& tokens, Span span, const std::string& label) {
  if (span.end >= tokens.size()) return false;
  const auto want = split_whitespace(label);
  if (want.size() != span.length()) return false;
  return std::equal(want.begin(), want.end(), tokens.begin() + static_cast<std::ptrdiff_t>(span.start));
}
}  // namespace

Mlkg load_mlkg(const std::filesystem::path& entities, const std::filesystem::path& relations,
               const std::filesystem::path& triples) {
  Mlkg kg;
  for (auto& e : load_labelled(entities)) kg.add_entity(std::move(e));
  for (auto& r : load_labelled(relations)) kg.add_relation(std::move(r));
  const auto lines = read_lines(triples);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_fields(lines[i], '\t');
    if (f.size() != 3) throw DataError(where(triples, i) + ": expected 'head<TAB>rel<TAB>tail'");
    try {
      kg.add_triple({f[0], f[1], f[2]});
    } catch (const DataError& e) {
      throw DataError(where(triples, i) + ": " + e.what());
    }
  }
  return kg;
}

void save_mlkg(const Mlkg& kg, const std::filesystem::path& entities, const std::filesystem::path& relations,
               const std::filesystem::path& triples) {
  write_file(entities, format_labelled(kg.entities));
  write_file(relations, format_labelled(kg.relations));
  std::ostringstream out;
  for (const auto& t : kg.triples) out << t.head << '\t' << t.rel << '\t' << t.tail << '\n';
  write_file(triples, out.str());
}

std::vector<TaggedSentence> load_c1(const std::filesystem::path& path) {
  std::vector<TaggedSentence> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_fields(lines[i], '\t');
    if (f.size() != 5) throw DataError(where(path, i) + ": expected 5 fields");
    TaggedSentence s{f[0], f[1], parse_span(f[2], f[3], where(path, i)), split_whitespace(f[4])};
    if (s.span.end >= s.tokens.size()) throw DataError(where(path, i) + ": span outside sentence");
    out.push_back(std::move(s));
  }
  return out;
}

void save_c1(const std::vector<TaggedSentence>& records, const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& r : records)
    out << r.lang << '\t' << r.entity << '\t' << r.span.start << '\t' << r.span.end << '\t' << join_tokens(r.tokens)
        << '\n';
  write_file(path, out.str());
}

std::vector<TripleSentence> load_c2(const std::filesystem::path& path, const std::string& lang) {
  std::vector<TripleSentence> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_fields(lines[i], '\t');
    if (f.size() != 6) throw DataError(where(path, i) + ": expected 6 fields");
    TripleSentence s{{f[0], f[1], f[2]}, parse_span(f[3], f[4], where(path, i)), split_whitespace(f[5]), lang};
    if (s.object.end >= s.tokens.size()) throw DataError(where(path, i) + ": span outside sentence");
    out.push_back(std::move(s));
  }
  return out;
}

void save_c2(const std::vector<TripleSentence>& records, const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& r : records)
    out << r.triple.head << '\t' << r.triple.rel << '\t' << r.triple.tail << '\t' << r.object.start << '\t'
        << r.object.end << '\t' << join_tokens(r.tokens) << '\n';
  write_file(path, out.str());
}

void validate_c1(const std::vector<TaggedSentence>& records, const Mlkg& kg) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string* label = kg.entity(r.entity).label(r.lang);
    if (!label) throw DataError("C1 record " + std::to_string(i) + ": entity " + r.entity + " has no " + r.lang + " label");
    if (!span_matches(r.tokens, r.span, *label))
      throw DataError("C1 record " + std::to_string(i) + ": span does not reproduce the label of " + r.entity);
  }
}

C2Ingest ingest_c2(const std::vector<TripleSentence>& records, const Mlkg& kg) {
  C2Ingest out;
  for (const auto& r : records) {
    auto it = kg.entities.find(r.triple.tail);
    const std::string* label = it == kg.entities.end() ? nullptr : it->second.label(r.lang);
    const bool resolves = label && kg.entities.count(r.triple.head) && kg.relations.count(r.triple.rel);
    if (!resolves || !span_matches(r.tokens, r.object, *label) || r.object.length() == r.tokens.size()) {
      ++out.rejected;
      continue;
    }
    out.accepted.push_back(r);
  }
  return out;
}

// ---- filters ----------------------------------------------------------------

std::vector<Triple> filter_triples(const std::vector<Triple>& triples, const std::set<std::string>& entities) {
  std::vector<Triple> out;
  for (const auto& t : triples)
    if (entities.count(t.head) && entities.count(t.tail)) out.push_back(t);
  return out;
}

Mlkg filter_entities(const Mlkg& kg, std::size_t min_labels) {
  Mlkg out;
  out.relations = kg.relations;
  std::set<std::string> kept;
  for (const auto& [id, e] : kg.entities)
    if (e.labels.size() > min_labels) {
      out.entities.emplace(id, e);
      kept.insert(id);
    }
  out.triples = filter_triples(kg.triples, kept);
  return out;
}

std::vector<TaggedSentence> filter_descriptions(const std::vector<TaggedSentence>& records, std::size_t min_langs) {
  std::map<std::string, std::set<std::string>> langs;
  for (const auto& r : records) langs[r.entity].insert(r.lang);
  std::vector<TaggedSentence> out;
  for (const auto& r : records)
    if (langs[r.entity].size() >= min_langs) out.push_back(r);
  return out;
}

Mlkg restrict_languages(const Mlkg& kg, const std::set<std::string>& langs) {
  auto restrict = [&](const std::map<std::string, Entity>& in) {
    std::map<std::string, Entity> result;
    for (const auto& [id, e] : in) {
      Entity copy{id, {}};
      for (const auto& [lang, label] : e.labels)
        if (langs.count(lang)) copy.labels.emplace(lang, label);
      if (!copy.labels.empty()) result.emplace(id, std::move(copy));
    }
    return result;
  };
  Mlkg out;
  out.entities = restrict(kg.entities);
  out.relations = restrict(kg.relations);
  for (const auto& t : kg.triples)
    if (out.entities.count(t.head) && out.entities.count(t.tail) && out.relations.count(t.rel))
      out.triples.push_back(t);
  return out;
}

// ---- language categories ------------------------------------------------------

std::string to_string(Category c) {
  switch (c) {
    case Category::Sup: return "Sup";
    case Category::ZsIn: return "ZS-In";
    case Category::ZsUn: return "ZS-Un";
  }
  return "?";
}

Category parse_category(const std::string& text) {
  for (auto c : {Category::Sup, Category::ZsIn, Category::ZsUn})
    if (to_string(c) == text) return c;
  throw DataError("unknown language category '" + text + "'");
}

void LanguageSplit::validate() const {
  std::set<std::string> seen;
  for (const auto* group : {&sup, &zs_in, &zs_un})
    for (const auto& lang : *group)
      if (!seen.insert(lang).second) throw ConfigError("language " + lang + " assigned to two categories");
}

std::optional<Category> LanguageSplit::category(const std::string& lang) const {
  for (auto c : {Category::Sup, Category::ZsIn, Category::ZsUn}) {
    const auto& group = languages(c);
    if (std::find(group.begin(), group.end(), lang) != group.end()) return c;
  }
  return std::nullopt;
}

const std::vector<std::string>& LanguageSplit::languages(Category c) const {
  switch (c) {
    case Category::Sup: return sup;
    case Category::ZsIn: return zs_in;
    case Category::ZsUn: return zs_un;
  }
  return sup;
}

std::set<std::string> LanguageSplit::adapter_languages() const {
  std::set<std::string> out(sup.begin(), sup.end());
  out.insert(zs_in.begin(), zs_in.end());
  return out;
}

LanguageSplit assign_language_splits(const std::vector<std::string>& languages, const SplitSizes& sizes) {
  if (sizes.sup + sizes.zs_in + sizes.zs_un > languages.size())
    throw ConfigError("language split asks for " + std::to_string(sizes.sup + sizes.zs_in + sizes.zs_un) +
                      " languages but only " + std::to_string(languages.size()) + " exist");
  LanguageSplit split;
  auto it = languages.begin();
  split.sup.assign(it, it + static_cast<std::ptrdiff_t>(sizes.sup));
  it += static_cast<std::ptrdiff_t>(sizes.sup);
  split.zs_in.assign(it, it + static_cast<std::ptrdiff_t>(sizes.zs_in));
  it += static_cast<std::ptrdiff_t>(sizes.zs_in);
  split.zs_un.assign(it, it + static_cast<std::ptrdiff_t>(sizes.zs_un));
  split.validate();
  return split;
}

void save_split(const LanguageSplit& split, const std::filesystem::path& path) {
  std::ostringstream out;
  for (auto c : {Category::Sup, Category::ZsIn, Category::ZsUn})
    for (const auto& lang : split.languages(c)) out << to_string(c) << '\t' << lang << '\n';
  write_file(path, out.str());
}

LanguageSplit load_split(const std::filesystem::path& path) {
  LanguageSplit split;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_fields(lines[i], '\t');
    if (f.size() != 2) throw DataError(where(path, i) + ": expected 'category<TAB>language'");
    switch (parse_category(f[0])) {
      case Category::Sup: split.sup.push_back(f[1]); break;
      case Category::ZsIn: split.zs_in.push_back(f[1]); break;
      case Category::ZsUn: split.zs_un.push_back(f[1]); break;
    }
  }
  split.validate();
  return split;
}

}  // namespace kgadapt
