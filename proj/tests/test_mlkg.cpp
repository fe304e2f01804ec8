#include <doctest.h>

#include <algorithm>
#include <random>

#include "helpers.hpp"
#include "kgadapt/errors.hpp"
#include "kgadapt/textio.hpp"

using namespace kgadapt;
using namespace kgadapt::testing;

namespace {

Entity with_labels(const std::string& id, std::size_t n) {
  Entity e{id, {}};
  for (std::size_t i = 0; i < n; ++i) e.labels[language_name(i)] = id + "_" + std::to_string(i);
  return e;
}

Mlkg label_count_kg() {
  Mlkg kg;
  kg.add_entity(with_labels("Q11", 11));
  kg.add_entity(with_labels("Q10", 10));
  kg.add_entity(with_labels("Q12", 12));
  kg.add_relation({"P1", {{"l0", "rel"}}});
  kg.add_triple({"Q11", "P1", "Q12"});
  kg.add_triple({"Q11", "P1", "Q10"});
  kg.add_triple({"Q10", "P1", "Q12"});
  return kg;
}

std::set<std::string> ids(const Mlkg& kg) {
  std::set<std::string> out;
  for (const auto& [id, e] : kg.entities) out.insert(id);
  return out;
}

}  // namespace

TEST_CASE("MLKG files round-trip") {
  TempDir dir("mlkg");
  Mlkg kg;
  kg.add_entity({"Q72", {{"en", "Zurich"}, {"it", "Zurigo"}}});
  kg.add_entity({"Q39", {{"en", "Switzerland"}, {"it", "Svizzera"}}});
  kg.add_relation({"P17", {{"en", "is located in"}, {"it", "si trova in"}}});
  kg.add_triple({"Q72", "P17", "Q39"});
  save_mlkg(kg, dir / "e.tsv", dir / "r.tsv", dir / "t.tsv");
  const Mlkg loaded = load_mlkg(dir / "e.tsv", dir / "r.tsv", dir / "t.tsv");
  CHECK(loaded == kg);
  CHECK(loaded.stats().labels == 4);
  CHECK(loaded.languages() == std::set<std::string>{"en", "it"});
  CHECK(read_lines(dir / "t.tsv").front() == "Q72\tP17\tQ39");

  SUBCASE("empty triples file") {
    write_file(dir / "t.tsv", "");
    CHECK(load_mlkg(dir / "e.tsv", dir / "r.tsv", dir / "t.tsv").triples.empty());
  }
  SUBCASE("unknown entity names its line") {
    write_file(dir / "t.tsv", "Q72\tP17\tQ39\nQ72\tP17\tQ404\n");
    try {
      load_mlkg(dir / "e.tsv", dir / "r.tsv", dir / "t.tsv");
      FAIL("expected a load error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
      CHECK(std::string(e.what()).find("Q404") != std::string::npos);
    }
  }
  SUBCASE("duplicate id") {
    write_file(dir / "e.tsv", "Q1\ten=a\nQ1\ten=b\n");
    CHECK_THROWS_AS(load_mlkg(dir / "e.tsv", dir / "r.tsv", dir / "t.tsv"), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_mlkg(dir / "none.tsv", dir / "r.tsv", dir / "t.tsv"), ConfigError);
  }
}

TEST_CASE("corpus files round-trip") {
  TempDir dir("corpora");
  const std::vector<TaggedSentence> c1{{"en", "Q72", {7, 7}, split_whitespace("De Botton spent his early years in Zurich")}};
  save_c1(c1, dir / "c1.tsv");
  CHECK(load_c1(dir / "c1.tsv") == c1);
  const std::vector<TripleSentence> c2{
      {{"Q72", "P17", "Q39"}, {6, 6}, split_whitespace("Zurich is the largest city in Switzerland"), "en"}};
  save_c2(c2, dir / "c2.tsv");
  CHECK(load_c2(dir / "c2.tsv", "en") == c2);
  write_file(dir / "bad.tsv", "en\tQ72\t7\t8\tin Zurich\n");
  CHECK_THROWS_AS(load_c1(dir / "bad.tsv"), DataError);
}

TEST_CASE("C1 and C2 span checks") {
  Mlkg kg;
  kg.add_entity({"Q72", {{"en", "Zurich"}}});
  kg.add_entity({"Q39", {{"en", "Switzerland"}}});
  kg.add_relation({"P17", {{"en", "is located in"}}});
  validate_c1({{"en", "Q72", {7, 7}, split_whitespace("De Botton spent his early years in Zurich")}}, kg);
  CHECK_THROWS_AS(validate_c1({{"en", "Q72", {6, 6}, split_whitespace("De Botton spent his early years in Zurich")}}, kg),
                  DataError);
  CHECK_THROWS_AS(validate_c1({{"it", "Q72", {0, 0}, split_whitespace("Zurich")}}, kg), DataError);

  const auto result = ingest_c2(
      {
          {{"Q72", "P17", "Q39"}, {6, 6}, split_whitespace("Zurich is the largest city in Switzerland"), "en"},
          {{"Q72", "P17", "Q39"}, {0, 0}, split_whitespace("Switzerland"), "en"},
          {{"Q72", "P17", "Q39"}, {0, 0}, split_whitespace("Zurich is in Switzerland"), "en"},
      },
      kg);
  CHECK(result.accepted.size() == 1);
  CHECK(result.rejected == 2);
}

TEST_CASE("entity filter keeps strictly more than the threshold") {
  const Mlkg kg = label_count_kg();
  const Mlkg f = filter_entities(kg, 10);
  CHECK(ids(f) == std::set<std::string>{"Q11", "Q12"});
  CHECK(f.triples == std::vector<Triple>{{"Q11", "P1", "Q12"}});
  CHECK(filter_entities(kg, 0) == kg);
  CHECK(filter_entities(f, 10) == f);
  for (const auto& t : f.triples) {
    CHECK(f.entities.count(t.head) == 1);
    CHECK(f.entities.count(t.tail) == 1);
  }
}

TEST_CASE("triple filter") {
  std::vector<Triple> triples{{"a", "r", "b"}, {"a", "r", "c"}, {"c", "r", "b"}, {"b", "r", "a"}};
  const std::set<std::string> keep{"a", "b"};
  const auto kept = filter_triples(triples, keep);
  CHECK(kept == std::vector<Triple>{{"a", "r", "b"}, {"b", "r", "a"}});
  CHECK(filter_triples(kept, keep) == kept);
  std::mt19937 gen(3);
  for (int i = 0; i < 5; ++i) {
    std::shuffle(triples.begin(), triples.end(), gen);
    auto shuffled = filter_triples(triples, keep);
    std::sort(shuffled.begin(), shuffled.end());
    auto expected = kept;
    std::sort(expected.begin(), expected.end());
    CHECK(shuffled == expected);
  }
}

TEST_CASE("description filter") {
  const std::vector<TaggedSentence> records{
      {"en", "Q1", {0, 0}, {"a"}},
      {"it", "Q1", {0, 0}, {"a"}},
      {"en", "Q2", {0, 0}, {"b"}},
      {"en", "Q2", {1, 1}, {"x", "b"}},
  };
  const auto kept = filter_descriptions(records, 2);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].entity == "Q1");
  CHECK(kept[1].entity == "Q1");
  CHECK(filter_descriptions(records, 1) == records);
  CHECK(filter_descriptions(kept, 2) == kept);
}

TEST_CASE("language restriction") {
  Mlkg kg;
  kg.add_entity({"Q1", {{"en", "a"}, {"it", "b"}}});
  kg.add_entity({"Q2", {{"it", "c"}}});
  kg.add_relation({"P1", {{"en", "r"}}});
  kg.add_triple({"Q1", "P1", "Q2"});
  const Mlkg en = restrict_languages(kg, {"en"});
  CHECK(ids(en) == std::set<std::string>{"Q1"});
  CHECK(en.entity("Q1").labels.size() == 1);
  CHECK(en.triples.empty());
}

TEST_CASE("language splits") {
  const std::vector<std::string> langs{"l0", "l1", "l2", "l3", "l4", "l5"};
  const LanguageSplit s = assign_language_splits(langs, SplitSizes{});
  CHECK(s.sup == std::vector<std::string>{"l0", "l1", "l2"});
  CHECK(s.zs_in == std::vector<std::string>{"l3", "l4"});
  CHECK(s.zs_un == std::vector<std::string>{"l5"});
  CHECK(s.category("l4") == Category::ZsIn);
  CHECK_FALSE(s.category("l9").has_value());
  CHECK(s.adapter_languages() == std::set<std::string>{"l0", "l1", "l2", "l3", "l4"});
  CHECK(assign_language_splits(langs, SplitSizes{}) == s);
  CHECK_THROWS_AS(assign_language_splits(langs, SplitSizes{4, 2, 1}), ConfigError);

  LanguageSplit overlap = s;
  overlap.zs_un.push_back("l0");
  CHECK_THROWS_AS(overlap.validate(), ConfigError);

  TempDir dir("split");
  save_split(s, dir / "splits.tsv");
  CHECK(load_split(dir / "splits.tsv") == s);
  CHECK(read_lines(dir / "splits.tsv").front() == to_string(Category::Sup) + "\tl0");
  for (auto c : {Category::Sup, Category::ZsIn, Category::ZsUn}) CHECK(parse_category(to_string(c)) == c);
}

TEST_CASE("synthetic generation is deterministic") {
  TempDir dir("synthetic");
  SyntheticConfig config;
  config.entities = 200;
  config.relations = 8;
  config.triples = 600;
  config.seed = 7;
  const auto a = gen_synthetic(config);
  save_synthetic(a, dir / "a");
  save_synthetic(gen_synthetic(config), dir / "b");
  for (const auto& entry : std::filesystem::directory_iterator(dir / "a"))
    CHECK_MESSAGE(read_file(entry.path()) == read_file(dir / "b" / entry.path().filename()), entry.path().filename());
  CHECK(load_synthetic(dir / "a") == a);
  config.seed = 8;
  CHECK_FALSE(gen_synthetic(config) == a);
}

TEST_CASE("synthetic data is internally consistent") {
  const auto d = gen_synthetic(small_synthetic());
  CHECK(d.all_languages().size() == d.config.languages);
  CHECK(d.kg.entities.size() == d.config.entities);
  validate_c1(d.c1, d.kg);
  CHECK(ingest_c2(d.c2, d.kg).rejected == 0);
  for (const auto& r : d.c2) CHECK(r.lang == d.base_lang);

  // Alignment ground truth is a bijection for each language pair.
  std::map<std::pair<std::string, std::string>, std::set<std::string>> targets;
  for (const auto& [id, e] : d.kg.entities)
    for (const auto& [lang, label] : e.labels) CHECK(targets[{lang, label}].insert(id).second);
  for (const auto& p : d.alignment_test) {
    CHECK(d.kg.entity(p.entity).labels.count(p.source) == 1);
    CHECK(d.kg.entity(p.entity).labels.count(p.target) == 1);
  }

  CHECK_THROWS_AS(gen_synthetic([] {
                    auto c = small_synthetic();
                    c.languages = 2;
                    return c;
                  }()),
                  ConfigError);
}

TEST_CASE("ZS-Un languages never reach adapter or finetuning data") {
  const auto d = gen_synthetic(small_synthetic());
  const std::set<std::string> unseen(d.split.zs_un.begin(), d.split.zs_un.end());
  REQUIRE_FALSE(unseen.empty());
  for (const auto& r : d.c1) CHECK(unseen.count(r.lang) == 0);
  for (const auto& r : d.c2) CHECK(unseen.count(r.lang) == 0);
  for (const auto& p : d.alignment_train) {
    CHECK(unseen.count(p.source) == 0);
    CHECK(unseen.count(p.target) == 0);
  }
  const Mlkg adapter_kg = restrict_languages(d.kg, d.split.adapter_languages());
  for (const auto& lang : adapter_kg.languages()) CHECK(unseen.count(lang) == 0);
  bool tested = false;
  for (const auto& p : d.alignment_test) tested |= unseen.count(p.target) > 0;
  CHECK(tested);
}
