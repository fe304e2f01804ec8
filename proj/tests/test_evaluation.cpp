#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "kgadapt/checkpoint.hpp"
#include "kgadapt/errors.hpp"
#include "kgadapt/evaluation.hpp"

using namespace kgadapt;
using namespace kgadapt::testing;

namespace {

CandidateIndex index_of(const std::vector<std::vector<float>>& rows) {
  CandidateIndex index;
  index.lang = "xx";
  const std::size_t d = rows.front().size();
  index.embeddings = Tensor({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    index.ids.push_back("e" + std::string(i < 10 ? "00" : i < 100 ? "0" : "") + std::to_string(i));
    std::copy(rows[i].begin(), rows[i].end(), index.embeddings.raw() + i * d);
  }
  return index;
}

/// Exhaustive oracle: each candidate lands after every candidate that beats it.
std::vector<std::string> brute_force_rank(std::span<const float> q, const CandidateIndex& index) {
  const std::size_t n = index.ids.size();
  std::vector<double> cos(n);
  for (std::size_t i = 0; i < n; ++i) cos[i] = cosine_sim(q, index.row(i));
  std::vector<std::string> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (cos[j] > cos[i] || (cos[j] == cos[i] && index.ids[j] < index.ids[i])) ++ahead;
    out[ahead] = index.ids[i];
  }
  return out;
}

AdaptedEncoder base_model(const EncoderConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  AdaptedEncoder model;
  model.spec.encoder = config;
  model.params = init_backbone(config, rng);
  return model;
}

}  // namespace

TEST_CASE("Hit@k and MRR") {
  const std::vector<std::size_t> ranks{1, 2, 4};
  CHECK(hits_at_k(ranks, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(hits_at_k(ranks, 2) == doctest::Approx(2.0 / 3.0));
  CHECK(hits_at_k(ranks, 4) == 1.0);
  CHECK(hits_at_k(ranks, 100) == 1.0);
  CHECK(mrr(ranks) == doctest::Approx((1 + 0.5 + 0.25) / 3.0));
  CHECK(mrr(ranks) == doctest::Approx(0.58333).epsilon(1e-5));
  CHECK(mrr(std::vector<std::size_t>{1, 1, 1}) == 1.0);
  CHECK(mrr(std::vector<std::size_t>{7}) == doctest::Approx(1.0 / 7.0));
  CHECK_THROWS_AS(mrr(std::vector<std::size_t>{}), DataError);
  CHECK_THROWS_AS(hits_at_k(std::vector<std::size_t>{}, 1), DataError);
  CHECK_THROWS_AS(mrr(std::vector<std::size_t>{0}), DataError);

  const std::vector<std::size_t> missing{1, kMissingRank};
  CHECK(mrr(missing) == 0.5);
  CHECK(hits_at_k(missing, 1000) == 0.5);
}

TEST_CASE("metric ordering holds for any rank list") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::size_t> ranks(1 + rng.below(20));
    for (auto& r : ranks) r = 1 + rng.below(30);
    const auto m = summarize("xx", Category::Sup, ranks, 10);
    CHECK(m.hit1 <= m.hitk);
    CHECK(m.hit1 <= m.mrr);
    CHECK(m.mrr <= 1.0);
    CHECK(m.mrr >= 1.0 / 30.0);
  }
}

TEST_CASE("rank agrees with an exhaustive oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(60), d = 2 + rng.below(6);
    std::vector<std::vector<float>> rows;
    for (std::size_t i = 0; i < n; ++i) {
      // Quantised coordinates make exact cosine ties common.
      std::vector<float> r(d);
      for (auto& x : r) x = static_cast<float>(static_cast<int>(rng.below(3)) - 1);
      if (std::all_of(r.begin(), r.end(), [](float x) { return x == 0.0f; })) r[0] = 1.0f;
      rows.push_back(r);
    }
    const auto index = index_of(rows);
    const auto q = random_vector(d, rng);
    const auto ranked = rank(q, index);
    CHECK(ranked == brute_force_rank(q, index));
    const std::string gold = index.ids[rng.below(n)];
    const auto pos = std::find(ranked.begin(), ranked.end(), gold) - ranked.begin();
    CHECK(gold_rank(q, index, gold) == static_cast<std::size_t>(pos) + 1);

    std::vector<float> scaled(q);
    for (auto& x : scaled) x *= 3.5f;
    CHECK(gold_rank(scaled, index, gold) == gold_rank(q, index, gold));
  }
}

TEST_CASE("rank basics") {
  const auto index = index_of({{1, 0}, {0, 1}, {0, 1}, {-1, 0}});
  CHECK(rank(std::vector<float>{0, 1}, index) == std::vector<std::string>{"e001", "e002", "e000", "e003"});
  CHECK(rank(std::vector<float>{-1, 0}, index).front() == "e003");
  CHECK(gold_rank(std::vector<float>{0, 1}, index, "e002") == 2);
  CHECK(gold_rank(std::vector<float>{0, 1}, index, "nope") == kMissingRank);
  CHECK_THROWS_AS(rank(std::vector<float>{0, 1, 0}, index), ShapeError);
  CandidateIndex empty;
  CHECK_THROWS_AS(rank(std::vector<float>{0, 1}, empty), DataError);
}

TEST_CASE("a uniformly random ranking has MRR near H(n)/n") {
  Rng rng(3);
  const std::size_t n = 100, d = 16, queries = 2000;
  std::vector<std::vector<float>> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(random_vector(d, rng));
  const auto index = index_of(rows);
  std::vector<std::size_t> ranks;
  for (std::size_t q = 0; q < queries; ++q) ranks.push_back(gold_rank(random_vector(d, rng), index, index.ids[q % n]));
  double harmonic = 0.0, second = 0.0;
  for (std::size_t r = 1; r <= n; ++r) {
    harmonic += 1.0 / static_cast<double>(r);
    second += 1.0 / static_cast<double>(r * r);
  }
  const double mean = harmonic / static_cast<double>(n);
  const double sd = std::sqrt(second / static_cast<double>(n) - mean * mean) / std::sqrt(static_cast<double>(queries));
  CHECK(std::abs(mrr(ranks) - mean) < 4 * sd);
}

TEST_CASE("label embeddings") {
  const Vocab vocab = letters_vocab();
  const auto model = base_model(tiny_encoder(), 4);
  Mlkg kg;
  kg.add_entity({"E3", {{"xx", "c d"}}});
  kg.add_entity({"E1", {{"xx", "a"}, {"yy", "a"}}});
  kg.add_entity({"E2", {{"xx", "b b h"}}});

  const auto index = embed_labels(model, vocab, kg, "xx");
  CHECK(index.ids == std::vector<std::string>{"E1", "E2", "E3"});
  CHECK(index.embeddings.shape() == Shape{3, model.spec.encoder.dim});
  CHECK(embed_labels(model, vocab, kg, "xx").embeddings == index.embeddings);
  CHECK(embed_labels(model, vocab, kg, "yy").ids.size() == 1);
  CHECK_THROWS_AS(embed_labels(model, vocab, kg, "zz"), DataError);

  const std::vector<TextItem> items{item({"c", "d"}), item({"a"}), item({"b", "b", "h"}), item({"g", "e", "f", "a"})};
  const Tensor batched = embed_items(model, vocab, items, 64);
  const Tensor single = embed_items(model, vocab, items, 1);
  CHECK(batched == single);
}

TEST_CASE("evaluation edge cases") {
  const Vocab vocab = letters_vocab();
  const auto model = base_model(tiny_encoder(), 5);
  Mlkg kg;
  kg.add_entity({"E1", {{"xx", "a b"}, {"yy", "c"}}});
  kg.add_relation({"R1", {{"xx", "d"}}});
  kg.add_triple({"E1", "R1", "E1"});
  LanguageSplit split{{"xx"}, {}, {"yy"}};

  const auto completion = eval_completion(model, vocab, kg, kg.triples, split, {"xx"});
  REQUIRE(completion.languages.size() == 1);
  CHECK(completion.languages[0].hit1 == 1.0);
  CHECK(completion.languages[0].n == 1);

  const auto alignment = eval_alignment(model, vocab, kg, {{"E1", "xx", "yy"}}, split);
  CHECK(alignment.languages[0].mrr == 1.0);
  CHECK(alignment.languages[0].category == Category::ZsUn);
  CHECK(alignment.categories.at(to_string(Category::ZsUn)).languages == 1);
  CHECK_THROWS_AS(eval_alignment(model, vocab, kg, {}, split), DataError);
}

TEST_CASE("identical labels align perfectly and evaluation has no side effects") {
  const auto data = gen_synthetic(small_synthetic());
  const Vocab vocab = build_vocab(vocabulary_corpus(data));
  EncoderConfig config = tiny_encoder(32, vocab.size());
  config.heads = 4;
  config.max_len = 16;
  const auto model = base_model(config, 6);

  Mlkg twin;
  for (const auto& [id, e] : data.kg.entities) {
    const std::string& label = e.labels.at(data.base_lang);
    twin.add_entity({id, {{"xx", label}, {"yy", label}}});
  }
  std::vector<AlignmentPair> pairs;
  for (const auto& [id, e] : twin.entities) pairs.push_back({id, "xx", "yy"});
  const std::string before = params_checksum(model.params);
  const auto report = eval_alignment(model, vocab, twin, pairs, LanguageSplit{{"xx", "yy"}, {}, {}});
  CHECK(report.languages[0].hit1 == 1.0);
  CHECK(params_checksum(model.params) == before);

  auto m = report.languages[0];
  m.lang = "zz";
  m.hit1 = 0.0;
  MetricReport two = report;
  two.languages.push_back(m);
  two.aggregate();
  CHECK(two.categories.at(to_string(Category::Sup)).hit1 == doctest::Approx(0.5));
  CHECK(two.overall().languages == 2);
}

TEST_CASE("epoch batches cover each pair once per epoch without duplicate positives") {
  std::vector<TrainPair> pairs;
  for (int i = 0; i < 10; ++i)
    pairs.push_back({item({"a"}), item({i % 5 == 0 ? "b" : std::string(1, static_cast<char>('c' + i % 5))}), std::to_string(i)});
  std::size_t per_epoch = 0;
  const auto source = epoch_batches(pairs, 4, &per_epoch);
  REQUIRE(per_epoch > 0);
  Rng rng(7);
  std::multiset<std::string> seen;
  for (std::size_t step = 0; step < per_epoch; ++step) {
    std::set<std::string> positives;
    for (const auto& p : source(step, rng)) {
      seen.insert(p.source);
      CHECK(positives.insert(join_tokens(p.positive.tokens)).second);
    }
  }
  CHECK(seen.size() == pairs.size());
  for (const auto& p : pairs) CHECK(seen.count(p.source) == 1);
}

TEST_CASE("task finetuning") {
  const auto data = gen_synthetic(small_synthetic());
  const Vocab vocab = build_vocab(vocabulary_corpus(data));
  EncoderConfig config = tiny_encoder(32, vocab.size());
  config.heads = 4;
  config.max_len = 16;

  FinetunePlan plan;
  plan.hyper.batch = 16;
  plan.hyper.lr = 3e-3;
  plan.hyper.warmup = 5;
  plan.hyper.tau = 0.1;
  plan.hyper.seed = 8;

  SUBCASE("completion loss falls") {
    auto model = base_model(config, 9);
    plan.full_epochs = 8;
    const auto r = finetune_completion(model, vocab, data.kg, data.completion_train, data.split, plan);
    CHECK(r.fusion_curve.points.empty());
    const auto& pts = r.full_curve.points;
    REQUIRE(pts.size() >= 20);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      first += pts[i].loss;
      last += pts[pts.size() - 1 - i].loss;
    }
    CHECK(last < first);
    CHECK_THROWS_AS(finetune_completion(model, vocab, data.kg, {}, data.split, plan), DataError);
  }
  SUBCASE("alignment pulls pairs together") {
    auto model = base_model(config, 10);
    const auto pairs = alignment_pairs(data.kg, data.alignment_train);
    const double before = mean_pair_cosine(model, vocab, pairs);
    plan.full_epochs = 1;
    finetune_alignment(model, vocab, data.kg, data.alignment_train, plan);
    CHECK(mean_pair_cosine(model, vocab, pairs) > before);
  }
  SUBCASE("the fusion stage trains only fusion parameters") {
    auto model = fused_model(config, 8, 11);
    const auto before = group_checksums(model.params);
    plan.fusion_epochs = 1;
    plan.full_epochs = 0;
    plan.fusion_lr = 1e-2;
    finetune_completion(model, vocab, data.kg, data.completion_train, data.split, plan);
    for (const auto& [group, sum] : group_checksums(model.params)) {
      if (group.rfind("fusion", 0) == 0)
        CHECK(sum != before.at(group));
      else
        CHECK(sum == before.at(group));
    }
  }
}
