#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "kgadapt/checkpoint.hpp"
#include "kgadapt/errors.hpp"

using namespace kgadapt;
using namespace kgadapt::testing;

namespace {

/// Direct evaluation of the loss definition, one row at a time.
double infonce_oracle(const Tensor& a, const Tensor& p, double tau) {
  const std::size_t n = a.rows(), d = a.cols();
  auto cos = [&](std::size_t i, std::size_t j) {
    return cosine_sim(std::span<const float>(a.raw() + i * d, d), std::span<const float>(p.raw() + j * d, d));
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) denom += std::exp(cos(i, j) / tau);
    total -= std::log(std::exp(cos(i, i) / tau) / denom);
  }
  return total / static_cast<double>(n);
}

Mlkg zurich_kg() {
  Mlkg kg;
  kg.add_entity({"Q72", {{"en", "Zurich"}, {"it", "Zurigo"}}});
  kg.add_entity({"Q39", {{"en", "Switzerland"}, {"it", "Svizzera"}}});
  kg.add_entity({"Q1", {{"en", "Solo"}}});
  kg.add_relation({"P17", {{"en", "is located in"}, {"it", "si trova in"}}});
  kg.add_triple({"Q72", "P17", "Q39"});
  return kg;
}

std::vector<std::string> sources(const std::vector<TrainPair>& pairs) {
  std::vector<std::string> out;
  for (const auto& p : pairs) out.push_back(p.source + "|" + join_tokens(p.anchor.tokens) + "|" + join_tokens(p.positive.tokens));
  return out;
}

}  // namespace

TEST_CASE("InfoNCE closed forms") {
  ContrastiveBatch one{Tensor({1, 2}, std::vector<float>{0.3f, 0.4f}), Tensor({1, 2}, std::vector<float>{-1, 2}), {}};
  CHECK(infonce(one, 0.05) == 0.0);
  ContrastiveBatch two{Tensor({2, 2}, std::vector<float>{1, 0, 0, 1}), Tensor({2, 2}, std::vector<float>{1, 0, 0, 1}), {}};
  CHECK(infonce(two, 1.0) == doctest::Approx(std::log(1 + std::exp(-1.0))).epsilon(1e-9));
  CHECK(infonce(two, 1.0) == doctest::Approx(0.31326).epsilon(1e-4));
}

TEST_CASE("InfoNCE matches the definition and its graph form") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 2 + rng.below(8), d = 3 + rng.below(6);
    const double tau = 0.05 + rng.uniform();
    ContrastiveBatch batch{random_tensor({b, d}, rng), random_tensor({b, d}, rng), {}};
    const double expected = infonce_oracle(batch.anchors, batch.positives, tau);
    CHECK(infonce(batch, tau) == doctest::Approx(expected).epsilon(1e-9));
    CHECK(infonce(batch, tau) > 0.0);
    Graph<double> g;
    Var loss = infonce_loss(g, g.constant(batch.anchors.cast<double>()), g.constant(batch.positives.cast<double>()), tau);
    CHECK(g.value(loss)[0] == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("InfoNCE invariances") {
  Rng rng(2);
  const std::size_t b = 5, d = 4;
  ContrastiveBatch batch{random_tensor({b, d}, rng), random_tensor({b, d}, rng), {}};
  const double base = infonce(batch, 0.1);

  SUBCASE("common permutation of pairs") {
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    ContrastiveBatch p{Tensor({b, d}), Tensor({b, d}), {}};
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        p.anchors.at(i, j) = batch.anchors.at(perm[i], j);
        p.positives.at(i, j) = batch.positives.at(perm[i], j);
      }
    CHECK(infonce(p, 0.1) == doctest::Approx(base).epsilon(1e-9));
  }
  SUBCASE("rescaling an anchor") {
    for (std::size_t j = 0; j < d; ++j) batch.anchors.at(2, j) *= 4.0f;
    CHECK(infonce(batch, 0.1) == doctest::Approx(base).epsilon(1e-6));
  }
  SUBCASE("a smaller off-diagonal cosine lowers the loss") {
    // p_1 = (c, 0, sqrt(1 - c^2)): cos(a_0, p_1) = c while both diagonal cosines stay fixed.
    auto loss = [](float c) {
      ContrastiveBatch two{Tensor({2, 3}, std::vector<float>{1, 0, 0, 0, 1, 0}),
                           Tensor({2, 3}, std::vector<float>{1, 0, 0, c, 0, std::sqrt(1 - c * c)}), {}};
      return infonce(two, 0.5);
    };
    for (float c = 0.9f; c > -0.9f; c -= 0.1f) CHECK(loss(c - 0.1f) < loss(c));
  }
}

TEST_CASE("InfoNCE rejects non-finite input") {
  ContrastiveBatch bad{Tensor({2, 2}, std::vector<float>{1, 0, std::nanf(""), 1}), Tensor({2, 2}, 1.0f), {}};
  CHECK_THROWS_AS(infonce(bad, 0.1), NumericError);
}

TEST_CASE("EP sampler") {
  const Mlkg kg = zurich_kg();
  Rng rng(3);
  std::set<std::pair<std::string, std::string>> seen;
  for (int i = 0; i < 50; ++i)
    for (const auto& p : sample_ep_batch(kg, 2, rng)) {
      CHECK(p.anchor.langs != p.positive.langs);
      CHECK(p.source.find("Q1:") == std::string::npos);
      seen.emplace(join_tokens(p.anchor.tokens), join_tokens(p.positive.tokens));
    }
  CHECK(seen.count({"Zurich", "Zurigo"}) == 1);
  CHECK(seen.count({"Zurigo", "Zurich"}) == 1);

  Mlkg mono;
  mono.add_entity({"Q1", {{"en", "Solo"}}});
  CHECK_THROWS_AS(EpSampler{mono}, DataError);
}

TEST_CASE("TP sampler") {
  const Mlkg kg = zurich_kg();
  Rng rng(4);
  const auto pairs = sample_tp_batch(kg, 4, 0.0, rng);
  REQUIRE(pairs.size() == 1);
  const auto& p = pairs[0];
  const std::string anchor = join_tokens(p.anchor.tokens);
  CHECK((anchor == "Zurich [SEP] is located in" || anchor == "Zurigo [SEP] si trova in"));
  CHECK(join_tokens(p.positive.tokens) == (p.positive.langs[0] == "en" ? "Switzerland" : "Svizzera"));

  SUBCASE("no code-switching keeps one language per item") {
    const auto data = gen_synthetic(small_synthetic());
    Rng r(5);
    TpSampler sampler(data.kg, 0.0);
    for (int i = 0; i < 20; ++i)
      for (const auto& q : sampler.sample(16, r)) {
        CHECK(q.anchor.langs[0] == q.anchor.langs[1]);
        CHECK(q.anchor.langs[0] == q.positive.langs[0]);
      }
  }
  SUBCASE("full code-switching mixes languages at the expected rate") {
    const auto data = gen_synthetic(small_synthetic());
    const double k = static_cast<double>(data.config.languages);
    const double expected = 1.0 - 1.0 / (k * k);  // every label exists in all k languages
    Rng r(6);
    TpSampler sampler(data.kg, 1.0);
    std::size_t n = 0, mixed = 0;
    for (int i = 0; i < 100; ++i)
      for (const auto& q : sampler.sample(16, r)) {
        ++n;
        if (q.anchor.langs[0] != q.anchor.langs[1] || q.anchor.langs[0] != q.positive.langs[0]) ++mixed;
      }
    const double sigma = std::sqrt(static_cast<double>(n) * expected * (1 - expected));
    CHECK(std::abs(static_cast<double>(mixed) - static_cast<double>(n) * expected) <= 3 * sigma);
  }
}

TEST_CASE("ES sampler") {
  const Mlkg kg = zurich_kg();
  std::vector<TaggedSentence> c1{
      {"en", "Q72", {7, 7}, split_whitespace("De Botton spent his early years in Zurich")},
      {"en", "Q1", {0, 0}, split_whitespace("Solo is alone")},
  };
  Rng rng(7);
  for (int i = 0; i < 10; ++i) {
    const auto pairs = sample_es_batch(c1, kg, 2, rng);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].anchor.pool == Pool::Span);
    CHECK(pairs[0].anchor.span == Span{7, 7});
    CHECK(pairs[0].anchor.tokens[7] == "Zurich");
    CHECK(join_tokens(pairs[0].positive.tokens) == "Zurigo");
    CHECK(pairs[0].positive.langs[0] == "it");
  }
  CHECK_THROWS_AS(EsSampler(std::vector<TaggedSentence>{c1[1]}, kg), DataError);

  Mlkg three = kg;
  three.entities.at("Q72").labels["de"] = "Zuerich";
  std::set<std::string> langs;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    langs.insert(sample_es_batch(c1, three, 1, r).at(0).positive.langs[0]);
  }
  CHECK(langs == std::set<std::string>{"de", "it"});
}

TEST_CASE("TS sampler") {
  std::vector<TripleSentence> c2{
      {{"Q72", "P17", "Q39"}, {6, 6}, split_whitespace("Zurich is the largest city in Switzerland"), "en"},
      {{"Q1", "P17", "Q39"}, {0, 0}, split_whitespace("Switzerland"), "en"},
  };
  Rng rng(8);
  const auto pairs = sample_ts_batch(c2, 4, rng);
  REQUIRE(pairs.size() == 1);
  CHECK(join_tokens(pairs[0].anchor.tokens) == "Zurich is the largest city in [MASK]");
  CHECK(join_tokens(pairs[0].positive.tokens) == "Switzerland");
  CHECK_THROWS_AS(TsSampler(std::vector<TripleSentence>{c2[1]}), DataError);
}

TEST_CASE("samplers are reproducible") {
  const auto data = gen_synthetic(small_synthetic());
  auto run = [&](std::uint64_t seed) {
    Rng r(seed);
    std::vector<std::string> out;
    for (int i = 0; i < 3; ++i) {
      for (auto& s : sources(sample_ep_batch(data.kg, 8, r))) out.push_back(s);
      for (auto& s : sources(sample_tp_batch(data.kg, 8, 0.5, r))) out.push_back(s);
      for (auto& s : sources(sample_es_batch(data.c1, data.kg, 8, r))) out.push_back(s);
      for (auto& s : sources(sample_ts_batch(data.c2, 8, r))) out.push_back(s);
    }
    return out;
  };
  CHECK(run(9) == run(9));
  CHECK(run(9) != run(10));
}

TEST_CASE("batches hold distinct positives") {
  const auto data = gen_synthetic(small_synthetic());
  Rng r(11);
  for (const auto& batch : {sample_ep_batch(data.kg, 32, r), sample_tp_batch(data.kg, 32, 0.5, r),
                            sample_es_batch(data.c1, data.kg, 32, r), sample_ts_batch(data.c2, 32, r)}) {
    std::set<std::string> keys;
    for (const auto& p : batch) keys.insert(p.source.substr(0, p.source.find(':', 3)) + join_tokens(p.positive.tokens));
    CHECK(keys.size() == batch.size());
  }
}

TEST_CASE("hyperparameter validation") {
  TrainHyper h;
  CHECK_NOTHROW(h.validate());
  h.tau = 0.0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
  h = {};
  h.code_switch = 1.5;
  CHECK_THROWS_AS(h.validate(), ConfigError);
  h = {};
  h.batch = 0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
}

TEST_CASE("adapter training touches only its own adapter and raises pair similarity") {
  const auto data = gen_synthetic(small_synthetic());
  const Vocab vocab = build_vocab(vocabulary_corpus(data));
  EncoderConfig config = tiny_encoder(32, vocab.size());
  config.heads = 4;
  config.max_len = 16;
  Rng rng(12);
  auto model = insert_adapters(config, init_backbone(config, rng), knowledge_adapter_kinds(), 16, 13);
  const AdapterData ad{restrict_languages(data.kg, data.split.adapter_languages()), data.c1, data.c2};

  Rng probe_rng(14);
  const auto probe = sample_ep_batch(ad.kg, 32, probe_rng);
  model.use_single(AdapterKind::EP);
  const double cos_before = mean_pair_cosine(model, vocab, probe);
  const auto before = group_checksums(model.params);
  const ParamSet initial = model.params;

  TrainHyper h;
  h.batch = 32;
  h.steps = 100;
  h.lr = 1e-2;
  h.warmup = 10;
  h.tau = 0.1;
  h.seed = 15;
  std::size_t observed = 0;
  const auto curve = train_adapter(model, AdapterKind::EP, vocab, ad, h,
                                   [&](std::size_t, const std::vector<TrainPair>& pairs) { observed += pairs.size(); });
  CHECK(curve.points.size() == 100);
  CHECK(observed > 0);
  const auto after = group_checksums(model.params);
  for (const auto& [group, sum] : before) {
    if (group == "adapter.EP")
      CHECK(after.at(group) != sum);
    else
      CHECK(after.at(group) == sum);
  }
  for (const auto& [name, e] : model.params)
    if (name.rfind("adapter.EP.", 0) != 0) CHECK(e.value == initial.get(name));
  CHECK(mean_pair_cosine(model, vocab, probe) > cos_before);
  CHECK(curve.csv().rfind("step,lr,loss\n", 0) == 0);

  CHECK_THROWS_AS(train_adapter(model, AdapterKind::LARGE, vocab, ad, h), ConfigError);
}
