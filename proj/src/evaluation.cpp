#include "kgadapt/evaluation.hpp"

#include <algorithm>
#include <deque>
#include <memory>
#include <set>

#include <spdlog/spdlog.h>

#include "kgadapt/checkpoint.hpp"
#include "kgadapt/errors.hpp"

namespace kgadapt {

std::span<const float> CandidateIndex::row(std::size_t i) const {
  const std::size_t d = embeddings.cols();
  return {embeddings.raw() + i * d, d};
}

CandidateIndex embed_labels(const AdaptedEncoder& model, const Vocab& vocab, const Mlkg& kg, const std::string& lang) {
  CandidateIndex index;
  index.lang = lang;
  std::vector<TextItem> items;
  std::size_t missing = 0;
  for (const auto& [id, e] : kg.entities) {
    const std::string* label = e.label(lang);
    if (!label) {
      ++missing;
      continue;
    }
    index.ids.push_back(id);
    items.push_back(label_item(*label, lang));
  }
  if (missing) spdlog::warn("{} entities have no {} label and are not candidates", missing, lang);
  if (items.empty()) throw DataError("no entity has a label in " + lang);
  index.embeddings = embed_items(model, vocab, items);
  return index;
}

namespace {
std::vector<double> cosines(std::span<const float> query, const CandidateIndex& index) {
  if (index.ids.empty()) throw DataError("empty candidate index for " + index.lang);
  if (query.size() != index.embeddings.cols())
    throw ShapeError("query of dimension " + std::to_string(query.size()) + " against index of dimension " +
                     std::to_string(index.embeddings.cols()));
  std::vector<double> out(index.ids.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cosine_sim(query, index.row(i));
  return out;
}
}  // namespace

std::vector<std::string> rank(std::span<const float> query, const CandidateIndex& index) {
  const auto cos = cosines(query, index);
  std::vector<std::size_t> order(cos.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (cos[a] != cos[b]) return cos[a] > cos[b];
    return index.ids[a] < index.ids[b];
  });
  std::vector<std::string> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(index.ids[i]);
  return out;
}

std::size_t gold_rank(std::span<const float> query, const CandidateIndex& index, const std::string& gold) {
  const auto cos = cosines(query, index);
  auto it = std::find(index.ids.begin(), index.ids.end(), gold);
  if (it == index.ids.end()) return kMissingRank;
  const double g = cos[static_cast<std::size_t>(it - index.ids.begin())];
  std::size_t ahead = 0;
  for (std::size_t i = 0; i < cos.size(); ++i)
    if (cos[i] > g || (cos[i] == g && index.ids[i] < gold)) ++ahead;
  return ahead + 1;
}

double hits_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw DataError("hits_at_k: no ranks");
  std::size_t hits = 0;
  for (auto r : ranks) {
    if (r == 0) throw DataError("ranks are 1-based");
    if (r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw DataError("mrr: no ranks");
  double total = 0.0;
  for (auto r : ranks) {
    if (r == 0) throw DataError("ranks are 1-based");
    if (r != kMissingRank) total += 1.0 / static_cast<double>(r);
  }
  return total / static_cast<double>(ranks.size());
}

std::string to_string(Task task) { return task == Task::Completion ? "completion" : "alignment"; }

Task parse_task(const std::string& text) {
  if (text == "completion") return Task::Completion;
  if (text == "alignment") return Task::Alignment;
  throw ConfigError("unknown task '" + text + "' (expected completion|alignment)");
}

void MetricReport::aggregate() {
  categories.clear();
  for (const auto& m : languages) {
    auto& c = categories[to_string(m.category)];
    ++c.languages;
    c.hit1 += m.hit1;
    c.hitk += m.hitk;
    c.mrr += m.mrr;
  }
  for (auto& [_, c] : categories) {
    const double n = static_cast<double>(c.languages);
    c.hit1 /= n;
    c.hitk /= n;
    c.mrr /= n;
  }
}

CategoryMetrics MetricReport::overall() const {
  CategoryMetrics c;
  for (const auto& m : languages) {
    ++c.languages;
    c.hit1 += m.hit1;
    c.hitk += m.hitk;
    c.mrr += m.mrr;
  }
  if (c.languages) {
    const double n = static_cast<double>(c.languages);
    c.hit1 /= n;
    c.hitk /= n;
    c.mrr /= n;
  }
  return c;
}

const LanguageMetrics* MetricReport::language(const std::string& lang) const {
  for (const auto& m : languages)
    if (m.lang == lang) return &m;
  return nullptr;
}

LanguageMetrics summarize(const std::string& lang, Category category, std::span<const std::size_t> ranks,
                          std::size_t k) {
  return {lang, category, ranks.size(), hits_at_k(ranks, 1), hits_at_k(ranks, k), mrr(ranks)};
}

TextItem completion_query(const Mlkg& kg, const Triple& t, const std::string& lang) {
  const std::string* head = kg.entity(t.head).label(lang);
  const std::string* rel = kg.relation(t.rel).label(lang);
  if (!head || !rel) throw DataError("triple " + t.head + " " + t.rel + " has no " + lang + " query");
  TextItem item;
  item.tokens = split_whitespace(*head);
  item.tokens.emplace_back(kSepToken);
  for (auto& w : split_whitespace(*rel)) item.tokens.push_back(std::move(w));
  item.langs = {lang};
  return item;
}

namespace {
std::vector<std::size_t> gold_ranks(const Tensor& queries, const CandidateIndex& index,
                                    const std::vector<std::string>& golds) {
  std::vector<std::size_t> ranks;
  std::size_t missing = 0;
  const std::size_t d = queries.cols();
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const std::size_t r = gold_rank({queries.raw() + i * d, d}, index, golds[i]);
    if (r == kMissingRank) ++missing;
    ranks.push_back(r);
  }
  if (missing)
    spdlog::warn("{} of {} gold entities are missing from the {} candidates; counted as misses", missing, golds.size(),
                 index.lang);
  return ranks;
}

Category category_or_throw(const LanguageSplit& split, const std::string& lang) {
  auto c = split.category(lang);
  if (!c) throw ConfigError("language " + lang + " has no category");
  return *c;
}
}  // namespace

MetricReport eval_completion(const AdaptedEncoder& model, const Vocab& vocab, const Mlkg& kg,
                             const std::vector<Triple>& test, const LanguageSplit& split,
                             const std::vector<std::string>& languages, std::size_t k) {
  if (test.empty()) throw DataError("completion test set is empty");
  MetricReport report;
  report.task = Task::Completion;
  report.k = k;
  for (const auto& lang : languages) {
    const CandidateIndex index = embed_labels(model, vocab, kg, lang);
    std::vector<TextItem> queries;
    std::vector<std::string> golds;
    for (const auto& t : test) {
      queries.push_back(completion_query(kg, t, lang));
      golds.push_back(t.tail);
    }
    const auto ranks = gold_ranks(embed_items(model, vocab, queries), index, golds);
    report.languages.push_back(summarize(lang, category_or_throw(split, lang), ranks, k));
  }
  report.aggregate();
  return report;
}

MetricReport eval_alignment(const AdaptedEncoder& model, const Vocab& vocab, const Mlkg& kg,
                            const std::vector<AlignmentPair>& test, const LanguageSplit& split, std::size_t k) {
  if (test.empty()) throw DataError("alignment test set is empty");
  std::map<std::string, std::vector<const AlignmentPair*>> by_target;
  std::vector<std::string> order;
  for (const auto& p : test) {
    if (!by_target.count(p.target)) order.push_back(p.target);
    by_target[p.target].push_back(&p);
  }
  MetricReport report;
  report.task = Task::Alignment;
  report.k = k;
  for (const auto& lang : order) {
    const CandidateIndex index = embed_labels(model, vocab, kg, lang);
    std::vector<TextItem> queries;
    std::vector<std::string> golds;
    for (const auto* p : by_target[lang]) {
      const std::string* label = kg.entity(p->entity).label(p->source);
      if (!label) throw DataError("entity " + p->entity + " has no " + p->source + " label");
      queries.push_back(label_item(*label, p->source));
      golds.push_back(p->entity);
    }
    const auto ranks = gold_ranks(embed_items(model, vocab, queries), index, golds);
    report.languages.push_back(summarize(lang, category_or_throw(split, lang), ranks, k));
  }
  report.aggregate();
  return report;
}

std::vector<TrainPair> completion_pairs(const Mlkg& kg, const std::vector<Triple>& train,
                                        const std::vector<std::string>& languages) {
  std::vector<TrainPair> out;
  for (const auto& t : train)
    for (const auto& lang : languages) {
      const std::string* tail = kg.entity(t.tail).label(lang);
      if (!tail || !kg.entity(t.head).label(lang) || !kg.relation(t.rel).label(lang)) continue;
      out.push_back({completion_query(kg, t, lang), label_item(*tail, lang), t.head + "|" + t.rel + "|" + t.tail});
    }
  return out;
}

std::vector<TrainPair> alignment_pairs(const Mlkg& kg, const std::vector<AlignmentPair>& train) {
  std::vector<TrainPair> out;
  for (const auto& p : train) {
    const Entity& e = kg.entity(p.entity);
    const std::string* src = e.label(p.source);
    const std::string* tgt = e.label(p.target);
    if (!src || !tgt) throw DataError("alignment pair " + p.entity + " " + p.source + ">" + p.target + " unresolved");
    out.push_back({label_item(*src, p.source), label_item(*tgt, p.target), p.entity + ":" + p.source + ">" + p.target});
  }
  return out;
}

BatchSource epoch_batches(std::vector<TrainPair> pairs, std::size_t batch, std::size_t* steps_per_epoch) {
  if (pairs.empty()) throw DataError("no training pairs");
  if (batch == 0) throw ConfigError("batch size must be positive");
  if (steps_per_epoch) *steps_per_epoch = (pairs.size() + batch - 1) / batch;
  struct State {
    std::vector<TrainPair> pairs;
    std::vector<std::string> keys;
    std::deque<std::size_t> pending;
  };
  auto state = std::make_shared<State>();
  for (const auto& p : pairs) state->keys.push_back(join_tokens(p.positive.tokens));
  state->pairs = std::move(pairs);
  return [state, batch](std::size_t, Rng& rng) {
    auto refill = [&] {
      std::vector<std::size_t> order(state->pairs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      state->pending.insert(state->pending.end(), order.begin(), order.end());
    };
    if (state->pending.empty()) refill();
    std::vector<TrainPair> out;
    std::set<std::string> seen;
    // Pairs whose positive already sits in this batch stay queued for the next one.
    for (auto it = state->pending.begin(); it != state->pending.end() && out.size() < batch;) {
      if (seen.insert(state->keys[*it]).second) {
        out.push_back(state->pairs[*it]);
        it = state->pending.erase(it);
      } else {
        ++it;
      }
    }
    return out;
  };
}

namespace {
std::size_t stage_steps(std::size_t epochs, std::size_t per_epoch) { return epochs * per_epoch; }
}  // namespace

FinetuneResult finetune_pairs(AdaptedEncoder& model, const Vocab& vocab, const std::vector<TrainPair>& pairs,
                              const FinetunePlan& plan) {
  FinetuneResult result;
  const bool fused = model.spec.mode == AdapterMode::Fusion;
  if (fused && plan.fusion_epochs > 0) {
    std::size_t per_epoch = 0;
    BatchSource source = epoch_batches(pairs, plan.hyper.batch, &per_epoch);
    TrainHyper h = plan.hyper;
    h.steps = stage_steps(plan.fusion_epochs, per_epoch);
    h.seed = Rng::mix(plan.hyper.seed, "stage3");
    if (plan.fusion_lr > 0.0) h.lr = plan.fusion_lr;
    auto frozen = [](const std::string& n) { return n.rfind(adapter_names::kFusionPrefix, 0) != 0; };
    model.params.set_all_trainable(false);
    model.params.set_trainable_prefix(adapter_names::kFusionPrefix, true);
    const std::string before = params_checksum(model.params, frozen);
    result.fusion_curve = train_contrastive(model, vocab, source, h);
    if (params_checksum(model.params, frozen) != before)
      throw ContractViolation("parameters outside fusion.* changed during fusion training");
  }
  if (plan.full_epochs > 0) {
    std::size_t per_epoch = 0;
    BatchSource source = epoch_batches(pairs, plan.hyper.batch, &per_epoch);
    TrainHyper h = plan.hyper;
    h.steps = stage_steps(plan.full_epochs, per_epoch);
    h.seed = Rng::mix(plan.hyper.seed, "stage4");
    model.params.set_all_trainable(true);
    result.full_curve = train_contrastive(model, vocab, source, h);
  }
  return result;
}

FinetuneResult finetune_completion(AdaptedEncoder& model, const Vocab& vocab, const Mlkg& kg,
                                   const std::vector<Triple>& train, const LanguageSplit& split,
                                   const FinetunePlan& plan) {
  auto pairs = completion_pairs(kg, train, split.sup);
  if (pairs.empty()) throw DataError("no completion training triples in the supervised languages");
  return finetune_pairs(model, vocab, pairs, plan);
}

FinetuneResult finetune_alignment(AdaptedEncoder& model, const Vocab& vocab, const Mlkg& kg,
                                  const std::vector<AlignmentPair>& train, const FinetunePlan& plan) {
  return finetune_pairs(model, vocab, alignment_pairs(kg, train), plan);
}

}  // namespace kgadapt
