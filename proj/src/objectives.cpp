#include "kgadapt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "kgadapt/checkpoint.hpp"
#include "kgadapt/errors.hpp"

namespace kgadapt {

// ---- InfoNCE ------------------------------------------------------------------

double infonce(const ContrastiveBatch& batch, double tau) {
  const auto& a = batch.anchors;
  const auto& p = batch.positives;
  if (a.rank() != 2 || p.rank() != 2 || a.shape() != p.shape() || a.rows() == 0)
    throw ShapeError("infonce: anchors " + shape_str(a.shape()) + " and positives " + shape_str(p.shape()) +
                     " must be equal non-empty [B, d]");
  if (!(tau > 0.0)) throw ConfigError("infonce: temperature must be positive");
  if (!a.all_finite() || !p.all_finite()) throw NumericError("infonce: non-finite representation");
  const std::size_t B = a.rows(), d = a.cols();
  double total = 0.0;
  std::vector<double> logits(B);
  for (std::size_t i = 0; i < B; ++i) {
    std::span<const float> ai(a.raw() + i * d, d);
    double top = -INFINITY;
    for (std::size_t j = 0; j < B; ++j) {
      logits[j] = cosine_sim(ai, std::span<const float>(p.raw() + j * d, d)) / tau;
      top = std::max(top, logits[j]);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - top);
    total += top + std::log(z) - logits[i];
  }
  return total / static_cast<double>(B);
}

template <typename T>
Var infonce_loss(Graph<T>& g, Var anchors, Var positives, T tau) {
  const auto& a = g.value(anchors);
  const auto& p = g.value(positives);
  if (a.rank() != 2 || a.shape() != p.shape())
    throw ShapeError("infonce: anchors " + shape_str(a.shape()) + " and positives " + shape_str(p.shape()) +
                     " must be equal [B, d]");
  if (!(tau > T(0))) throw ConfigError("infonce: temperature must be positive");
  const std::size_t rows = a.rows();  // graph storage may reallocate below
  Var sim = g.matmul_nt(g.normalize_rows(anchors), g.normalize_rows(positives));
  std::vector<std::size_t> targets(rows);
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = i;
  return g.cross_entropy(g.scale(sim, T(1) / tau), std::move(targets));
}

template Var infonce_loss<float>(Graph<float>&, Var, Var, float);
template Var infonce_loss<double>(Graph<double>&, Var, Var, double);

// ---- items --------------------------------------------------------------------

TextItem label_item(const std::string& label, const std::string& lang) {
  return TextItem{split_whitespace(label), {lang}, Pool::Tokens, {}};
}

template <typename T>
Var encode_items(Graph<T>& g, const ModelSpec& spec, const Vocab& vocab, const std::vector<TextItem>& items) {
  if (items.empty()) throw ShapeError("encode_items: no items");
  std::vector<TokenSeq> seqs;
  seqs.reserve(items.size());
  for (const auto& item : items) {
    if (item.tokens.size() > spec.encoder.max_len)
      throw DataError("item of " + std::to_string(item.tokens.size()) + " tokens exceeds max length " +
                      std::to_string(spec.encoder.max_len));
    seqs.push_back(tokenize(item.tokens, item.langs.empty() ? "" : item.langs.front(), vocab, spec.encoder.max_len));
  }
  const TokenBatch batch = TokenBatch::pack(seqs, spec.encoder.max_len);
  const HiddenStateVars states = encode_model(g, spec, batch);

  std::vector<std::vector<std::size_t>> groups(items.size());
  for (std::size_t b = 0; b < items.size(); ++b) {
    const auto& item = items[b];
    if (item.pool == Pool::Span) {
      if (item.span.start > item.span.end || item.span.end >= seqs[b].size())
        throw DataError("pooling span outside its sequence");
      for (std::size_t t = item.span.start; t <= item.span.end; ++t) groups[b].push_back(batch.row(b, t));
    } else {
      for (std::size_t t = 0; t < seqs[b].size(); ++t) {
        const TokenId id = seqs[b].ids[t];
        if (id != Vocab::kPad && id != Vocab::kSep && id != Vocab::kMask) groups[b].push_back(batch.row(b, t));
      }
    }
    if (groups[b].empty()) throw DataError("item has no poolable tokens");
  }
  return g.mean_rows(states.final, std::move(groups));
}

template Var encode_items<float>(Graph<float>&, const ModelSpec&, const Vocab&, const std::vector<TextItem>&);
template Var encode_items<double>(Graph<double>&, const ModelSpec&, const Vocab&, const std::vector<TextItem>&);

Tensor embed_items(const AdaptedEncoder& model, const Vocab& vocab, const std::vector<TextItem>& items,
                   std::size_t batch_size) {
  if (items.empty()) throw ShapeError("embed_items: no items");
  const std::size_t d = model.spec.encoder.dim;
  Tensor out({items.size(), d});
  for (std::size_t start = 0; start < items.size(); start += batch_size) {
    const std::size_t end = std::min(items.size(), start + batch_size);
    std::vector<TextItem> chunk(items.begin() + static_cast<std::ptrdiff_t>(start),
                                items.begin() + static_cast<std::ptrdiff_t>(end));
    Graph<float> g(&model.params);
    const auto& v = g.value(encode_items(g, model.spec, vocab, chunk));
    std::copy(v.raw(), v.raw() + v.numel(), out.raw() + start * d);
  }
  return out;
}

// ---- samplers -----------------------------------------------------------------

namespace {
template <typename Draw>
std::vector<TrainPair> distinct_batch(std::size_t batch, std::size_t population, Draw&& draw) {
  // draw(out_key) returns an optional pair; keys must be unique within a batch.
  std::vector<TrainPair> out;
  std::set<std::string> keys;
  const std::size_t want = std::min(batch, population);
  for (std::size_t attempt = 0; out.size() < want && attempt < 100 * batch + 100; ++attempt) {
    std::string key;
    auto pair = draw(key);
    if (pair && keys.insert(key).second) out.push_back(std::move(*pair));
  }
  return out;
}

std::vector<std::string> label_langs(const Entity& e) {
  std::vector<std::string> out;
  for (const auto& [lang, _] : e.labels) out.push_back(lang);
  return out;
}
}  // namespace

EpSampler::EpSampler(const Mlkg& kg) : kg_(&kg) {
  std::uint64_t total = 0;
  for (const auto& [_, e] : kg.entities) {
    const std::uint64_t n = e.labels.size();
    if (n < 2) continue;
    total += n * (n - 1);
    entities_.push_back(&e);
    cumulative_.push_back(total);
  }
  if (entities_.empty()) throw DataError("EP sampler: no entity has labels in two languages");
}

std::vector<TrainPair> EpSampler::sample(std::size_t batch, Rng& rng) const {
  return distinct_batch(batch, entities_.size(), [&](std::string& key) -> std::optional<TrainPair> {
    const std::uint64_t r = rng.below(cumulative_.back());
    const std::size_t idx = std::upper_bound(cumulative_.begin(), cumulative_.end(), r) - cumulative_.begin();
    const std::uint64_t local = r - (idx ? cumulative_[idx - 1] : 0);
    const Entity& e = *entities_[idx];
    const auto langs = label_langs(e);
    const std::size_t n = langs.size();
    const std::size_t i = local / (n - 1);
    std::size_t j = local % (n - 1);
    if (j >= i) ++j;
    key = e.id;
    return TrainPair{label_item(e.labels.at(langs[i]), langs[i]), label_item(e.labels.at(langs[j]), langs[j]),
                     "EP:" + e.id + ":" + langs[i] + ">" + langs[j]};
  });
}

TpSampler::TpSampler(const Mlkg& kg, double code_switch) : kg_(&kg), code_switch_(code_switch) {
  if (!(code_switch >= 0.0 && code_switch <= 1.0)) throw ConfigError("code-switch probability must lie in [0, 1]");
  for (const auto& t : kg.triples) triples_.push_back(&t);
  if (triples_.empty()) throw DataError("TP sampler: no triples");
}

std::vector<TrainPair> TpSampler::sample(std::size_t batch, Rng& rng) const {
  std::set<std::string> tails;
  for (const auto* t : triples_) tails.insert(t->tail);
  return distinct_batch(batch, tails.size(), [&](std::string& key) -> std::optional<TrainPair> {
    const Triple& t = *triples_[rng.below(triples_.size())];
    const Entity& h = kg_->entity(t.head);
    const Relation& r = kg_->relation(t.rel);
    const Entity& o = kg_->entity(t.tail);
    const auto hl = label_langs(h), rl = label_langs(r), ol = label_langs(o);
    std::string lh, lr, lo;
    if (rng.bernoulli(code_switch_)) {
      lh = hl[rng.below(hl.size())];
      lr = rl[rng.below(rl.size())];
      lo = ol[rng.below(ol.size())];
    } else {
      std::vector<std::string> common;
      for (const auto& l : hl)
        if (r.labels.count(l) && o.labels.count(l)) common.push_back(l);
      if (common.empty()) {
        ++skipped_;
        spdlog::debug("TP sampler: triple {} {} {} has no shared language, skipped", t.head, t.rel, t.tail);
        return std::nullopt;
      }
      lh = lr = lo = common[rng.below(common.size())];
    }
    key = t.tail;
    TextItem anchor;
    anchor.tokens = split_whitespace(h.labels.at(lh));
    anchor.tokens.emplace_back(kSepToken);
    for (auto& w : split_whitespace(r.labels.at(lr))) anchor.tokens.push_back(std::move(w));
    anchor.langs = {lh, lr};
    return TrainPair{std::move(anchor), label_item(o.labels.at(lo), lo),
                     "TP:" + t.head + "|" + t.rel + "|" + t.tail};
  });
}

EsSampler::EsSampler(const std::vector<TaggedSentence>& c1, const Mlkg& kg) : kg_(&kg) {
  for (const auto& s : c1) {
    auto it = kg.entities.find(s.entity);
    if (it == kg.entities.end()) continue;
    const auto& labels = it->second.labels;
    if (labels.size() - labels.count(s.lang) == 0) continue;  // only the sentence language
    records_.push_back(&s);
  }
  if (records_.empty()) throw DataError("ES sampler: no C1 record has a label in another language");
}

std::vector<TrainPair> EsSampler::sample(std::size_t batch, Rng& rng) const {
  std::set<std::string> ents;
  for (const auto* s : records_) ents.insert(s->entity);
  return distinct_batch(batch, ents.size(), [&](std::string& key) -> std::optional<TrainPair> {
    const TaggedSentence& s = *records_[rng.below(records_.size())];
    const Entity& e = kg_->entity(s.entity);
    std::vector<std::string> others;
    for (const auto& [lang, _] : e.labels)
      if (lang != s.lang) others.push_back(lang);
    const std::string& lang = others[rng.below(others.size())];
    key = e.id;
    return TrainPair{TextItem{s.tokens, {s.lang}, Pool::Span, s.span}, label_item(e.labels.at(lang), lang),
                     "ES:" + e.id + ":" + s.lang + ">" + lang};
  });
}

TsSampler::TsSampler(const std::vector<TripleSentence>& c2) {
  for (const auto& s : c2)
    if (s.object.length() < s.tokens.size() && s.object.end < s.tokens.size()) records_.push_back(&s);
  if (records_.empty()) throw DataError("TS sampler: no usable C2 record");
}

std::vector<TrainPair> TsSampler::sample(std::size_t batch, Rng& rng) const {
  std::set<std::string> tails;
  for (const auto* s : records_) tails.insert(s->triple.tail);
  return distinct_batch(batch, tails.size(), [&](std::string& key) -> std::optional<TrainPair> {
    const TripleSentence& s = *records_[rng.below(records_.size())];
    TextItem anchor;
    const auto begin = s.tokens.begin();
    anchor.tokens.assign(begin, begin + static_cast<std::ptrdiff_t>(s.object.start));
    anchor.tokens.emplace_back(kMaskToken);
    anchor.tokens.insert(anchor.tokens.end(), begin + static_cast<std::ptrdiff_t>(s.object.end + 1), s.tokens.end());
    anchor.langs = {s.lang};
    TextItem positive{{begin + static_cast<std::ptrdiff_t>(s.object.start),
                       begin + static_cast<std::ptrdiff_t>(s.object.end + 1)},
                      {s.lang},
                      Pool::Tokens,
                      {}};
    key = s.triple.tail;
    return TrainPair{std::move(anchor), std::move(positive),
                     "TS:" + s.triple.head + "|" + s.triple.rel + "|" + s.triple.tail};
  });
}

std::vector<TrainPair> sample_ep_batch(const Mlkg& kg, std::size_t batch, Rng& rng) {
  return EpSampler(kg).sample(batch, rng);
}
std::vector<TrainPair> sample_tp_batch(const Mlkg& kg, std::size_t batch, double code_switch, Rng& rng) {
  return TpSampler(kg, code_switch).sample(batch, rng);
}
std::vector<TrainPair> sample_es_batch(const std::vector<TaggedSentence>& c1, const Mlkg& kg, std::size_t batch,
                                       Rng& rng) {
  return EsSampler(c1, kg).sample(batch, rng);
}
std::vector<TrainPair> sample_ts_batch(const std::vector<TripleSentence>& c2, std::size_t batch, Rng& rng) {
  return TsSampler(c2).sample(batch, rng);
}

// ---- training -----------------------------------------------------------------

void TrainHyper::validate() const {
  if (batch == 0) throw ConfigError("batch size must be positive");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (warmup == 0) throw ConfigError("warmup steps must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  if (!(code_switch >= 0.0 && code_switch <= 1.0)) throw ConfigError("code-switch probability must lie in [0, 1]");
  if (!(fusion_reg >= 0.0)) throw ConfigError("fusion regularisation weight must be non-negative");
}

std::string LossCurve::csv() const {
  std::ostringstream out;
  out.precision(9);
  out << "step,lr,loss\n";
  for (const auto& p : points) out << p.step << ',' << p.lr << ',' << p.loss << '\n';
  return out.str();
}

LossCurve train_contrastive(AdaptedEncoder& model, const Vocab& vocab, const BatchSource& source,
                            const TrainHyper& hyper, const StepObserver& observer) {
  hyper.validate();
  LossCurve curve;
  AdamState state;
  Rng rng = Rng(hyper.seed).split("batches");
  const float tau = static_cast<float>(hyper.tau);
  // Pulls each trainable V toward the identity; without it Adam lets V drift on
  // small task data and the fused representation stops matching the adapters.
  std::vector<std::string> reg_names;
  if (hyper.fusion_reg > 0.0 && model.spec.mode == AdapterMode::Fusion)
    for (std::size_t m = 0; m < model.spec.encoder.layers; ++m) {
      const std::string name = adapter_names::fusion(m, "V");
      if (model.params.contains(name) && model.params.trainable(name)) reg_names.push_back(name);
    }
  Tensor neg_identity({model.spec.encoder.dim, model.spec.encoder.dim});
  for (std::size_t i = 0; i < model.spec.encoder.dim; ++i) neg_identity.raw()[i * model.spec.encoder.dim + i] = -1.0f;
  for (std::size_t step = 0; step < hyper.steps; ++step) {
    const auto pairs = source(step, rng);
    if (pairs.empty()) throw DataError("training step " + std::to_string(step) + " produced an empty batch");
    std::vector<TextItem> anchors, positives;
    for (const auto& p : pairs) {
      anchors.push_back(p.anchor);
      positives.push_back(p.positive);
    }
    auto result = grad_eval(model.params, [&](Graph<float>& g) {
      Var a = encode_items(g, model.spec, vocab, anchors);
      Var p = encode_items(g, model.spec, vocab, positives);
      Var loss = infonce_loss(g, a, p, tau);
      for (const auto& name : reg_names) {
        Var diff = g.add(g.param(name), g.constant(neg_identity));
        loss = g.add(loss, g.scale(g.sum(g.mul(diff, diff)), static_cast<float>(hyper.fusion_reg)));
      }
      return loss;
    });
    if (!std::isfinite(result.loss))
      throw NumericError("non-finite contrastive loss at step " + std::to_string(step));
    const double lr = warmup_lr(step + 1, hyper.lr, hyper.warmup);
    adam_step(model.params, result.grads, state, lr);
    curve.points.push_back({step, lr, static_cast<double>(result.loss)});
    if (observer) observer(step, pairs);
  }
  return curve;
}

BatchSource adapter_batches(AdapterKind kind, const AdapterData& data, const TrainHyper& hyper) {
  const std::size_t b = hyper.batch;
  switch (kind) {
    case AdapterKind::EP: {
      auto s = std::make_shared<EpSampler>(data.kg);
      return [s, b](std::size_t, Rng& rng) { return s->sample(b, rng); };
    }
    case AdapterKind::TP: {
      auto s = std::make_shared<TpSampler>(data.kg, hyper.code_switch);
      return [s, b](std::size_t, Rng& rng) { return s->sample(b, rng); };
    }
    case AdapterKind::ES: {
      auto s = std::make_shared<EsSampler>(data.c1, data.kg);
      return [s, b](std::size_t, Rng& rng) { return s->sample(b, rng); };
    }
    case AdapterKind::TS: {
      auto s = std::make_shared<TsSampler>(data.c2);
      return [s, b](std::size_t, Rng& rng) { return s->sample(b, rng); };
    }
    case AdapterKind::LARGE: {
      // One adapter carrying all four objectives, visited round-robin.
      std::vector<BatchSource> parts;
      for (auto k : knowledge_adapter_kinds()) parts.push_back(adapter_batches(k, data, hyper));
      return [parts](std::size_t step, Rng& rng) { return parts[step % parts.size()](step, rng); };
    }
  }
  throw ConfigError("unknown adapter kind");
}

LossCurve train_adapter(AdaptedEncoder& model, AdapterKind kind, const Vocab& vocab, const AdapterData& data,
                        const TrainHyper& hyper, const StepObserver& observer) {
  if (!model.spec.index_of(kind)) throw ConfigError("adapter " + to_string(kind) + " is not inserted");
  const ModelSpec saved = model.spec;
  const std::string prefix = adapter_names::prefix(kind);
  auto frozen = [&](const std::string& name) { return name.rfind(prefix, 0) != 0; };

  model.use_single(kind);
  model.params.set_all_trainable(false);
  model.params.set_trainable_prefix(prefix, true);
  const std::string before = params_checksum(model.params, frozen);

  LossCurve curve = train_contrastive(model, vocab, adapter_batches(kind, data, hyper), hyper, observer);

  const std::string after = params_checksum(model.params, frozen);
  model.spec = saved;
  if (before != after)
    throw ContractViolation("parameters outside " + prefix + "* changed while training adapter " + to_string(kind));
  return curve;
}

double mean_pair_cosine(const AdaptedEncoder& model, const Vocab& vocab, const std::vector<TrainPair>& pairs) {
  if (pairs.empty()) throw ShapeError("mean_pair_cosine: no pairs");
  std::vector<TextItem> anchors, positives;
  for (const auto& p : pairs) {
    anchors.push_back(p.anchor);
    positives.push_back(p.positive);
  }
  const Tensor a = embed_items(model, vocab, anchors);
  const Tensor p = embed_items(model, vocab, positives);
  const std::size_t d = a.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    total += cosine_sim(std::span<const float>(a.raw() + i * d, d), std::span<const float>(p.raw() + i * d, d));
  return total / static_cast<double>(pairs.size());
}

}  // namespace kgadapt
