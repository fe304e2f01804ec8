#include "kgadapt/adapters.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "kgadapt/errors.hpp"

namespace kgadapt {

std::string to_string(AdapterKind kind) {
  switch (kind) {
    case AdapterKind::EP: return "EP";
    case AdapterKind::TP: return "TP";
    case AdapterKind::ES: return "ES";
    case AdapterKind::TS: return "TS";
    case AdapterKind::LARGE: return "LARGE";
  }
  return "?";
}

AdapterKind parse_adapter_kind(const std::string& text) {
  std::string up = text;
  std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
  for (auto k : {AdapterKind::EP, AdapterKind::TP, AdapterKind::ES, AdapterKind::TS, AdapterKind::LARGE})
    if (to_string(k) == up) return k;
  throw ConfigError("unknown adapter kind '" + text + "' (expected ep|tp|es|ts|large)");
}

const std::vector<AdapterKind>& knowledge_adapter_kinds() {
  static const std::vector<AdapterKind> kinds{AdapterKind::EP, AdapterKind::TP, AdapterKind::ES, AdapterKind::TS};
  return kinds;
}

std::string to_string(AdapterMode mode) {
  switch (mode) {
    case AdapterMode::None: return "none";
    case AdapterMode::Single: return "single";
    case AdapterMode::Fusion: return "fusion";
  }
  return "?";
}

AdapterMode parse_adapter_mode(const std::string& text) {
  for (auto m : {AdapterMode::None, AdapterMode::Single, AdapterMode::Fusion})
    if (to_string(m) == text) return m;
  throw ConfigError("unknown adapter mode '" + text + "'");
}

std::optional<std::size_t> ModelSpec::index_of(AdapterKind kind) const {
  for (std::size_t i = 0; i < adapters.size(); ++i)
    if (adapters[i].kind == kind) return i;
  return std::nullopt;
}

void ModelSpec::validate() const {
  encoder.validate();
  for (std::size_t i = 0; i < adapters.size(); ++i)
    for (std::size_t j = i + 1; j < adapters.size(); ++j)
      if (adapters[i].kind == adapters[j].kind)
        throw ConfigError("duplicate adapter kind " + to_string(adapters[i].kind));
  if (mode == AdapterMode::Single && active >= adapters.size())
    throw ConfigError("single adapter mode without an active adapter");
  if (mode == AdapterMode::Fusion && (!has_fusion || adapters.empty()))
    throw ConfigError("fusion mode requires fusion parameters and at least one adapter");
}

void AdaptedEncoder::use_single(AdapterKind kind) {
  auto idx = spec.index_of(kind);
  if (!idx) throw ConfigError("adapter " + to_string(kind) + " is not inserted");
  spec.mode = AdapterMode::Single;
  spec.active = *idx;
}

void AdaptedEncoder::use_fusion() {
  if (!spec.has_fusion || spec.adapters.empty())
    throw ConfigError("fusion mode requires fusion parameters and at least one adapter");
  spec.mode = AdapterMode::Fusion;
}

namespace adapter_names {
std::string prefix(AdapterKind kind) { return "adapter." + to_string(kind) + "."; }
std::string name(AdapterKind kind, std::size_t layer, const std::string& leaf) {
  return prefix(kind) + std::to_string(layer) + "." + leaf;
}
std::string fusion(std::size_t layer, const std::string& leaf) {
  return "fusion." + std::to_string(layer) + "." + leaf;
}
}  // namespace adapter_names

namespace {
Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal() * stddev);
  return t;
}
}  // namespace

void add_adapter(AdaptedEncoder& model, AdapterKind kind, std::size_t bottleneck, Rng& rng) {
  if (bottleneck == 0) throw ConfigError("adapter bottleneck must be >= 1");
  if (model.spec.index_of(kind)) throw ConfigError("duplicate adapter kind " + to_string(kind));
  const std::size_t d = model.spec.encoder.dim;
  Rng local = rng.split("adapter." + to_string(kind));
  for (std::size_t m = 0; m < model.spec.encoder.layers; ++m) {
    model.params.add(adapter_names::name(kind, m, "W_down"),
                     normal_tensor({d, bottleneck}, 1.0 / std::sqrt(static_cast<double>(d)), local));
    model.params.add(adapter_names::name(kind, m, "b_down"), Tensor({bottleneck}));
    model.params.add(adapter_names::name(kind, m, "W_up"), normal_tensor({bottleneck, d}, 1e-4, local));
    model.params.add(adapter_names::name(kind, m, "b_up"), Tensor({d}));
  }
  model.spec.adapters.push_back({kind, bottleneck});
}

void add_fusion(AdaptedEncoder& model, Rng& rng) {
  if (model.spec.has_fusion) throw ConfigError("fusion parameters already present");
  const std::size_t d = model.spec.encoder.dim;
  Rng local = rng.split("fusion");
  for (std::size_t m = 0; m < model.spec.encoder.layers; ++m) {
    model.params.add(adapter_names::fusion(m, "Q"), normal_tensor({d, d}, 0.02, local));
    model.params.add(adapter_names::fusion(m, "K"), normal_tensor({d, d}, 0.02, local));
    Tensor v = normal_tensor({d, d}, 1e-3, local);
    for (std::size_t i = 0; i < d; ++i) v.at(i, i) += 1.0f;
    model.params.add(adapter_names::fusion(m, "V"), std::move(v));
  }
  model.spec.has_fusion = true;
}

AdaptedEncoder insert_adapters(const EncoderConfig& config, const ParamSet& backbone,
                               const std::vector<AdapterKind>& kinds, std::size_t bottleneck,
                               std::uint64_t seed) {
  if (kinds.empty()) throw ConfigError("insert_adapters: no adapter kinds given");
  AdaptedEncoder model;
  model.spec.encoder = config;
  model.params = backbone;
  Rng rng(seed);
  for (auto kind : kinds) add_adapter(model, kind, bottleneck, rng);
  return model;
}

AdapterParams extract_adapter(const AdaptedEncoder& model, AdapterKind kind) {
  auto idx = model.spec.index_of(kind);
  if (!idx) throw ConfigError("adapter " + to_string(kind) + " is not inserted");
  AdapterParams a;
  a.kind = kind;
  a.bottleneck = model.spec.adapters[*idx].bottleneck;
  for (std::size_t m = 0; m < model.spec.encoder.layers; ++m) {
    a.layers.push_back({model.params.get(adapter_names::name(kind, m, "W_down")),
                        model.params.get(adapter_names::name(kind, m, "b_down")),
                        model.params.get(adapter_names::name(kind, m, "W_up")),
                        model.params.get(adapter_names::name(kind, m, "b_up"))});
  }
  return a;
}

FusionLayer extract_fusion(const AdaptedEncoder& model, std::size_t layer) {
  return {model.params.get(adapter_names::fusion(layer, "Q")), model.params.get(adapter_names::fusion(layer, "K")),
          model.params.get(adapter_names::fusion(layer, "V"))};
}

template <typename T>
Var adapter_apply(Graph<T>& g, AdapterKind kind, std::size_t layer, Var h) {
  auto P = [&](const char* leaf) { return g.param(adapter_names::name(kind, layer, leaf)); };
  Var down = g.gelu(g.add_bias(g.matmul(h, P("W_down")), P("b_down")));
  Var up = g.add_bias(g.matmul(down, P("W_up")), P("b_up"));
  return g.add(h, up);
}

template <typename T>
Var fusion_apply(Graph<T>& g, std::size_t layer, Var h, const std::vector<Var>& adapter_outputs,
                 Var* weights_out) {
  if (adapter_outputs.empty()) throw ConfigError("fusion needs at least one adapter output");
  std::vector<Var> paths;
  paths.reserve(adapter_outputs.size() + 1);
  paths.push_back(h);
  paths.insert(paths.end(), adapter_outputs.begin(), adapter_outputs.end());

  // ⟨hQ, A_n K⟩ = ⟨hQKᵀ, A_n⟩, so one product serves every path.
  Var query = g.matmul_nt(g.matmul(h, g.param(adapter_names::fusion(layer, "Q"))),
                          g.param(adapter_names::fusion(layer, "K")));
  std::vector<Var> scores;
  for (Var p : paths) scores.push_back(g.sum_cols(g.mul(query, p)));
  Var weights = g.softmax_rows(g.concat_cols(scores));
  if (weights_out) *weights_out = weights;

  // Σ_n a_n·(A_n V) = (Σ_n a_n·A_n) V
  Var mix;
  for (std::size_t n = 0; n < paths.size(); ++n) {
    Var term = g.mul_colvec(paths[n], g.slice_cols(weights, n, 1));
    mix = n == 0 ? term : g.add(mix, term);
  }
  return g.matmul(mix, g.param(adapter_names::fusion(layer, "V")));
}

template <typename T>
AdapterHook<T> make_adapter_hook(const ModelSpec& spec, FusionTrace* trace) {
  spec.validate();
  switch (spec.mode) {
    case AdapterMode::None:
      return {};
    case AdapterMode::Single: {
      const AdapterKind kind = spec.adapters[spec.active].kind;
      return [kind](Graph<T>& g, std::size_t layer, Var h) { return adapter_apply(g, kind, layer, h); };
    }
    case AdapterMode::Fusion: {
      std::vector<AdapterKind> kinds;
      for (const auto& a : spec.adapters) kinds.push_back(a.kind);
      return [kinds, trace](Graph<T>& g, std::size_t layer, Var h) {
        std::vector<Var> outs;
        for (auto k : kinds) outs.push_back(adapter_apply(g, k, layer, h));
        Var w;
        Var out = fusion_apply(g, layer, h, outs, &w);
        if (trace) trace->weights.push_back(w);
        return out;
      };
    }
  }
  return {};
}

template <typename T>
HiddenStateVars encode_model(Graph<T>& g, const ModelSpec& spec, const TokenBatch& batch, FusionTrace* trace) {
  AdapterHook<T> hook = make_adapter_hook<T>(spec, trace);
  return encode(g, spec.encoder, batch, hook ? &hook : nullptr);
}

template Var adapter_apply<float>(Graph<float>&, AdapterKind, std::size_t, Var);
template Var adapter_apply<double>(Graph<double>&, AdapterKind, std::size_t, Var);
template Var fusion_apply<float>(Graph<float>&, std::size_t, Var, const std::vector<Var>&, Var*);
template Var fusion_apply<double>(Graph<double>&, std::size_t, Var, const std::vector<Var>&, Var*);
template AdapterHook<float> make_adapter_hook<float>(const ModelSpec&, FusionTrace*);
template AdapterHook<double> make_adapter_hook<double>(const ModelSpec&, FusionTrace*);
template HiddenStateVars encode_model<float>(Graph<float>&, const ModelSpec&, const TokenBatch&, FusionTrace*);
template HiddenStateVars encode_model<double>(Graph<double>&, const ModelSpec&, const TokenBatch&, FusionTrace*);

std::vector<float> adapter_forward(std::span<const float> h, const AdapterLayer& layer) {
  const std::size_t d = h.size();
  if (layer.w_down.rank() != 2 || layer.w_down.dim(0) != d)
    throw ShapeError("adapter_forward: W_down " + shape_str(layer.w_down.shape()) + " does not take a " +
                     std::to_string(d) + "-vector");
  ParamSet p;
  p.add("W_down", layer.w_down);
  p.add("b_down", layer.b_down);
  p.add("W_up", layer.w_up);
  p.add("b_up", layer.b_up);
  Graph<float> g(&p);
  Var x = g.constant(Tensor({1, d}, std::vector<float>(h.begin(), h.end())));
  Var down = g.gelu(g.add_bias(g.matmul(x, g.param("W_down")), g.param("b_down")));
  Var out = g.add(x, g.add_bias(g.matmul(down, g.param("W_up")), g.param("b_up")));
  return g.value(out).vec();
}

FusionOutput fusion_forward(std::span<const float> h, const std::vector<std::vector<float>>& adapter_outputs,
                            const FusionLayer& layer) {
  const std::size_t d = h.size();
  ParamSet p;
  p.add(adapter_names::fusion(0, "Q"), layer.q);
  p.add(adapter_names::fusion(0, "K"), layer.k);
  p.add(adapter_names::fusion(0, "V"), layer.v);
  Graph<float> g(&p);
  Var x = g.constant(Tensor({1, d}, std::vector<float>(h.begin(), h.end())));
  std::vector<Var> outs;
  for (const auto& a : adapter_outputs) {
    if (a.size() != d) throw ShapeError("fusion_forward: adapter output dimension differs from h");
    outs.push_back(g.constant(Tensor({1, d}, a)));
  }
  Var w;
  Var out = fusion_apply(g, 0, x, outs, &w);
  return {g.value(out).vec(), g.value(w).vec()};
}

std::size_t ParamBudget::adapter_total() const {
  std::size_t n = 0;
  for (const auto& [_, c] : adapters) n += c;
  return n;
}

std::size_t adapter_param_count(std::size_t layers, std::size_t dim, std::size_t bottleneck) {
  return layers * (2 * dim * bottleneck + bottleneck + dim);
}

std::size_t fusion_param_count(std::size_t layers, std::size_t dim) { return layers * 3 * dim * dim; }

ParamBudget param_counts(const AdaptedEncoder& model) {
  ParamBudget b;
  const auto& e = model.spec.encoder;
  b.backbone = model.params.scalar_count_prefix(backbone_names::kPrefix);
  for (const auto& slot : model.spec.adapters)
    b.adapters.emplace_back(slot.kind, adapter_param_count(e.layers, e.dim, slot.bottleneck));
  b.fusion = model.spec.has_fusion ? fusion_param_count(e.layers, e.dim) : 0;
  b.ratio = b.backbone ? static_cast<double>(b.extra_total()) / static_cast<double>(b.backbone) : 0.0;
  return b;
}

std::size_t large_adapter_bottleneck(std::size_t reference_total, std::size_t dim, std::size_t layers) {
  if (layers == 0 || dim == 0) throw ConfigError("large adapter: dim and layers must be positive");
  const std::size_t per_layer = reference_total / layers;
  if (per_layer < 3 * dim + 1)
    throw ConfigError("large adapter: budget " + std::to_string(reference_total) + " is below a bottleneck of 1");
  return (per_layer - dim) / (2 * dim + 1);
}

AdapterParams make_large_adapter(const ParamBudget& reference, std::size_t dim, std::size_t layers, Rng& rng) {
  const std::size_t b = large_adapter_bottleneck(reference.extra_total(), dim, layers);
  AdaptedEncoder scratch;
  scratch.spec.encoder.layers = layers;
  scratch.spec.encoder.dim = dim;
  add_adapter(scratch, AdapterKind::LARGE, b, rng);
  return extract_adapter(scratch, AdapterKind::LARGE);
}

}  // namespace kgadapt
