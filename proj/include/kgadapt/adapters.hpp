#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kgadapt/autodiff.hpp"
#include "kgadapt/encoder.hpp"
#include "kgadapt/rng.hpp"
#include "kgadapt/tensor.hpp"

namespace kgadapt {

enum class AdapterKind { EP, TP, ES, TS, LARGE };

std::string to_string(AdapterKind kind);
/// Accepts "EP"/"ep" etc.
AdapterKind parse_adapter_kind(const std::string& text);
const std::vector<AdapterKind>& knowledge_adapter_kinds();  // EP, TP, ES, TS

/// One layer of a bottleneck adapter, row-vector convention: h·W_down is [b].
struct AdapterLayer {
  Tensor w_down;  // [d, b]
  Tensor b_down;  // [b]
  Tensor w_up;    // [b, d]
  Tensor b_up;    // [d]
};

struct AdapterParams {
  AdapterKind kind = AdapterKind::EP;
  std::size_t bottleneck = 0;
  std::vector<AdapterLayer> layers;
};

struct FusionLayer {
  Tensor q;  // [d, d]
  Tensor k;
  Tensor v;
};

struct AdapterSlot {
  AdapterKind kind = AdapterKind::EP;
  std::size_t bottleneck = 0;
  friend bool operator==(const AdapterSlot&, const AdapterSlot&) = default;
};

enum class AdapterMode { None, Single, Fusion };
std::string to_string(AdapterMode mode);
AdapterMode parse_adapter_mode(const std::string& text);

/// Structure of an adapted encoder; the weights live in a ParamSet.
struct ModelSpec {
  EncoderConfig encoder;
  std::vector<AdapterSlot> adapters;  // fixed order; fusion index n = position + 1
  bool has_fusion = false;
  AdapterMode mode = AdapterMode::None;
  std::size_t active = 0;  // adapter index in Single mode

  std::optional<std::size_t> index_of(AdapterKind kind) const;
  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct AdaptedEncoder {
  ModelSpec spec;
  ParamSet params;

  void use_backbone_only() { spec.mode = AdapterMode::None; }
  void use_single(AdapterKind kind);
  void use_fusion();
};

namespace adapter_names {
std::string prefix(AdapterKind kind);  // "adapter.EP."
std::string name(AdapterKind kind, std::size_t layer, const std::string& leaf);
std::string fusion(std::size_t layer, const std::string& leaf);  // "fusion.0.Q"
inline constexpr const char* kFusionPrefix = "fusion.";
}  // namespace adapter_names

/// Adds one adapter per kind (W_up ~ N(0, 1e-4), W_down ~ N(0, 1/d), zero biases).
AdaptedEncoder insert_adapters(const EncoderConfig& config, const ParamSet& backbone,
                               const std::vector<AdapterKind>& kinds, std::size_t bottleneck,
                               std::uint64_t seed);
void add_adapter(AdaptedEncoder& model, AdapterKind kind, std::size_t bottleneck, Rng& rng);
/// Q, K ~ N(0, 0.02); V = I + N(0, 1e-3).
void add_fusion(AdaptedEncoder& model, Rng& rng);

AdapterParams extract_adapter(const AdaptedEncoder& model, AdapterKind kind);
FusionLayer extract_fusion(const AdaptedEncoder& model, std::size_t layer);

// Graph-level building blocks.
template <typename T>
Var adapter_apply(Graph<T>& g, AdapterKind kind, std::size_t layer, Var h);

template <typename T>
Var fusion_apply(Graph<T>& g, std::size_t layer, Var h, const std::vector<Var>& adapter_outputs,
                 Var* weights_out = nullptr);

/// Fusion attention weights per layer, [rows, N+1], recorded during encode_model.
struct FusionTrace {
  std::vector<Var> weights;
};

template <typename T>
AdapterHook<T> make_adapter_hook(const ModelSpec& spec, FusionTrace* trace = nullptr);

template <typename T>
HiddenStateVars encode_model(Graph<T>& g, const ModelSpec& spec, const TokenBatch& batch,
                             FusionTrace* trace = nullptr);

/// h + W_up·GELU(W_down·h + b_down) + b_up for a single vector.
std::vector<float> adapter_forward(std::span<const float> h, const AdapterLayer& layer);

struct FusionOutput {
  std::vector<float> output;
  std::vector<float> weights;  // N+1 entries, index 0 is the identity path
};

/// Softmax over ⟨hQ, A_n(h)K⟩ for n = 0..N with A_0(h) = h; output Σ a_n·A_n(h)V.
FusionOutput fusion_forward(std::span<const float> h, const std::vector<std::vector<float>>& adapter_outputs,
                            const FusionLayer& layer);

struct ParamBudget {
  std::size_t backbone = 0;
  std::vector<std::pair<AdapterKind, std::size_t>> adapters;
  std::size_t fusion = 0;
  double ratio = 0.0;  // (Σ adapters + fusion) / backbone

  std::size_t adapter_total() const;
  std::size_t extra_total() const { return adapter_total() + fusion; }
};

std::size_t adapter_param_count(std::size_t layers, std::size_t dim, std::size_t bottleneck);
std::size_t fusion_param_count(std::size_t layers, std::size_t dim);
ParamBudget param_counts(const AdaptedEncoder& model);

/// Largest bottleneck b' with L·(2db' + b' + d) <= reference_total.
std::size_t large_adapter_bottleneck(std::size_t reference_total, std::size_t dim, std::size_t layers);
AdapterParams make_large_adapter(const ParamBudget& reference, std::size_t dim, std::size_t layers, Rng& rng);

}  // namespace kgadapt
