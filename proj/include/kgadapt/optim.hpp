#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>

#include "kgadapt/autodiff.hpp"
#include "kgadapt/errors.hpp"
#include "kgadapt/tensor.hpp"

namespace kgadapt {

template <typename T>
using GradMap = std::map<std::string, BasicTensor<T>>;

template <typename T>
struct GradResult {
  T loss{};
  GradMap<T> grads;
};

/// Builds the loss graph with `loss_fn(Graph<T>&) -> Var` over `params` and
/// returns the loss with gradients of exactly the trainable parameters.
template <typename T, typename LossFn>
GradResult<T> grad_eval(const BasicParamSet<T>& params, LossFn&& loss_fn) {
  Graph<T> g(&params);
  Var loss = loss_fn(g);
  const auto& v = g.value(loss);
  if (v.numel() != 1) throw ShapeError("grad_eval: loss graph must reduce to a scalar, got " + shape_str(v.shape()));
  g.backward(loss);
  return GradResult<T>{v[0], g.param_grads()};
}

/// Forward-only evaluation of the same loss graph.
template <typename T, typename LossFn>
T eval_loss(const BasicParamSet<T>& params, LossFn&& loss_fn) {
  Graph<T> g(&params);
  Var loss = loss_fn(g);
  const auto& v = g.value(loss);
  if (v.numel() != 1) throw ShapeError("eval_loss: loss graph must reduce to a scalar, got " + shape_str(v.shape()));
  return v[0];
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

/// One bias-corrected Adam update of every trainable parameter.
void adam_step(ParamSet& params, const GradMap<float>& grads, AdamState& state, double lr,
               const AdamConfig& config = {});

/// Linear ramp from 0 to base_lr over warmup_steps, constant afterwards.
double warmup_lr(std::uint64_t step, double base_lr, std::uint64_t warmup_steps);

struct CosineResult {
  double value = 0.0;
  bool zero_norm = false;
};

/// Cosine similarity; zero-norm input yields 0 with the flag set.
CosineResult cosine_sim_checked(std::span<const float> x, std::span<const float> y);
double cosine_sim(std::span<const float> x, std::span<const float> y);

/// Max over trainable scalars of |analytic - central difference| / max(1e-8, |central difference|).
template <typename T, typename LossFn>
double gradcheck(const BasicParamSet<T>& params, LossFn&& loss_fn, double eps = 1e-3) {
  auto analytic = grad_eval(params, loss_fn);
  if (!std::isfinite(static_cast<double>(analytic.loss))) throw NumericError("gradcheck: non-finite loss");
  BasicParamSet<T> probe = params;
  double worst = 0.0;
  for (const auto& [name, grad] : analytic.grads) {
    auto& tensor = probe.mutable_value(name);
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      const T orig = tensor[i];
      tensor[i] = orig + static_cast<T>(eps);
      const double up = eval_loss(probe, loss_fn);
      tensor[i] = orig - static_cast<T>(eps);
      const double down = eval_loss(probe, loss_fn);
      tensor[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("gradcheck: non-finite loss at " + name);
      const double fd = (up - down) / (2.0 * eps);
      const double err = std::abs(static_cast<double>(grad[i]) - fd) / std::max(1e-8, std::abs(fd));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace kgadapt
