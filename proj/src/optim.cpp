#include "kgadapt/optim.hpp"

#include <algorithm>

namespace kgadapt {

void adam_step(ParamSet& params, const GradMap<float>& grads, AdamState& state, double lr,
               const AdamConfig& config) {
  for (const auto& name : params.trainable_names())
    if (!grads.count(name)) throw ConfigError("adam_step: missing gradient for trainable parameter '" + name + "'");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const float b1 = static_cast<float>(config.beta1);
  const float b2 = static_cast<float>(config.beta2);
  const float corr1 = static_cast<float>(1.0 - std::pow(config.beta1, t));
  const float corr2 = static_cast<float>(1.0 - std::pow(config.beta2, t));
  const float step_lr = static_cast<float>(lr);
  const float eps = static_cast<float>(config.eps);

  for (const auto& name : params.trainable_names()) {
    auto& p = params.mutable_value(name);
    const auto& g = grads.at(name);
    if (g.shape() != p.shape())
      throw ShapeError("adam_step: gradient " + shape_str(g.shape()) + " for '" + name + "' " + shape_str(p.shape()));
    auto [m_it, m_new] = state.first_moment.try_emplace(name, p.shape());
    auto [v_it, v_new] = state.second_moment.try_emplace(name, p.shape());
    auto& m = m_it->second;
    auto& v = v_it->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      const float mhat = m[i] / corr1;
      const float vhat = v[i] / corr2;
      p[i] -= step_lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

double warmup_lr(std::uint64_t step, double base_lr, std::uint64_t warmup_steps) {
  if (warmup_steps == 0) throw ConfigError("warmup_lr: warmup_steps must be >= 1");
  if (step >= warmup_steps) return base_lr;
  return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

CosineResult cosine_sim_checked(std::span<const float> x, std::span<const float> y) {
  if (x.size() != y.size())
    throw ShapeError("cosine_sim: dimension mismatch " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  double dot = 0, nx = 0, ny = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += static_cast<double>(x[i]) * y[i];
    nx += static_cast<double>(x[i]) * x[i];
    ny += static_cast<double>(y[i]) * y[i];
  }
  if (nx == 0.0 || ny == 0.0) return {0.0, true};
  return {std::clamp(dot / (std::sqrt(nx) * std::sqrt(ny)), -1.0, 1.0), false};
}

double cosine_sim(std::span<const float> x, std::span<const float> y) {
  return cosine_sim_checked(x, y).value;
}

}  // namespace kgadapt
