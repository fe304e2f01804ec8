// Serial reference against the OpenMP variants of the hot kernels.

#include <benchmark/benchmark.h>

#include <vector>

#include "kgadapt/kernels.hpp"
#include "kgadapt/rng.hpp"

namespace k = kgadapt::kernels;

namespace {

std::vector<float> filled(std::size_t n, std::uint64_t seed) {
  kgadapt::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, 1), b = filled(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    else
      k::serial::gemm_nn(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

template <bool Parallel>
void BM_attention(benchmark::State& state) {
  k::AttentionShape s{32, static_cast<std::size_t>(state.range(0)), 4, 64};
  const std::size_t rows = s.batch * s.tokens * s.dim;
  const auto q = filled(rows, 3), kk = filled(rows, 4), v = filled(rows, 5);
  std::vector<std::uint8_t> mask(s.batch * s.tokens, 1);
  std::vector<float> out(rows), probs(s.batch * s.heads * s.tokens * s.tokens);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::attention_forward(s, q.data(), kk.data(), v.data(), mask.data(), out.data(), probs.data());
    else
      k::serial::attention_forward(s, q.data(), kk.data(), v.data(), mask.data(), out.data(), probs.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_layer_norm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 64;
  const auto x = filled(n * d, 6), gain = filled(d, 7), bias = filled(d, 8);
  std::vector<float> y(n * d), mean(n), rstd(n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::parallel::layer_norm_forward(n, d, x.data(), gain.data(), bias.data(), 1e-5f, y.data(), mean.data(), rstd.data());
    else
      k::serial::layer_norm_forward(n, d, x.data(), gain.data(), bias.data(), 1e-5f, y.data(), mean.data(), rstd.data());
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<false>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_gemm<true>)->Name("gemm/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_attention<false>)->Name("attention/serial")->Arg(16)->Arg(32);
BENCHMARK(BM_attention<true>)->Name("attention/parallel")->Arg(16)->Arg(32);
BENCHMARK(BM_layer_norm<false>)->Name("layer_norm/serial")->Arg(1024)->Arg(8192);
BENCHMARK(BM_layer_norm<true>)->Name("layer_norm/parallel")->Arg(1024)->Arg(8192);

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  benchmark::AddCustomContext("openmp_threads", std::to_string(k::max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
}
