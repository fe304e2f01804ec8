#include "kgadapt/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <vector>

#ifdef KGADAPT_HAVE_OPENMP
#include <omp.h>
#endif

namespace kgadapt::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

template <typename T>
inline void gemm_row(std::size_t i, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
                     bool accumulate) {
  T* ci = c + i * m;
  if (!accumulate) std::fill(ci, ci + m, T(0));
  const T* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const T aip = ai[p];
    const T* bp = b + p * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
  }
}

template <typename T>
inline void transpose_row(std::size_t r, std::size_t rows, std::size_t cols, const T* src,
                          T* dst) {
  // r indexes rows of dst (= columns of src).
  T* out = dst + r * rows;
  for (std::size_t i = 0; i < rows; ++i) out[i] = src[i * cols + r];
}

template <typename T>
inline void layer_norm_row(std::size_t i, std::size_t d, const T* x, const T* gain,
                           const T* bias, T eps, T* y, T* mean, T* rstd) {
  const T* xi = x + i * d;
  T sum = 0;
  for (std::size_t j = 0; j < d; ++j) sum += xi[j];
  const T mu = sum / static_cast<T>(d);
  T var = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const T c = xi[j] - mu;
    var += c * c;
  }
  var /= static_cast<T>(d);
  const T rs = T(1) / std::sqrt(var + eps);
  T* yi = y + i * d;
  for (std::size_t j = 0; j < d; ++j) yi[j] = (xi[j] - mu) * rs * gain[j] + bias[j];
  mean[i] = mu;
  rstd[i] = rs;
}

template <typename T>
inline void layer_norm_back_row(std::size_t i, std::size_t d, const T* x, const T* gain,
                                const T* mean, const T* rstd, const T* dy, T* dx) {
  const T* xi = x + i * d;
  const T* dyi = dy + i * d;
  const T mu = mean[i];
  const T rs = rstd[i];
  T m1 = 0, m2 = 0;
  for (std::size_t j = 0; j < d; ++j) {
    const T xhat = (xi[j] - mu) * rs;
    const T dxhat = dyi[j] * gain[j];
    m1 += dxhat;
    m2 += dxhat * xhat;
  }
  m1 /= static_cast<T>(d);
  m2 /= static_cast<T>(d);
  T* dxi = dx + i * d;
  for (std::size_t j = 0; j < d; ++j) {
    const T xhat = (xi[j] - mu) * rs;
    dxi[j] += rs * (dyi[j] * gain[j] - m1 - xhat * m2);
  }
}

template <typename T>
void layer_norm_param_grads(std::size_t n, std::size_t d, const T* x, const T* mean,
                            const T* rstd, const T* dy, T* dgain, T* dbias) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x + i * d;
    const T* dyi = dy + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      if (dgain) dgain[j] += dyi[j] * (xi[j] - mean[i]) * rstd[i];
      if (dbias) dbias[j] += dyi[j];
    }
  }
}

template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// One (sequence, head) block of the attention forward pass.
template <typename T>
void attention_block(std::size_t bh, const AttentionShape& s, const T* q, const T* k, const T* v,
                     const std::uint8_t* key_mask, T* out, T* probs) {
  const std::size_t b = bh / s.heads, h = bh % s.heads;
  const std::size_t dh = s.head_dim(), T_ = s.tokens, d = s.dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const std::uint8_t* mask = key_mask + b * T_;
  for (std::size_t i = 0; i < T_; ++i) {
    const T* qi = q + (b * T_ + i) * d + h * dh;
    T* p = probs + (bh * T_ + i) * T_;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < T_; ++j) {
      if (!mask[j]) {
        p[j] = 0;
        continue;
      }
      p[j] = dot(qi, k + (b * T_ + j) * d + h * dh, dh) * scale;
      mx = std::max(mx, p[j]);
    }
    T sum = 0;
    for (std::size_t j = 0; j < T_; ++j) {
      if (!mask[j]) continue;
      p[j] = std::exp(p[j] - mx);
      sum += p[j];
    }
    T* oi = out + (b * T_ + i) * d + h * dh;
    std::fill(oi, oi + dh, T(0));
    if (sum == T(0)) continue;  // no visible keys
    for (std::size_t j = 0; j < T_; ++j) {
      if (!mask[j]) continue;
      p[j] /= sum;
      const T* vj = v + (b * T_ + j) * d + h * dh;
      for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
    }
  }
}

template <typename T>
void attention_back_block(std::size_t bh, const AttentionShape& s, const T* q, const T* k,
                          const T* v, const std::uint8_t* key_mask, const T* probs,
                          const T* dout, T* dq, T* dk, T* dv) {
  const std::size_t b = bh / s.heads, h = bh % s.heads;
  const std::size_t dh = s.head_dim(), T_ = s.tokens, d = s.dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const std::uint8_t* mask = key_mask + b * T_;
  std::vector<T> dp(T_);
  for (std::size_t i = 0; i < T_; ++i) {
    const T* p = probs + (bh * T_ + i) * T_;
    const T* doi = dout + (b * T_ + i) * d + h * dh;
    T weighted = 0;
    for (std::size_t j = 0; j < T_; ++j) {
      if (!mask[j]) continue;
      const std::size_t row = (b * T_ + j) * d + h * dh;
      dp[j] = dot(doi, v + row, dh);
      weighted += p[j] * dp[j];
      if (dv) {
        T* dvj = dv + row;
        for (std::size_t c = 0; c < dh; ++c) dvj[c] += p[j] * doi[c];
      }
    }
    const std::size_t qrow = (b * T_ + i) * d + h * dh;
    for (std::size_t j = 0; j < T_; ++j) {
      if (!mask[j]) continue;
      const T ds = p[j] * (dp[j] - weighted) * scale;
      const std::size_t row = (b * T_ + j) * d + h * dh;
      if (dq) {
        T* dqi = dq + qrow;
        const T* kj = k + row;
        for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
      }
      if (dk) {
        T* dkj = dk + row;
        const T* qi = q + qrow;
        for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference.

namespace serial {

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  for (std::size_t r = 0; r < cols; ++r) transpose_row(r, rows, cols, src, dst);
}

template <typename T>
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) gemm_row(i, k, m, a, b, c, accumulate);
}

template <typename T>
void layer_norm_forward(std::size_t n, std::size_t d, const T* x, const T* gain, const T* bias,
                        T eps, T* y, T* mean, T* rstd) {
  for (std::size_t i = 0; i < n; ++i) layer_norm_row(i, d, x, gain, bias, eps, y, mean, rstd);
}

template <typename T>
void layer_norm_backward(std::size_t n, std::size_t d, const T* x, const T* gain, const T* mean,
                         const T* rstd, const T* dy, T* dx, T* dgain, T* dbias) {
  if (dx)
    for (std::size_t i = 0; i < n; ++i) layer_norm_back_row(i, d, x, gain, mean, rstd, dy, dx);
  layer_norm_param_grads(n, d, x, mean, rstd, dy, dgain, dbias);
}

template <typename T>
void attention_forward(const AttentionShape& s, const T* q, const T* k, const T* v,
                       const std::uint8_t* key_mask, T* out, T* probs) {
  for (std::size_t bh = 0; bh < s.batch * s.heads; ++bh)
    attention_block(bh, s, q, k, v, key_mask, out, probs);
}

template <typename T>
void attention_backward(const AttentionShape& s, const T* q, const T* k, const T* v,
                        const std::uint8_t* key_mask, const T* probs, const T* dout, T* dq, T* dk,
                        T* dv) {
  for (std::size_t bh = 0; bh < s.batch * s.heads; ++bh)
    attention_back_block(bh, s, q, k, v, key_mask, probs, dout, dq, dk, dv);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP variants. Without OpenMP the pragmas are ignored and these reduce to
// the serial loops.

namespace parallel {

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  const auto n = static_cast<std::ptrdiff_t>(cols);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::ptrdiff_t r = 0; r < n; ++r) transpose_row(static_cast<std::size_t>(r), rows, cols, src, dst);
}

template <typename T>
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_row(static_cast<std::size_t>(i), k, m, a, b, c, accumulate);
}

template <typename T>
void layer_norm_forward(std::size_t n, std::size_t d, const T* x, const T* gain, const T* bias,
                        T eps, T* y, T* mean, T* rstd) {
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * d > kParallelWork)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    layer_norm_row(static_cast<std::size_t>(i), d, x, gain, bias, eps, y, mean, rstd);
}

template <typename T>
void layer_norm_backward(std::size_t n, std::size_t d, const T* x, const T* gain, const T* mean,
                         const T* rstd, const T* dy, T* dx, T* dgain, T* dbias) {
  const auto rows = static_cast<std::ptrdiff_t>(n);
  if (dx) {
#pragma omp parallel for schedule(static) if (n * d > kParallelWork)
    for (std::ptrdiff_t i = 0; i < rows; ++i)
      layer_norm_back_row(static_cast<std::size_t>(i), d, x, gain, mean, rstd, dy, dx);
  }
  // Column sums over rows stay serial so their order never depends on threads.
  layer_norm_param_grads(n, d, x, mean, rstd, dy, dgain, dbias);
}

template <typename T>
void attention_forward(const AttentionShape& s, const T* q, const T* k, const T* v,
                       const std::uint8_t* key_mask, T* out, T* probs) {
  const auto blocks = static_cast<std::ptrdiff_t>(s.batch * s.heads);
#pragma omp parallel for schedule(static) if (s.batch * s.tokens * s.tokens * s.dim > kParallelWork)
  for (std::ptrdiff_t bh = 0; bh < blocks; ++bh)
    attention_block(static_cast<std::size_t>(bh), s, q, k, v, key_mask, out, probs);
}

template <typename T>
void attention_backward(const AttentionShape& s, const T* q, const T* k, const T* v,
                        const std::uint8_t* key_mask, const T* probs, const T* dout, T* dq, T* dk,
                        T* dv) {
  const auto blocks = static_cast<std::ptrdiff_t>(s.batch * s.heads);
#pragma omp parallel for schedule(static) if (s.batch * s.tokens * s.tokens * s.dim > kParallelWork)
  for (std::ptrdiff_t bh = 0; bh < blocks; ++bh)
    attention_back_block(static_cast<std::size_t>(bh), s, q, k, v, key_mask, probs, dout, dq, dk,
                         dv);
}

}  // namespace parallel

// ---------------------------------------------------------------------------
// Dispatch.

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

int max_threads() {
#ifdef KGADAPT_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

#define KGADAPT_DISPATCH(name, ...) \
  (g_parallel.load(std::memory_order_relaxed) ? parallel::name(__VA_ARGS__) : serial::name(__VA_ARGS__))

template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  KGADAPT_DISPATCH(transpose, rows, cols, src, dst);
}

template <typename T>
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  KGADAPT_DISPATCH(gemm_nn, n, k, m, a, b, c, accumulate);
}

template <typename T>
void layer_norm_forward(std::size_t n, std::size_t d, const T* x, const T* gain, const T* bias,
                        T eps, T* y, T* mean, T* rstd) {
  KGADAPT_DISPATCH(layer_norm_forward, n, d, x, gain, bias, eps, y, mean, rstd);
}

template <typename T>
void layer_norm_backward(std::size_t n, std::size_t d, const T* x, const T* gain, const T* mean,
                         const T* rstd, const T* dy, T* dx, T* dgain, T* dbias) {
  KGADAPT_DISPATCH(layer_norm_backward, n, d, x, gain, mean, rstd, dy, dx, dgain, dbias);
}

template <typename T>
void attention_forward(const AttentionShape& s, const T* q, const T* k, const T* v,
                       const std::uint8_t* key_mask, T* out, T* probs) {
  KGADAPT_DISPATCH(attention_forward, s, q, k, v, key_mask, out, probs);
}

template <typename T>
void attention_backward(const AttentionShape& s, const T* q, const T* k, const T* v,
                        const std::uint8_t* key_mask, const T* probs, const T* dout, T* dq, T* dk,
                        T* dv) {
  KGADAPT_DISPATCH(attention_backward, s, q, k, v, key_mask, probs, dout, dq, dk, dv);
}

#undef KGADAPT_DISPATCH

#define KGADAPT_INSTANTIATE(NS, T)                                                               \
  template void NS transpose<T>(std::size_t, std::size_t, const T*, T*);                        \
  template void NS gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,    \
                               bool);                                                            \
  template void NS layer_norm_forward<T>(std::size_t, std::size_t, const T*, const T*,          \
                                          const T*, T, T*, T*, T*);                              \
  template void NS layer_norm_backward<T>(std::size_t, std::size_t, const T*, const T*,         \
                                           const T*, const T*, const T*, T*, T*, T*);            \
  template void NS attention_forward<T>(const AttentionShape&, const T*, const T*, const T*,    \
                                         const std::uint8_t*, T*, T*);                           \
  template void NS attention_backward<T>(const AttentionShape&, const T*, const T*, const T*,   \
                                          const std::uint8_t*, const T*, const T*, T*, T*, T*);

KGADAPT_INSTANTIATE(serial::, float)
KGADAPT_INSTANTIATE(serial::, double)
KGADAPT_INSTANTIATE(parallel::, float)
KGADAPT_INSTANTIATE(parallel::, double)
KGADAPT_INSTANTIATE(kernels::, float)
KGADAPT_INSTANTIATE(kernels::, double)

#undef KGADAPT_INSTANTIATE

}  // namespace kgadapt::kernels
