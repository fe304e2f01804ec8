#pragma once

// Dense kernels used by the autodiff graph.
//
// Every kernel exists twice: kernels::serial is the reference and
// kernels::parallel splits the outermost independent loop across OpenMP
// threads. Both call the same per-row body, so for a given input the two
// produce bit-identical output; summation always runs in ascending index
// order within a row. The unqualified kernels::* entry points dispatch to
// the parallel variant unless it was disabled with set_parallel(false).

#include <cstddef>
#include <cstdint>
#include <span>

namespace kgadapt::kernels {

/// Packed attention problem: `batch` sequences of `tokens` rows each, model
/// width `dim` split into `heads` contiguous slices.
struct AttentionShape {
  std::size_t batch = 0;
  std::size_t tokens = 0;
  std::size_t heads = 0;
  std::size_t dim = 0;
  std::size_t head_dim() const { return dim / heads; }
};

#define KGADAPT_KERNEL_DECLS                                                                     \
  /* dst[c,r] = src[r,c] */                                                                      \
  template <typename T>                                                                          \
  void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst);                      \
  /* c[n,m] (+)= a[n,k] * b[k,m] */                                                              \
  template <typename T>                                                                          \
  void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,        \
               bool accumulate);                                                                 \
  /* Row-wise layer norm; mean and rstd (length n) are saved for the backward pass. */          \
  template <typename T>                                                                          \
  void layer_norm_forward(std::size_t n, std::size_t d, const T* x, const T* gain,               \
                          const T* bias, T eps, T* y, T* mean, T* rstd);                         \
  /* Accumulates dx; dgain/dbias are accumulated serially (nullptr to skip). */                  \
  template <typename T>                                                                          \
  void layer_norm_backward(std::size_t n, std::size_t d, const T* x, const T* gain,              \
                           const T* mean, const T* rstd, const T* dy, T* dx, T* dgain,           \
                           T* dbias);                                                            \
  /* Masked multi-head self-attention. probs has batch*heads*tokens*tokens entries. */           \
  template <typename T>                                                                          \
  void attention_forward(const AttentionShape& s, const T* q, const T* k, const T* v,            \
                         const std::uint8_t* key_mask, T* out, T* probs);                        \
  /* Accumulates dq, dk, dv (any may be nullptr). */                                             \
  template <typename T>                                                                          \
  void attention_backward(const AttentionShape& s, const T* q, const T* k, const T* v,           \
                          const std::uint8_t* key_mask, const T* probs, const T* dout, T* dq,    \
                          T* dk, T* dv);

namespace serial {
KGADAPT_KERNEL_DECLS
}  // namespace serial

namespace parallel {
KGADAPT_KERNEL_DECLS
}  // namespace parallel

KGADAPT_KERNEL_DECLS

#undef KGADAPT_KERNEL_DECLS

void set_parallel(bool enabled);
bool parallel_enabled();
/// Number of OpenMP threads the parallel variants will use (1 without OpenMP).
int max_threads();

}  // namespace kgadapt::kernels
