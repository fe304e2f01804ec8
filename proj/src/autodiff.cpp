#include "kgadapt/autodiff.hpp"

#include <cmath>
#include <memory>
#include <numbers>

#include "kgadapt/errors.hpp"

namespace kgadapt {

namespace {

template <typename T>
void require_rank2(const char* op, const BasicTensor<T>& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <typename T>
void require_same(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

template <typename T>
void axpy(T alpha, const BasicTensor<T>& x, BasicTensor<T>& y) {
  const T* xs = x.raw();
  T* ys = y.raw();
  for (std::size_t i = 0; i < x.numel(); ++i) ys[i] += alpha * xs[i];
}

template <typename T>
void add_into(const BasicTensor<T>& x, BasicTensor<T>& y) {
  const T* xs = x.raw();
  T* ys = y.raw();
  for (std::size_t i = 0; i < x.numel(); ++i) ys[i] += xs[i];
}

template <typename T>
BasicTensor<T> transposed(const BasicTensor<T>& m) {
  BasicTensor<T> out(Shape{m.dim(1), m.dim(0)});
  kernels::transpose(m.dim(0), m.dim(1), m.raw(), out.raw());
  return out;
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <typename T>
T gelu_slope(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
  return cdf + x * pdf;
}

}  // namespace

template <typename T>
Var Graph<T>::push(TensorT value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
typename Graph<T>::TensorT& Graph<T>::grad_ref(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.empty()) n.grad = TensorT(n.value.shape());
  return n.grad;
}

template <typename T>
typename Graph<T>::TensorT Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return TensorT(n.value.shape());
  return n.grad;
}

template <typename T>
bool Graph<T>::any_grad(std::initializer_list<Var> vs) const {
  for (Var v : vs)
    if (node(v).requires_grad) return true;
  return false;
}

template <typename T>
Var Graph<T>::param(const std::string& name) {
  if (auto it = param_vars_.find(name); it != param_vars_.end()) return it->second;
  if (!params_) throw ConfigError("graph has no bound parameters (asked for '" + name + "')");
  Var v = push(params_->get(name), params_->trainable(name));
  param_vars_.emplace(name, v);
  return v;
}

template <typename T>
Var Graph<T>::constant(TensorT value) {
  return push(std::move(value), false);
}

template <typename T>
Var Graph<T>::variable(TensorT value) {
  return push(std::move(value), true);
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require_rank2("matmul", A);
  require_rank2("matmul", B);
  if (A.dim(1) != B.dim(0))
    throw ShapeError("matmul: inner extents differ " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(1);
  TensorT out(Shape{n, m});
  kernels::gemm_nn(n, k, m, A.raw(), B.raw(), out.raw(), false);
  Var r = push(std::move(out), any_grad({a, b}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, a, b, r, n, k, m] {
      const auto& dC = nodes_[r.id].grad;
      if (node(a).requires_grad) {
        auto Bt = transposed(value(b));
        kernels::gemm_nn(n, m, k, dC.raw(), Bt.raw(), grad_ref(a).raw(), true);
      }
      if (node(b).requires_grad) {
        auto At = transposed(value(a));
        kernels::gemm_nn(k, n, m, At.raw(), dC.raw(), grad_ref(b).raw(), true);
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::matmul_nt(Var a, Var b) {
  const auto& A = value(a);
  const auto& B = value(b);
  require_rank2("matmul_nt", A);
  require_rank2("matmul_nt", B);
  if (A.dim(1) != B.dim(1))
    throw ShapeError("matmul_nt: inner extents differ " + shape_str(A.shape()) + " x " +
                     shape_str(B.shape()) + "^T");
  const std::size_t n = A.dim(0), k = A.dim(1), m = B.dim(0);
  TensorT out(Shape{n, m});
  auto Bt = transposed(B);
  kernels::gemm_nn(n, k, m, A.raw(), Bt.raw(), out.raw(), false);
  Var r = push(std::move(out), any_grad({a, b}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, a, b, r, n, k, m] {
      const auto& dC = nodes_[r.id].grad;
      if (node(a).requires_grad)
        kernels::gemm_nn(n, m, k, dC.raw(), value(b).raw(), grad_ref(a).raw(), true);
      if (node(b).requires_grad) {
        auto dCt = transposed(dC);
        kernels::gemm_nn(m, n, k, dCt.raw(), value(a).raw(), grad_ref(b).raw(), true);
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  require_same("add", value(a), value(b));
  TensorT out = value(a);
  add_into(value(b), out);
  Var r = push(std::move(out), any_grad({a, b}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, a, b, r] {
      const auto& g = nodes_[r.id].grad;
      if (node(a).requires_grad) add_into(g, grad_ref(a));
      if (node(b).requires_grad) add_into(g, grad_ref(b));
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  require_same("mul", value(a), value(b));
  TensorT out = value(a);
  const auto& B = value(b);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= B[i];
  Var r = push(std::move(out), any_grad({a, b}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, a, b, r] {
      const auto& g = nodes_[r.id].grad;
      if (node(a).requires_grad) {
        auto& ga = grad_ref(a);
        const auto& B = value(b);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * B[i];
      }
      if (node(b).requires_grad) {
        auto& gb = grad_ref(b);
        const auto& A = value(a);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * A[i];
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
  TensorT out = value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= factor;
  Var r = push(std::move(out), any_grad({a}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, a, r, factor] { axpy(factor, nodes_[r.id].grad, grad_ref(a)); };
  }
  return r;
}

template <typename T>
Var Graph<T>::gelu(Var x) {
  TensorT out = value(x);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = gelu_value(out[i]);
  Var r = push(std::move(out), any_grad({x}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, x, r] {
      const auto& g = nodes_[r.id].grad;
      const auto& X = value(x);
      auto& gx = grad_ref(x);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * gelu_slope(X[i]);
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::add_bias(Var x, Var bias) {
  const auto& X = value(x);
  const auto& B = value(bias);
  require_rank2("add_bias", X);
  if (B.numel() != X.dim(1))
    throw ShapeError("add_bias: bias " + shape_str(B.shape()) + " does not match " + shape_str(X.shape()));
  TensorT out = X;
  const std::size_t n = X.dim(0), m = X.dim(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += B[j];
  Var r = push(std::move(out), any_grad({x, bias}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, x, bias, r, n, m] {
      const auto& g = nodes_[r.id].grad;
      if (node(x).requires_grad) add_into(g, grad_ref(x));
      if (node(bias).requires_grad) {
        auto& gb = grad_ref(bias);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gb[j] += g[i * m + j];
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::mul_colvec(Var x, Var weights) {
  const auto& X = value(x);
  const auto& W = value(weights);
  require_rank2("mul_colvec", X);
  if (W.numel() != X.dim(0))
    throw ShapeError("mul_colvec: weights " + shape_str(W.shape()) + " do not match " + shape_str(X.shape()));
  const std::size_t n = X.dim(0), m = X.dim(1);
  TensorT out = X;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] *= W[i];
  Var r = push(std::move(out), any_grad({x, weights}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, x, weights, r, n, m] {
      const auto& g = nodes_[r.id].grad;
      if (node(x).requires_grad) {
        auto& gx = grad_ref(x);
        const auto& W = value(weights);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[i * m + j] * W[i];
      }
      if (node(weights).requires_grad) {
        auto& gw = grad_ref(weights);
        const auto& X = value(x);
        for (std::size_t i = 0; i < n; ++i) {
          T s = 0;
          for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * X[i * m + j];
          gw[i] += s;
        }
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::sum_cols(Var x) {
  const auto& X = value(x);
  require_rank2("sum_cols", X);
  const std::size_t n = X.dim(0), m = X.dim(1);
  TensorT out(Shape{n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < m; ++j) s += X[i * m + j];
    out[i] = s;
  }
  Var r = push(std::move(out), any_grad({x}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, x, r, n, m] {
      const auto& g = nodes_[r.id].grad;
      auto& gx = grad_ref(x);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[i];
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = value(parts[0]).rows();
  std::size_t total = 0;
  bool rg = false;
  for (Var p : parts) {
    require_rank2("concat_cols", value(p));
    if (value(p).dim(0) != n)
      throw ShapeError("concat_cols: row mismatch " + shape_str(value(parts[0]).shape()) + " vs " +
                       shape_str(value(p).shape()));
    total += value(p).dim(1);
    rg = rg || node(p).requires_grad;
  }
  TensorT out(Shape{n, total});
  std::size_t off = 0;
  for (Var p : parts) {
    const auto& P = value(p);
    const std::size_t m = P.dim(1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) out[i * total + off + j] = P[i * m + j];
    off += m;
  }
  Var r = push(std::move(out), rg);
  if (rg) {
    nodes_[r.id].backward = [this, parts, r, n, total] {
      const auto& g = nodes_[r.id].grad;
      std::size_t off = 0;
      for (Var p : parts) {
        const std::size_t m = value(p).dim(1);
        if (node(p).requires_grad) {
          auto& gp = grad_ref(p);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gp[i * m + j] += g[i * total + off + j];
        }
        off += m;
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::slice_cols(Var x, std::size_t start, std::size_t len) {
  const auto& X = value(x);
  require_rank2("slice_cols", X);
  if (len == 0 || start + len > X.dim(1))
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(len) +
                     ") out of range for " + shape_str(X.shape()));
  const std::size_t n = X.dim(0), m = X.dim(1);
  TensorT out(Shape{n, len});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < len; ++j) out[i * len + j] = X[i * m + start + j];
  Var r = push(std::move(out), any_grad({x}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, x, r, n, m, start, len] {
      const auto& g = nodes_[r.id].grad;
      auto& gx = grad_ref(x);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < len; ++j) gx[i * m + start + j] += g[i * len + j];
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::softmax_rows(Var x) {
  const auto& X = value(x);
  require_rank2("softmax_rows", X);
  const std::size_t n = X.dim(0), m = X.dim(1);
  TensorT out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    T mx = X[i * m];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, X[i * m + j]);
    T s = 0;
    for (std::size_t j = 0; j < m; ++j) {
      out[i * m + j] = std::exp(X[i * m + j] - mx);
      s += out[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= s;
  }
  Var r = push(std::move(out), any_grad({x}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, x, r, n, m] {
      const auto& g = nodes_[r.id].grad;
      const auto& Y = value(r);
      auto& gx = grad_ref(x);
      for (std::size_t i = 0; i < n; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < m; ++j) dot += Y[i * m + j] * g[i * m + j];
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += Y[i * m + j] * (g[i * m + j] - dot);
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gain, Var bias, T eps) {
  const auto& X = value(x);
  require_rank2("layer_norm", X);
  const std::size_t n = X.dim(0), d = X.dim(1);
  if (value(gain).numel() != d || value(bias).numel() != d)
    throw ShapeError("layer_norm: gain/bias " + shape_str(value(gain).shape()) + "/" +
                     shape_str(value(bias).shape()) + " do not match " + shape_str(X.shape()));
  TensorT out(Shape{n, d});
  auto stats = std::make_shared<std::vector<T>>(2 * n);
  kernels::layer_norm_forward(n, d, X.raw(), value(gain).raw(), value(bias).raw(), eps, out.raw(),
                              stats->data(), stats->data() + n);
  Var r = push(std::move(out), any_grad({x, gain, bias}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, x, gain, bias, r, n, d, stats] {
      const auto& g = nodes_[r.id].grad;
      T* dx = node(x).requires_grad ? grad_ref(x).raw() : nullptr;
      T* dg = node(gain).requires_grad ? grad_ref(gain).raw() : nullptr;
      T* db = node(bias).requires_grad ? grad_ref(bias).raw() : nullptr;
      kernels::layer_norm_backward(n, d, value(x).raw(), value(gain).raw(), stats->data(),
                                   stats->data() + n, g.raw(), dx, dg, db);
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::normalize_rows(Var x) {
  const auto& X = value(x);
  require_rank2("normalize_rows", X);
  const std::size_t n = X.dim(0), m = X.dim(1);
  TensorT out(Shape{n, m});
  std::vector<T> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    T s = 0;
    for (std::size_t j = 0; j < m; ++j) s += X[i * m + j] * X[i * m + j];
    norms[i] = std::sqrt(s);
    if (norms[i] > T(0))
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] = X[i * m + j] / norms[i];
  }
  Var r = push(std::move(out), any_grad({x}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, x, r, n, m, norms = std::move(norms)] {
      const auto& g = nodes_[r.id].grad;
      const auto& Y = value(r);
      auto& gx = grad_ref(x);
      for (std::size_t i = 0; i < n; ++i) {
        if (!(norms[i] > T(0))) continue;
        T dot = 0;
        for (std::size_t j = 0; j < m; ++j) dot += Y[i * m + j] * g[i * m + j];
        for (std::size_t j = 0; j < m; ++j)
          gx[i * m + j] += (g[i * m + j] - Y[i * m + j] * dot) / norms[i];
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::gather_rows(Var table, std::vector<std::size_t> rows) {
  const auto& X = value(table);
  require_rank2("gather_rows", X);
  if (rows.empty()) throw ShapeError("gather_rows: empty row list");
  const std::size_t m = X.dim(1);
  TensorT out(Shape{rows.size(), m});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= X.dim(0))
      throw ShapeError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       shape_str(X.shape()));
    std::copy_n(X.raw() + rows[i] * m, m, out.raw() + i * m);
  }
  Var r = push(std::move(out), any_grad({table}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, table, r, m, rows = std::move(rows)] {
      const auto& g = nodes_[r.id].grad;
      auto& gt = grad_ref(table);
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < m; ++j) gt[rows[i] * m + j] += g[i * m + j];
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::mean_rows(Var x, std::vector<std::vector<std::size_t>> groups) {
  const auto& X = value(x);
  require_rank2("mean_rows", X);
  if (groups.empty()) throw ShapeError("mean_rows: no groups");
  const std::size_t m = X.dim(1);
  TensorT out(Shape{groups.size(), m});
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& grp = groups[gi];
    if (grp.empty()) throw ShapeError("mean_rows: empty group " + std::to_string(gi));
    T* o = out.raw() + gi * m;
    for (std::size_t row : grp) {
      if (row >= X.dim(0))
        throw ShapeError("mean_rows: row " + std::to_string(row) + " out of range for " + shape_str(X.shape()));
      for (std::size_t j = 0; j < m; ++j) o[j] += X[row * m + j];
    }
    const T count = static_cast<T>(grp.size());
    for (std::size_t j = 0; j < m; ++j) o[j] /= count;
  }
  Var r = push(std::move(out), any_grad({x}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, x, r, m, groups = std::move(groups)] {
      const auto& g = nodes_[r.id].grad;
      auto& gx = grad_ref(x);
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const T count = static_cast<T>(groups[gi].size());
        for (std::size_t row : groups[gi])
          for (std::size_t j = 0; j < m; ++j) gx[row * m + j] += g[gi * m + j] / count;
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::attention(Var q, Var k, Var v, const kernels::AttentionShape& shape,
                        std::vector<std::uint8_t> key_mask) {
  const auto& Q = value(q);
  require_same("attention", Q, value(k));
  require_same("attention", Q, value(v));
  require_rank2("attention", Q);
  if (shape.heads == 0 || shape.dim % shape.heads != 0 || Q.dim(1) != shape.dim ||
      Q.dim(0) != shape.batch * shape.tokens || key_mask.size() != Q.dim(0))
    throw ShapeError("attention: layout batch=" + std::to_string(shape.batch) + " tokens=" +
                     std::to_string(shape.tokens) + " heads=" + std::to_string(shape.heads) +
                     " does not fit " + shape_str(Q.shape()));
  TensorT out(Q.shape());
  auto probs = std::make_shared<std::vector<T>>(shape.batch * shape.heads * shape.tokens * shape.tokens);
  kernels::attention_forward(shape, Q.raw(), value(k).raw(), value(v).raw(), key_mask.data(),
                             out.raw(), probs->data());
  Var r = push(std::move(out), any_grad({q, k, v}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, q, k, v, r, shape, probs, key_mask = std::move(key_mask)] {
      const auto& g = nodes_[r.id].grad;
      T* dq = node(q).requires_grad ? grad_ref(q).raw() : nullptr;
      T* dk = node(k).requires_grad ? grad_ref(k).raw() : nullptr;
      T* dv = node(v).requires_grad ? grad_ref(v).raw() : nullptr;
      kernels::attention_backward(shape, value(q).raw(), value(k).raw(), value(v).raw(),
                                  key_mask.data(), probs->data(), g.raw(), dq, dk, dv);
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::cross_entropy(Var logits, std::vector<std::size_t> targets) {
  const auto& X = value(logits);
  require_rank2("cross_entropy", X);
  const std::size_t n = X.dim(0), m = X.dim(1);
  if (targets.size() != n)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + shape_str(X.shape()));
  auto probs = std::make_shared<std::vector<T>>(n * m);
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= m) throw ShapeError("cross_entropy: target out of range");
    const T* xi = X.raw() + i * m;
    T mx = xi[0];
    for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, xi[j]);
    T s = 0;
    for (std::size_t j = 0; j < m; ++j) {
      (*probs)[i * m + j] = std::exp(xi[j] - mx);
      s += (*probs)[i * m + j];
    }
    for (std::size_t j = 0; j < m; ++j) (*probs)[i * m + j] /= s;
    total += std::log(s) + mx - xi[targets[i]];
  }
  Var r = push(TensorT::scalar(total / static_cast<T>(n)), any_grad({logits}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, logits, r, n, m, probs, targets = std::move(targets)] {
      const T g = nodes_[r.id].grad[0] / static_cast<T>(n);
      auto& gx = grad_ref(logits);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g * (*probs)[i * m + j];
        gx[i * m + targets[i]] -= g;
      }
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::sum(Var x) {
  const auto& X = value(x);
  T s = 0;
  for (std::size_t i = 0; i < X.numel(); ++i) s += X[i];
  Var r = push(TensorT::scalar(s), any_grad({x}));
  if (node(r).requires_grad) {
    nodes_[r.id].backward = [this, x, r] {
      const T g = nodes_[r.id].grad[0];
      auto& gx = grad_ref(x);
      for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
    };
  }
  return r;
}

template <typename T>
Var Graph<T>::mean(Var x) {
  return scale(sum(x), T(1) / static_cast<T>(value(x).numel()));
}

template <typename T>
void Graph<T>::backward(Var root) {
  if (value(root).numel() != 1) throw ShapeError("backward: root must be a scalar, got " + shape_str(value(root).shape()));
  if (!node(root).requires_grad) return;
  grad_ref(root)[0] = T(1);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward();
  }
}

template <typename T>
std::map<std::string, typename Graph<T>::TensorT> Graph<T>::param_grads() const {
  std::map<std::string, TensorT> out;
  if (!params_) return out;
  for (const auto& [name, entry] : *params_) {
    if (!entry.trainable) continue;
    auto it = param_vars_.find(name);
    if (it == param_vars_.end())
      out.emplace(name, TensorT(entry.value.shape()));
    else
      out.emplace(name, grad(it->second));
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace kgadapt
