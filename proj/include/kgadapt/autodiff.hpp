#pragma once

// Tape-based reverse-mode differentiation over a fixed op vocabulary.
//
// A Graph is built once per loss evaluation: leaves come from a bound
// ParamSet (by name) or from constants, every op appends a node, and
// backward() walks the tape in reverse. Gradients are only materialised for
// nodes that depend on a trainable parameter.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "kgadapt/kernels.hpp"
#include "kgadapt/tensor.hpp"

namespace kgadapt {

struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

template <typename T>
class Graph {
 public:
  using TensorT = BasicTensor<T>;

  explicit Graph(const BasicParamSet<T>* params = nullptr) : params_(params) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf for a bound parameter; repeated calls return the same node.
  Var param(const std::string& name);
  Var constant(TensorT value);
  /// Leaf that always receives a gradient (used by tests and gradcheck).
  Var variable(TensorT value);

  const TensorT& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient after backward(); zero tensor if the node received none.
  TensorT grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const BasicParamSet<T>* params() const { return params_; }
  std::size_t size() const { return nodes_.size(); }

  // Matrix products on rank-2 operands.
  Var matmul(Var a, Var b);     // [n,k] x [k,m]
  Var matmul_nt(Var a, Var b);  // [n,k] x [m,k]^T

  // Elementwise (identical shapes).
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T factor);
  Var gelu(Var x);

  Var add_bias(Var x, Var bias);        // [n,m] + [m]
  Var mul_colvec(Var x, Var weights);   // [n,m] * [n,1]
  Var sum_cols(Var x);                  // [n,m] -> [n,1]
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var x, std::size_t start, std::size_t len);
  Var softmax_rows(Var x);
  Var layer_norm(Var x, Var gain, Var bias, T eps = T(1e-5));
  /// Row-wise L2 normalisation; all-zero rows map to zero.
  Var normalize_rows(Var x);

  Var gather_rows(Var table, std::vector<std::size_t> rows);
  /// out[g] = mean of x rows listed in groups[g] (summed in listed order).
  Var mean_rows(Var x, std::vector<std::vector<std::size_t>> groups);

  Var attention(Var q, Var k, Var v, const kernels::AttentionShape& shape,
                std::vector<std::uint8_t> key_mask);

  /// Mean over rows of -log softmax(logits)[target].
  Var cross_entropy(Var logits, std::vector<std::size_t> targets);
  Var sum(Var x);
  Var mean(Var x);

  void backward(Var root);

  /// Gradients of every trainable parameter in the bound set; parameters the
  /// graph never touched get an all-zero tensor.
  std::map<std::string, TensorT> param_grads() const;

 private:
  struct Node {
    TensorT value;
    TensorT grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(TensorT value, bool requires_grad);
  TensorT& grad_ref(Var v);
  const Node& node(Var v) const { return nodes_.at(v.id); }
  bool any_grad(std::initializer_list<Var> vs) const;

  const BasicParamSet<T>* params_ = nullptr;
  std::vector<Node> nodes_;
  std::map<std::string, Var> param_vars_;
};

}  // namespace kgadapt
