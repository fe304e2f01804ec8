#include "kgadapt/encoder.hpp"

#include "kgadapt/errors.hpp"

namespace kgadapt {

void EncoderConfig::validate() const {
  if (layers == 0 || dim == 0 || heads == 0 || ffn_dim == 0 || max_len == 0 || vocab_size == 0)
    throw ConfigError("encoder config: all extents must be positive");
  if (dim % heads != 0)
    throw ConfigError("encoder config: heads (" + std::to_string(heads) + ") must divide dim (" +
                      std::to_string(dim) + ")");
}

TokenBatch TokenBatch::pack(std::span<const TokenSeq> seqs, std::size_t max_len) {
  if (seqs.empty()) throw ShapeError("TokenBatch::pack: empty batch");
  TokenBatch b;
  b.batch = seqs.size();
  for (const auto& s : seqs) {
    if (s.ids.empty()) throw ShapeError("TokenBatch::pack: empty sequence");
    if (s.ids.size() > max_len)
      throw ShapeError("TokenBatch::pack: sequence of " + std::to_string(s.ids.size()) +
                       " tokens exceeds max length " + std::to_string(max_len));
    b.tokens = std::max(b.tokens, s.ids.size());
  }
  const std::size_t rows = b.batch * b.tokens;
  b.ids.assign(rows, Vocab::kPad);
  b.positions.resize(rows);
  b.mask.assign(rows, 0);
  for (std::size_t i = 0; i < b.batch; ++i) {
    const auto& s = seqs[i];
    b.lengths.push_back(s.ids.size());
    for (std::size_t t = 0; t < b.tokens; ++t) {
      const std::size_t r = b.row(i, t);
      b.positions[r] = t;
      if (t < s.ids.size()) {
        b.ids[r] = s.ids[t];
        b.mask[r] = s.mask.empty() ? 1 : s.mask[t];
        if (!b.mask[r]) b.ids[r] = Vocab::kPad;
      }
    }
  }
  return b;
}

namespace backbone_names {
std::string tok_embed() { return "backbone.embed.tok"; }
std::string pos_embed() { return "backbone.embed.pos"; }
std::string layer(std::size_t m, const std::string& leaf) {
  return "backbone.layer." + std::to_string(m) + "." + leaf;
}
std::string final_gain() { return "backbone.final_ln.gain"; }
std::string final_bias() { return "backbone.final_ln.bias"; }
std::string mlm_bias() { return "backbone.mlm.bias"; }
}  // namespace backbone_names

namespace {
Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.normal() * stddev);
  return t;
}
}  // namespace

ParamSet init_backbone(const EncoderConfig& c, Rng& rng) {
  c.validate();
  constexpr double kStd = 0.02;
  ParamSet p;
  const std::size_t d = c.dim;
  p.add(backbone_names::tok_embed(), normal_tensor({c.vocab_size, d}, kStd, rng));
  p.add(backbone_names::pos_embed(), normal_tensor({c.max_len, d}, kStd, rng));
  for (std::size_t m = 0; m < c.layers; ++m) {
    auto L = [m](const char* leaf) { return backbone_names::layer(m, leaf); };
    p.add(L("ln1.gain"), Tensor({d}, 1.0f));
    p.add(L("ln1.bias"), Tensor({d}));
    for (const char* w : {"Wq", "Wk", "Wv", "Wo"})
      p.add(L((std::string("attn.") + w).c_str()), normal_tensor({d, d}, kStd, rng));
    for (const char* b : {"bq", "bk", "bv", "bo"}) p.add(L((std::string("attn.") + b).c_str()), Tensor({d}));
    p.add(L("ln2.gain"), Tensor({d}, 1.0f));
    p.add(L("ln2.bias"), Tensor({d}));
    p.add(L("ffn.W1"), normal_tensor({d, c.ffn_dim}, kStd, rng));
    p.add(L("ffn.b1"), Tensor({c.ffn_dim}));
    p.add(L("ffn.W2"), normal_tensor({c.ffn_dim, d}, kStd, rng));
    p.add(L("ffn.b2"), Tensor({d}));
  }
  p.add(backbone_names::final_gain(), Tensor({d}, 1.0f));
  p.add(backbone_names::final_bias(), Tensor({d}));
  p.add(backbone_names::mlm_bias(), Tensor({c.vocab_size}));
  return p;
}

template <typename T>
HiddenStateVars encode(Graph<T>& g, const EncoderConfig& c, const TokenBatch& batch,
                       const AdapterHook<T>* hook) {
  if (batch.tokens > c.max_len)
    throw ShapeError("encode: batch of " + std::to_string(batch.tokens) + " tokens exceeds max length " +
                     std::to_string(c.max_len));
  for (auto id : batch.ids)
    if (id >= c.vocab_size)
      throw ShapeError("encode: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(c.vocab_size));

  HiddenStateVars out;
  Var x = g.add(g.gather_rows(g.param(backbone_names::tok_embed()), batch.ids),
                g.gather_rows(g.param(backbone_names::pos_embed()), batch.positions));
  const kernels::AttentionShape shape{batch.batch, batch.tokens, c.heads, c.dim};

  for (std::size_t m = 0; m < c.layers; ++m) {
    auto P = [&](const char* leaf) { return g.param(backbone_names::layer(m, leaf)); };
    auto dense = [&](Var in, const char* w, const char* b) { return g.add_bias(g.matmul(in, P(w)), P(b)); };

    Var h = g.layer_norm(x, P("ln1.gain"), P("ln1.bias"));
    Var q = dense(h, "attn.Wq", "attn.bq");
    Var k = dense(h, "attn.Wk", "attn.bk");
    Var v = dense(h, "attn.Wv", "attn.bv");
    Var att = g.attention(q, k, v, shape, batch.mask);
    x = g.add(x, dense(att, "attn.Wo", "attn.bo"));

    Var h2 = g.layer_norm(x, P("ln2.gain"), P("ln2.bias"));
    Var f = dense(g.gelu(dense(h2, "ffn.W1", "ffn.b1")), "ffn.W2", "ffn.b2");
    if (hook && *hook) f = (*hook)(g, m, f);
    x = g.add(x, f);
    out.layers.push_back(x);
  }
  out.final = g.layer_norm(x, g.param(backbone_names::final_gain()), g.param(backbone_names::final_bias()));
  return out;
}

template HiddenStateVars encode<float>(Graph<float>&, const EncoderConfig&, const TokenBatch&,
                                       const AdapterHook<float>*);
template HiddenStateVars encode<double>(Graph<double>&, const EncoderConfig&, const TokenBatch&,
                                        const AdapterHook<double>*);

HiddenStates to_hidden_states(const Graph<float>& g, const HiddenStateVars& vars, const TokenBatch& batch) {
  HiddenStates hs;
  auto shaped = [&](Var v) {
    const auto& t = g.value(v);
    return t.reshaped({batch.batch, batch.tokens, t.cols()});
  };
  for (Var v : vars.layers) hs.layers.push_back(shaped(v));
  hs.final = shaped(vars.final);
  return hs;
}

std::vector<float> mean_pool(const Tensor& hidden, Span span, std::span<const std::uint8_t> mask) {
  if (hidden.rank() != 2) throw ShapeError("mean_pool: expected [tokens, d], got " + shape_str(hidden.shape()));
  if (span.start > span.end || span.end >= hidden.dim(0))
    throw ShapeError("mean_pool: span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                     "] outside " + std::to_string(hidden.dim(0)) + " tokens");
  if (mask.size() != hidden.dim(0)) throw ShapeError("mean_pool: mask length does not match states");
  const std::size_t d = hidden.dim(1);
  std::vector<float> out(d, 0.0f);
  for (std::size_t t = span.start; t <= span.end; ++t) {
    if (!mask[t]) throw DataError("mean_pool: span touches PAD at position " + std::to_string(t));
    for (std::size_t j = 0; j < d; ++j) out[j] += hidden.at(t, j);
  }
  const float n = static_cast<float>(span.length());
  for (auto& v : out) v /= n;
  return out;
}

}  // namespace kgadapt
