#pragma once

// Parameter registry and the transformer pieces shared by the captioner and
// the localizer. Blocks are pre-norm: x + Attn(LN(x)), then x + FF(LN(x)).

#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "maskcap/errors.hpp"
#include "maskcap/rng.hpp"
#include "maskcap/tensor.hpp"

namespace maskcap {

// Owns every trainable parameter in registration order. Pointers stay valid
// for the life of the store; checkpoint layout follows this order.
class ParamStore {
 public:
  Parameter& create(const std::string& name, Shape shape) {
    if (index_.count(name)) throw ContractViolation("parameter '" + name + "' already exists");
    params_.emplace_back();
    Parameter& p = params_.back();
    p.name = name;
    p.shape = std::move(shape);
    p.value.assign(static_cast<std::size_t>(p.numel()), 0.0);
    p.grad.assign(p.value.size(), 0.0);
    index_.emplace(name, &p);
    order_.push_back(&p);
    return p;
  }

  Parameter* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : it->second;
  }

  const std::vector<Parameter*>& all() const { return order_; }

  std::int64_t total_numel() const {
    std::int64_t n = 0;
    for (const Parameter* p : order_) n += p->numel();
    return n;
  }

  void zero_grad() {
    for (Parameter* p : order_) p->zero_grad();
  }

 private:
  std::deque<Parameter> params_;
  std::vector<Parameter*> order_;
  std::unordered_map<std::string, Parameter*> index_;
};

inline void init_normal(Parameter& p, Rng& rng, double stddev) {
  for (double& v : p.value) v = rng.normal(0.0, stddev);
}

inline void init_const(Parameter& p, double c) {
  for (double& v : p.value) v = c;
}

constexpr double kInitStd = 0.02;

// Fixed output-scale constants. Readout weights start near zero and move
// slowly under the short schedule; scaling the projections keeps the full
// logit and sigmoid ranges reachable. The attention scale sharpens score
// distributions for the same reason.
constexpr double kLogitScale = 8.0;
constexpr double kHeadScale = 8.0;
constexpr double kAttnScale = 3.0;

struct Linear {
  Parameter* w = nullptr;  // [in x out]
  Parameter* b = nullptr;  // [out]
};

inline Linear make_linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng) {
  Linear l;
  l.w = &store.create(name + ".w", {in, out});
  l.b = &store.create(name + ".b", {out});
  init_normal(*l.w, rng, kInitStd);
  return l;
}

inline Tensor linear(Tape& tape, const Linear& l, Tensor x) {
  return tape.add_row_broadcast(tape.matmul(x, tape.leaf(*l.w)), tape.leaf(*l.b));
}

struct LayerNormParams {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;
};

inline LayerNormParams make_layer_norm(ParamStore& store, const std::string& name, int d) {
  LayerNormParams ln;
  ln.gain = &store.create(name + ".gain", {d});
  ln.bias = &store.create(name + ".bias", {d});
  init_const(*ln.gain, 1.0);
  return ln;
}

inline Tensor layer_norm(Tape& tape, const LayerNormParams& ln, Tensor x) {
  return tape.layer_norm(x, tape.leaf(*ln.gain), tape.leaf(*ln.bias));
}

struct Attention {
  Linear q, k, v, o;
  int heads = 1;
  int d = 0;
};

inline Attention make_attention(ParamStore& store, const std::string& name, int d, int heads,
                                Rng& rng) {
  if (d % heads != 0) throw ConfigError("attention width " + std::to_string(d) +
                                        " not divisible by " + std::to_string(heads) + " heads");
  Attention a;
  a.q = make_linear(store, name + ".q", d, d, rng);
  a.k = make_linear(store, name + ".k", d, d, rng);
  a.v = make_linear(store, name + ".v", d, d, rng);
  a.o = make_linear(store, name + ".o", d, d, rng);
  a.heads = heads;
  a.d = d;
  return a;
}

inline Tensor causal_bias(Tape& tape, int n) {
  std::vector<double> bias(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) bias[static_cast<std::size_t>(i) * n + j] = -1e9;
  return tape.constant({n, n}, std::move(bias));
}

// Scaled dot-product attention. `x` provides queries, `mem` keys/values;
// pass mem == x for self-attention. With `causal`, position i attends only
// to positions <= i.
inline Tensor attend(Tape& tape, const Attention& a, Tensor x, Tensor mem, bool causal) {
  const int dh = a.d / a.heads;
  const double scale = kAttnScale / std::sqrt(static_cast<double>(dh));
  Tensor q = linear(tape, a.q, x);
  Tensor k = linear(tape, a.k, mem);
  Tensor v = linear(tape, a.v, mem);
  const int n = shape_rows(x.shape());
  Tensor bias;
  if (causal) bias = causal_bias(tape, n);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(a.heads));
  for (int h = 0; h < a.heads; ++h) {
    Tensor qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = tape.mul_scalar(tape.matmul(qh, tape.transpose(kh)), scale);
    if (causal) scores = tape.add(scores, bias);
    Tensor attn = tape.softmax_rows(scores);
    heads.push_back(tape.matmul(attn, vh));
  }
  Tensor ctx = a.heads == 1 ? heads[0] : tape.concat_cols(heads);
  return linear(tape, a.o, ctx);
}

struct FeedForward {
  Linear in, out;
};

inline FeedForward make_feed_forward(ParamStore& store, const std::string& name, int d, int hidden,
                                     Rng& rng) {
  FeedForward ff;
  ff.in = make_linear(store, name + ".in", d, hidden, rng);
  ff.out = make_linear(store, name + ".out", hidden, d, rng);
  return ff;
}

inline Tensor feed_forward(Tape& tape, const FeedForward& ff, Tensor x) {
  return linear(tape, ff.out, tape.gelu(linear(tape, ff.in, x)));
}

// Pre-norm self-attention block.
struct Block {
  LayerNormParams ln1, ln2;
  Attention attn;
  FeedForward ff;
};

inline Block make_block(ParamStore& store, const std::string& name, int d, int heads, int hidden,
                        Rng& rng) {
  Block b;
  b.ln1 = make_layer_norm(store, name + ".ln1", d);
  b.attn = make_attention(store, name + ".attn", d, heads, rng);
  b.ln2 = make_layer_norm(store, name + ".ln2", d);
  b.ff = make_feed_forward(store, name + ".ff", d, hidden, rng);
  return b;
}

inline Tensor apply_block(Tape& tape, const Block& b, Tensor x, bool causal) {
  Tensor h = layer_norm(tape, b.ln1, x);
  x = tape.add(x, attend(tape, b.attn, h, h, causal));
  x = tape.add(x, feed_forward(tape, b.ff, layer_norm(tape, b.ln2, x)));
  return x;
}

// Pre-norm decoder block with cross-attention to a memory sequence.
struct CrossBlock {
  LayerNormParams ln1, ln2, ln3;
  Attention self_attn, cross_attn;
  FeedForward ff;
};

inline CrossBlock make_cross_block(ParamStore& store, const std::string& name, int d, int heads,
                                   int hidden, Rng& rng) {
  CrossBlock b;
  b.ln1 = make_layer_norm(store, name + ".ln1", d);
  b.self_attn = make_attention(store, name + ".self", d, heads, rng);
  b.ln2 = make_layer_norm(store, name + ".ln2", d);
  b.cross_attn = make_attention(store, name + ".cross", d, heads, rng);
  b.ln3 = make_layer_norm(store, name + ".ln3", d);
  b.ff = make_feed_forward(store, name + ".ff", d, hidden, rng);
  return b;
}

inline Tensor apply_cross_block(Tape& tape, const CrossBlock& b, Tensor x, Tensor memory) {
  Tensor h = layer_norm(tape, b.ln1, x);
  x = tape.add(x, attend(tape, b.self_attn, h, h, /*causal=*/false));
  x = tape.add(x, attend(tape, b.cross_attn, layer_norm(tape, b.ln2, x), memory, false));
  x = tape.add(x, feed_forward(tape, b.ff, layer_norm(tape, b.ln3, x)));
  return x;
}

}  // namespace maskcap
