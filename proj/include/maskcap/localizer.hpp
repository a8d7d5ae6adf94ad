#pragma once

// Event-query cross-attention decoder. Learnable query embeddings attend to
// the (position-augmented) frame features through one decoder block; two
// sigmoid heads read each query state out as a normalized mask center and
// width.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "maskcap/errors.hpp"
#include "maskcap/nn.hpp"
#include "maskcap/tensor.hpp"

namespace maskcap {

struct EventParams {
  Tensor mu;     // [1], in (0,1)
  Tensor sigma;  // [1], in (0,1)
};

class Localizer {
 public:
  Localizer(ParamStore& store, Rng& rng, int d, int heads, int ff, int k_max, int n_blocks = 1)
      : k_max_(k_max) {
    queries_ = &store.create("localizer.queries", {k_max, d});
    init_normal(*queries_, rng, kInitStd);
    for (int i = 0; i < n_blocks; ++i)
      blocks_.push_back(make_cross_block(store, "localizer.block" + std::to_string(i), d, heads,
                                         ff, rng));
    final_ = make_layer_norm(store, "localizer.final", d);
    fc_mu_ = make_linear(store, "localizer.fc_mu", d, 1, rng);
    fc_sigma_ = make_linear(store, "localizer.fc_sigma", d, 1, rng);
    // width prior: sigma starts near 0.25 instead of 0.5
    fc_sigma_.b->value[0] = std::log(0.25 / 0.75) / kHeadScale;
  }

  int k_max() const { return k_max_; }
  Parameter& queries() { return *queries_; }
  const Linear& fc_mu() const { return fc_mu_; }
  const Linear& fc_sigma() const { return fc_sigma_; }

  // frames_in must already include position embeddings (v + theta_p). The
  // first n_events query rows are used, in query order.
  std::vector<EventParams> localize(Tape& tape, Tensor frames_in, int n_events) const {
    if (n_events < 1 || n_events > k_max_)
      throw CapacityError("localize: n_events " + std::to_string(n_events) + " outside [1," +
                          std::to_string(k_max_) + "]");
    Tensor q = tape.slice_rows(tape.leaf(*queries_), 0, n_events);
    for (const CrossBlock& b : blocks_) q = apply_cross_block(tape, b, q, frames_in);
    Tensor h = layer_norm(tape, final_, q);
    // kHeadScale keeps the full (0,1) range reachable from near-zero weights
    Tensor mu_col = tape.sigmoid(tape.mul_scalar(linear(tape, fc_mu_, h), kHeadScale));
    Tensor sigma_col = tape.sigmoid(tape.mul_scalar(linear(tape, fc_sigma_, h), kHeadScale));
    std::vector<EventParams> out;
    out.reserve(static_cast<std::size_t>(n_events));
    for (int i = 0; i < n_events; ++i)
      out.push_back({tape.slice_rows(mu_col, i, i + 1), tape.slice_rows(sigma_col, i, i + 1)});
    return out;
  }

 private:
  int k_max_;
  Parameter* queries_ = nullptr;
  std::vector<CrossBlock> blocks_;
  LayerNormParams final_;
  Linear fc_mu_, fc_sigma_;
};

}  // namespace maskcap
