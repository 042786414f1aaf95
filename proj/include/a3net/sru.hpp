#pragma once

// Bidirectional stacked SRU encoders.
//
// Cell, per time step t (in the direction of travel):
//   xt_t = W x_t
//   f_t  = sigmoid(W_f x_t + b_f)
//   r_t  = sigmoid(W_r x_t + b_r)
//   c_t  = f_t * c_{t-1} + (1 - f_t) * xt_t,  c_0 = 0
//   h_t  = r_t * tanh(c_t) + (1 - r_t) * hw_t
// where hw_t = W_h x_t when the input width differs from the hidden width and
// hw_t = x_t otherwise. Masked steps carry c forward and emit h_t = 0.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "a3net/autodiff.hpp"
#include "a3net/error.hpp"
#include "a3net/ops.hpp"
#include "a3net/params.hpp"
#include "a3net/rng.hpp"

namespace a3net {

struct SruLayer {
  Var W, W_f, W_r, b_f, b_r;
  std::optional<Var> W_h;
};

struct EncoderShape {
  std::string name;  // parameter prefix, e.g. "passage_encoder"
  std::size_t layers = 1;
  std::size_t input_dim = 0;
  std::size_t hidden = 0;

  std::size_t layer_input(std::size_t layer) const { return layer == 0 ? input_dim : 2 * hidden; }

  static std::string prefix(const std::string& name, std::size_t layer, bool backward) {
    return name + "." + std::to_string(layer) + (backward ? ".bwd." : ".fwd.");
  }
};

// Matrices uniform(-sqrt(1/d_in), sqrt(1/d_in)); biases zero.
inline void add_sru_params(ParamStore& store, const std::string& prefix, std::size_t d_in, std::size_t d, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(d_in));
  auto matrix = [&] {
    Tensor m({d, d_in});
    for (double& v : m.data()) v = rng.uniform(-bound, bound);
    return m;
  };
  store.add(prefix + "W", matrix());
  store.add(prefix + "W_f", matrix());
  store.add(prefix + "W_r", matrix());
  store.add(prefix + "b_f", Tensor({d}));
  store.add(prefix + "b_r", Tensor({d}));
  if (d_in != d) store.add(prefix + "W_h", matrix());
}

inline void add_encoder_params(ParamStore& store, const EncoderShape& shape, Rng& rng) {
  for (std::size_t l = 0; l < shape.layers; ++l) {
    for (bool backward : {false, true}) {
      add_sru_params(store, EncoderShape::prefix(shape.name, l, backward), shape.layer_input(l), shape.hidden, rng);
    }
  }
}

inline SruLayer sru_layer(const ParamVars& vars, const std::string& prefix) {
  SruLayer layer{vars[prefix + "W"], vars[prefix + "W_f"], vars[prefix + "W_r"], vars[prefix + "b_f"],
                 vars[prefix + "b_r"], std::nullopt};
  if (vars.contains(prefix + "W_h")) layer.W_h = vars[prefix + "W_h"];
  return layer;
}

// x [B, L, d_in], mask [B, L] -> h [B, L, d].
inline Var sru_cell_forward(const SruLayer& p, Var x, const Tensor& mask, bool reverse) {
  const Shape& sx = x.shape();
  const Shape& sw = p.W.shape();
  if (sx.size() != 3 || sw.size() != 2 || sx[2] != sw[1]) {
    throw ShapeError("sru_cell_forward: input " + shape_str(sx) + " does not match W " + shape_str(sw));
  }
  if (mask.shape() != Shape{sx[0], sx[1]}) {
    throw ShapeError("sru_cell_forward: mask " + shape_str(mask.shape()) + " for input " + shape_str(sx));
  }
  const std::size_t d = sw[0];
  if (!p.W_h && sx[2] != d) {
    throw ShapeError("sru_cell_forward: highway projection required for input width " + std::to_string(sx[2]));
  }
  Var xt = ops::linear(x, p.W);
  Var f = ops::sigmoid(ops::add(ops::linear(x, p.W_f), p.b_f));
  Var r = ops::sigmoid(ops::add(ops::linear(x, p.W_r), p.b_r));
  Var c = ops::sru_recurrence(xt, f, mask, reverse);
  Var highway = p.W_h ? ops::linear(x, *p.W_h) : x;
  Var h = ops::add(ops::mul(r, ops::tanh(c)), ops::mul(ops::one_minus(r), highway));
  Graph& g = *x.graph;
  return ops::mul(h, g.constant(mask.reshaped({sx[0], sx[1], 1})));
}

// Forward and backward cells concatenated per position -> [B, L, 2d].
inline Var bisru_layer(const SruLayer& fwd, const SruLayer& bwd, Var x, const Tensor& mask) {
  return ops::concat({sru_cell_forward(fwd, x, mask, false), sru_cell_forward(bwd, x, mask, true)}, 2);
}

// Inverted dropout whose masks can be replayed: masks sampled in one forward
// pass are reused, in call order, by a later pass over the same structure.
class DropoutMasks {
 public:
  DropoutMasks(double rate, Rng& rng) : rate_(rate), rng_(&rng) {
    if (rate < 0.0 || rate > 1.0) throw UsageError("dropout rate must be in [0, 1]");
  }

  Var apply(Var x) {
    if (rate_ <= 0.0) return x;
    Tensor mask;
    if (replaying_) {
      if (cursor_ >= masks_.size() || masks_[cursor_].shape() != x.shape()) {
        throw Error("dropout replay does not match the recorded pass");
      }
      mask = masks_[cursor_++];
    } else {
      mask = Tensor(x.shape());
      const double keep = 1.0 - rate_;
      for (double& v : mask.data()) v = (keep > 0.0 && rng_->uniform() < keep) ? 1.0 / keep : 0.0;
      masks_.push_back(mask);
    }
    return ops::mul(x, x.graph->constant(std::move(mask)));
  }

  // Subsequent apply() calls reuse the recorded masks from the start.
  void replay() {
    replaying_ = true;
    cursor_ = 0;
  }

  double rate() const { return rate_; }
  std::size_t recorded() const { return masks_.size(); }

 private:
  double rate_;
  Rng* rng_;
  std::vector<Tensor> masks_;
  bool replaying_ = false;
  std::size_t cursor_ = 0;
};

// Stack of bidirectional layers; dropout acts on the activations between
// layers and only when `dropout` is given (training).
inline Var encoder_forward(const ParamVars& vars, const EncoderShape& shape, Var x, const Tensor& mask,
                           DropoutMasks* dropout) {
  Var h = x;
  for (std::size_t l = 0; l < shape.layers; ++l) {
    if (l > 0 && dropout) h = dropout->apply(h);
    h = bisru_layer(sru_layer(vars, EncoderShape::prefix(shape.name, l, false)),
                    sru_layer(vars, EncoderShape::prefix(shape.name, l, true)), h, mask);
  }
  return h;
}

}  // namespace a3net
