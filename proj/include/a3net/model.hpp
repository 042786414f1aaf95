#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "a3net/attention.hpp"
#include "a3net/autodiff.hpp"
#include "a3net/data.hpp"
#include "a3net/error.hpp"
#include "a3net/ops.hpp"
#include "a3net/params.hpp"
#include "a3net/rng.hpp"
#include "a3net/sru.hpp"

namespace a3net {

struct ModelDims {
  std::size_t vocab_size = 2;
  std::size_t embed_dim = 64;
  std::size_t hidden = 100;  // d; encoder outputs are 2d wide
  std::size_t encoder_layers = 4;
  std::size_t fusion_layers = 2;
  std::size_t max_word_len = 8;
  bool literal_double_exp = false;

  // d = 100, 4-layer passage/question encoders, 2-layer fusion.
  static ModelDims paper(std::size_t vocab) {
    ModelDims d;
    d.vocab_size = vocab;
    return d;
  }

  // d = 32, 2-layer encoders, 1-layer fusion.
  static ModelDims desk(std::size_t vocab) {
    ModelDims d;
    d.vocab_size = vocab;
    d.hidden = 32;
    d.encoder_layers = 2;
    d.fusion_layers = 1;
    return d;
  }

  EncoderShape passage_encoder() const { return {"passage_encoder", encoder_layers, 2 * embed_dim, hidden}; }
  EncoderShape question_encoder() const { return {"question_encoder", encoder_layers, embed_dim, hidden}; }
  EncoderShape fusion() const { return {"fusion", fusion_layers, 6 * hidden, hidden}; }

  bool operator==(const ModelDims&) const = default;
};

// Variables that can be named as adversarial or injection targets.
inline const std::vector<std::string>& bindable_variables() {
  static const std::vector<std::string> names = {"w_P", "w_Q",      "u_P",      "u_Q",      "u_hat_P", "v_P",
                                                  "v_Q", "v_hat_P1", "v_hat_P2", "v_hat_P", "h_P",     "h_hat_P"};
  return names;
}

inline bool is_bindable(const std::string& name) {
  const auto& names = bindable_variables();
  return std::find(names.begin(), names.end(), name) != names.end();
}

inline ParamStore init_params(const ModelDims& dims, std::uint64_t seed) {
  Rng rng(seed);
  ParamStore store;
  Tensor& emb = store.add("char_embedding", Tensor({dims.vocab_size, dims.embed_dim}));
  for (double& v : emb.data()) v = rng.normal();
  add_encoder_params(store, dims.passage_encoder(), rng);
  add_encoder_params(store, dims.question_encoder(), rng);
  add_encoder_params(store, dims.fusion(), rng);
  auto vec = [&](const char* name, std::size_t n) {
    Tensor& t = store.add(name, Tensor({n}));
    const double bound = std::sqrt(1.0 / static_cast<double>(n));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
  };
  const std::size_t d = dims.hidden;
  vec("W_S", 6 * d);
  vec("W_Ps", 4 * d);
  vec("W_Pe", 4 * d + 1);
  return store;
}

struct PerturbationInjection {
  std::string target;
  Tensor delta;  // added to the target; no gradient flows into it
};

// Everything one forward pass produced. Owns its graph, so Vars stay valid
// while the trace lives.
struct ForwardTrace {
  std::unique_ptr<Graph> graph;
  std::unique_ptr<ParamVars> params;
  Var P_s;  // [B, T]
  Var P_e;  // [B, T]
  // Position mask of each bound variable: a prefix of the variable's shape
  // with 1 on real positions.
  std::map<std::string, Tensor> position_masks;
  // Leaf node of every injected delta, by target name.
  std::map<std::string, Var> injected;
  Tensor passage_mask;

  Var variable(const std::string& name) const { return graph->bound(name); }
};

struct ForwardOptions {
  bool training = false;
  DropoutMasks* dropout = nullptr;  // used only when training
  std::vector<PerturbationInjection> injections;
  Graph::Options graph{};
};

// Max-pooling of char embeddings into word vectors.
// char ids [B, L, W] -> (w [B, L, W, E], u [B, L, E]).
struct WordEmbedding {
  Var chars;
  Var words;
};

inline void require_word_chars(const IndexTensor& char_ids, const Tensor& char_mask, const Tensor& word_mask) {
  const std::size_t batch = char_ids.shape.at(0), len = char_ids.shape.at(1), w = char_ids.shape.at(2);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < len; ++t) {
      if (word_mask[b * len + t] == 0.0) continue;
      bool any = false;
      for (std::size_t c = 0; c < w; ++c) any = any || char_mask[(b * len + t) * w + c] != 0.0;
      if (!any) {
        throw DataError("embed_words: word " + std::to_string(t) + " of row " + std::to_string(b) +
                        " has no characters");
      }
    }
  }
}

// Elementwise max over the real chars of each word: [B, L, W, E] -> [B, L, E].
inline Var pool_chars(Var chars, const Tensor& char_mask) {
  return ops::masked_max(chars, expand_last(char_mask, chars.shape().back()), 2);
}

inline WordEmbedding embed_words(Var embedding, const IndexTensor& char_ids, const Tensor& char_mask,
                                 const Tensor& word_mask) {
  require_word_chars(char_ids, char_mask, word_mask);
  Var chars = ops::embedding(embedding, char_ids);
  return {chars, pool_chars(chars, char_mask)};
}

namespace detail {

class Binder {
 public:
  Binder(ForwardTrace& trace, const std::vector<PerturbationInjection>& injections)
      : trace_(trace), injections_(injections) {}

  Var operator()(const std::string& name, Var x, const Tensor& positions) {
    Graph& g = *trace_.graph;
    g.bind(name, x);
    trace_.position_masks[name] = positions;
    for (const auto& inj : injections_) {
      if (inj.target != name) continue;
      if (inj.delta.shape() != x.shape()) {
        throw ShapeError("injection into '" + name + "': delta shape " + shape_str(inj.delta.shape()) +
                         " != variable shape " + shape_str(x.shape()));
      }
      Var delta = g.leaf(inj.delta);
      trace_.injected[name] = delta;
      x = ops::add(x, g.stop_gradient(delta));
    }
    return x;
  }

 private:
  ForwardTrace& trace_;
  const std::vector<PerturbationInjection>& injections_;
};

}  // namespace detail

// Embedding, representation, understanding and pointer layers. Every named
// intermediate is bound on the trace's graph; injections are added where
// their target is bound, so everything downstream sees the perturbed value.
inline ForwardTrace forward(const ModelDims& dims, const ParamStore& params, const Batch& batch,
                            const ForwardOptions& options = {}) {
  for (const auto& inj : options.injections) {
    if (!is_bindable(inj.target)) throw UsageError("unknown injection target '" + inj.target + "'");
  }
  ForwardTrace trace;
  trace.graph = std::make_unique<Graph>(options.graph);
  Graph& g = *trace.graph;
  trace.params = std::make_unique<ParamVars>(g, params);
  const ParamVars& p = *trace.params;
  trace.passage_mask = batch.passage_mask;
  detail::Binder bind(trace, options.injections);
  DropoutMasks* dropout = options.training ? options.dropout : nullptr;

  const std::size_t B = batch.size, T = batch.passage_len;
  const std::size_t d = dims.hidden;
  const Tensor& mask_p = batch.passage_mask;
  const Tensor& mask_q = batch.question_mask;

  // Embedding layer.
  Var emb = p["char_embedding"];
  require_word_chars(batch.passage_chars, batch.passage_char_mask, mask_p);
  require_word_chars(batch.question_chars, batch.question_char_mask, mask_q);
  Var w_p = bind("w_P", ops::embedding(emb, batch.passage_chars), batch.passage_char_mask);
  Var w_q = bind("w_Q", ops::embedding(emb, batch.question_chars), batch.question_char_mask);
  Var u_p = bind("u_P", pool_chars(w_p, batch.passage_char_mask), mask_p);
  Var u_q = bind("u_Q", pool_chars(w_q, batch.question_char_mask), mask_q);
  Var u_hat_p = bind("u_hat_P", simple_match_attention(u_p, u_q, mask_q, dims.literal_double_exp).summary, mask_p);

  // Representation layer.
  Var v_p = bind("v_P", encoder_forward(p, dims.passage_encoder(), ops::concat({u_p, u_hat_p}, 2), mask_p, dropout),
                 mask_p);
  Var v_q = bind("v_Q", encoder_forward(p, dims.question_encoder(), u_q, mask_q, dropout), mask_q);
  Var s = similarity_matrix(v_p, v_q, p["W_S"]);
  Var v_hat_p1 = bind("v_hat_P1", question_merged_attention(s, v_q, mask_q).summary, mask_p);
  Var v_hat_p2 = bind("v_hat_P2", passage_merged_attention(s, v_p, mask_p, mask_q).summary, mask_p);

  // Understanding layer.
  Var v_hat_p = bind("v_hat_P", ops::concat({v_hat_p1, v_hat_p2, v_p}, 2), mask_p);
  Var h_p = bind("h_P", encoder_forward(p, dims.fusion(), v_hat_p, mask_p, dropout), mask_p);
  Var h_hat_p = bind("h_hat_P", simple_match_attention(h_p, h_p, mask_p, dims.literal_double_exp).summary, mask_p);

  // Pointer layer.
  Var start_in = ops::concat({h_hat_p, v_hat_p1}, 2);  // [B,T,4d]
  Var start_logits = ops::reshape(ops::linear(start_in, ops::reshape(p["W_Ps"], {1, 4 * d})), {B, T});
  trace.P_s = ops::masked_softmax(start_logits, mask_p);
  Var end_in = ops::concat({h_hat_p, v_hat_p1, ops::reshape(trace.P_s, {B, T, 1})}, 2);  // [B,T,4d+1]
  Var end_logits = ops::reshape(ops::linear(end_in, ops::reshape(p["W_Pe"], {1, 4 * d + 1})), {B, T});
  trace.P_e = ops::masked_softmax(end_logits, mask_p);
  return trace;
}

// -(1/N) sum_k [log P_s(gold start) + log P_e(gold end)], probabilities
// floored at 1e-12 before the log.
inline Var span_loss(const ForwardTrace& trace, const std::vector<std::size_t>& gold_starts,
                     const std::vector<std::size_t>& gold_ends) {
  const Shape& s = trace.P_s.shape();
  const std::size_t batch = s.at(0), len = s.at(1);
  if (gold_starts.size() != batch || gold_ends.size() != batch) {
    throw ShapeError("span_loss: " + std::to_string(gold_starts.size()) + " gold spans for batch of " +
                     std::to_string(batch));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t idx : {gold_starts[b], gold_ends[b]}) {
      if (idx >= len || trace.passage_mask[b * len + idx] == 0.0) {
        throw DataError("span_loss: gold index " + std::to_string(idx) + " of row " + std::to_string(b) +
                        " is masked");
      }
    }
  }
  Var ls = ops::log(ops::pick(trace.P_s, gold_starts), 1e-12);
  Var le = ops::log(ops::pick(trace.P_e, gold_ends), 1e-12);
  return ops::scale(ops::sum(ops::add(ls, le)), -1.0 / static_cast<double>(batch));
}

inline Var span_loss(const ForwardTrace& trace, const Batch& batch) {
  return span_loss(trace, batch.gold_starts, batch.gold_ends);
}

struct SpanPrediction {
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;

  bool operator==(const SpanPrediction&) const = default;
};

inline constexpr std::size_t kMaxSpanWidth = 10;

// Best (s, e) with 0 <= e - s <= 10, both unmasked, maximising
// P_s[s] + P_e[e]. Ties go to the smaller s, then the smaller e.
inline SpanPrediction decode_span(std::span<const double> p_s, std::span<const double> p_e,
                                  std::span<const double> mask) {
  const std::size_t n = p_s.size();
  if (p_e.size() != n || mask.size() != n) throw ShapeError("decode_span: length mismatch");
  std::optional<SpanPrediction> best;
  for (std::size_t s = 0; s < n; ++s) {
    if (mask[s] == 0.0) continue;
    const std::size_t last = std::min(n - 1, s + kMaxSpanWidth);
    for (std::size_t e = s; e <= last; ++e) {
      if (mask[e] == 0.0) continue;
      const double score = p_s[s] + p_e[e];
      if (!best || score > best->score) best = SpanPrediction{s, e, score};
    }
  }
  if (!best) throw DataError("decode_span: no unmasked position");
  return *best;
}

// Decodes every row of a trace.
inline std::vector<SpanPrediction> decode_batch(const ForwardTrace& trace) {
  const Tensor& ps = trace.P_s.value();
  const Tensor& pe = trace.P_e.value();
  const std::size_t batch = ps.dim(0), len = ps.dim(1);
  std::vector<SpanPrediction> out;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * len;
    out.push_back(decode_span(ps.data().subspan(off, len), pe.data().subspan(off, len),
                              trace.passage_mask.data().subspan(off, len)));
  }
  return out;
}

// Trained model plus what is needed to encode new text.
struct Model {
  ModelDims dims;
  Vocab vocab;
  ParamStore params;
};

inline Model make_model(const ModelDims& dims_in, const Vocab& vocab, std::uint64_t seed) {
  Model m;
  m.dims = dims_in;
  m.dims.vocab_size = vocab.size();
  m.vocab = vocab;
  m.params = init_params(m.dims, seed);
  return m;
}

// Central differences of span_loss with respect to every parameter entry,
// against the reverse-mode gradient (no dropout). Relative error per entry
// uses max(|analytic|, |numeric|, floor) as denominator. With `extrapolate`
// the numeric gradient is the Richardson combination (4 D(h/2) - D(h)) / 3
// of two central differences, which cancels the h^2 error term.
struct ModelGradCheck {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries = 0;
};

inline ModelGradCheck model_gradient_check(const ModelDims& dims, const ParamStore& params, const Batch& batch,
                                           double h = 1e-5, double floor = 1e-8, bool extrapolate = false) {
  if (!(h > 0.0)) throw Error("model_gradient_check: step must be positive");
  ForwardTrace trace = forward(dims, params, batch);
  Var loss = span_loss(trace, batch);
  const auto grads = trace.params->gradients(trace.graph->backward(loss));
  auto eval = [&](const ParamStore& p) {
    ForwardTrace t = forward(dims, p, batch);
    return span_loss(t, batch).value().item();
  };
  ModelGradCheck out;
  ParamStore probe = params;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    Tensor& value = probe.entries()[k].value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double x = value[i];
      auto central = [&](double step) {
        value[i] = x + step;
        const double up = eval(probe);
        value[i] = x - step;
        const double down = eval(probe);
        value[i] = x;
        return (up - down) / (2.0 * step);
      };
      const double numeric = extrapolate ? (4.0 * central(h / 2) - central(h)) / 3.0 : central(h);
      const double analytic = grads[k][i];
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++out.entries;
      if (out.entries == 1 || rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst_param = probe.entries()[k].name;
        out.worst_index = i;
        out.analytic = analytic;
        out.numeric = numeric;
      }
    }
  }
  return out;
}

}  // namespace a3net
