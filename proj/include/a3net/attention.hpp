#pragma once

// Attention mechanisms over batched sequences [B, N, d] with 0/1 position
// masks [B, N]. Rank-2 inputs ([N, d] with mask [N]) are accepted as a batch
// of one and returned without the batch axis.

#include <string>
#include <vector>

#include "a3net/autodiff.hpp"
#include "a3net/error.hpp"
#include "a3net/ops.hpp"

namespace a3net {

struct AttentionOutput {
  Var weights;  // [B, N, M], rows sum to 1 over unmasked columns
  Var summary;  // [B, N, d]
};

// mask [B, M] -> [B, N, M], the same row repeated N times.
inline Tensor expand_rows(const Tensor& mask, std::size_t n) {
  const std::size_t batch = mask.dim(0), m = mask.dim(1);
  Tensor out({batch, n, m});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n; ++i) std::copy_n(mask.ptr() + b * m, m, out.ptr() + (b * n + i) * m);
  }
  return out;
}

// mask of shape S -> S + [e], each entry repeated e times.
inline Tensor expand_last(const Tensor& mask, std::size_t e) {
  Shape s = mask.shape();
  s.push_back(e);
  Tensor out(s);
  for (std::size_t i = 0; i < mask.size(); ++i) std::fill_n(out.ptr() + i * e, e, mask[i]);
  return out;
}

namespace detail {

inline void require_unmasked(const Tensor& mask, const char* op) {
  const std::size_t batch = mask.dim(0), m = mask.dim(1);
  for (std::size_t b = 0; b < batch; ++b) {
    bool any = false;
    for (std::size_t j = 0; j < m; ++j) any = any || mask[b * m + j] != 0.0;
    if (!any) throw ShapeError(std::string(op) + ": every position of row " + std::to_string(b) + " is masked");
  }
}

inline Var lift(Var v) {
  if (v.shape().size() == 2) return ops::reshape(v, Shape{1, v.shape()[0], v.shape()[1]});
  if (v.shape().size() != 3) throw ShapeError("attention: expected [N,d] or [B,N,d], got " + shape_str(v.shape()));
  return v;
}

inline Tensor lift_mask(const Tensor& mask) { return mask.rank() == 1 ? mask.reshaped({1, mask.dim(0)}) : mask; }

inline Var drop_batch(Var v, bool unbatched) {
  if (!unbatched) return v;
  Shape s(v.shape().begin() + 1, v.shape().end());
  return ops::reshape(v, s);
}

}  // namespace detail

// weights_ij = softmax_j(<a_i, b_j>) over unmasked j; summary_i = sum_j weights_ij b_j.
// With `literal_double_exp` the scores are exponentiated once more before
// the softmax.
inline AttentionOutput simple_match_attention(Var a, Var b, const Tensor& mask_b, bool literal_double_exp = false) {
  const bool unbatched = a.shape().size() == 2;
  Var va = detail::lift(a);
  Var vb = detail::lift(b);
  const Tensor mask = detail::lift_mask(mask_b);
  if (va.shape()[0] != vb.shape()[0] || va.shape()[2] != vb.shape()[2]) {
    throw ShapeError("simple_match_attention: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  if (mask.shape() != Shape{vb.shape()[0], vb.shape()[1]}) {
    throw ShapeError("simple_match_attention: mask " + shape_str(mask_b.shape()) + " for " + shape_str(b.shape()));
  }
  detail::require_unmasked(mask, "simple_match_attention");
  Var scores = ops::matmul_bt(va, vb);
  if (literal_double_exp) scores = ops::exp(scores);
  Var weights = ops::masked_softmax(scores, expand_rows(mask, va.shape()[1]));
  Var summary = ops::matmul(weights, vb);
  return {detail::drop_batch(weights, unbatched), detail::drop_batch(summary, unbatched)};
}

// S_ij = w_S . [p_i; q_j; p_i * q_j] for p [B,T,h], q [B,J,h], w_S [3h].
inline Var similarity_matrix(Var p, Var q, Var w_s) {
  const bool unbatched = p.shape().size() == 2;
  Var vp = detail::lift(p);
  Var vq = detail::lift(q);
  const std::size_t h = vp.shape()[2];
  if (vq.shape()[2] != h || vq.shape()[0] != vp.shape()[0]) {
    throw ShapeError("similarity_matrix: incompatible shapes " + shape_str(p.shape()) + " and " +
                     shape_str(q.shape()));
  }
  if (w_s.shape() != Shape{3 * h}) {
    throw ShapeError("similarity_matrix: W_S has shape " + shape_str(w_s.shape()) + ", expected [" +
                     std::to_string(3 * h) + "]");
  }
  const std::size_t batch = vq.shape()[0], qlen = vq.shape()[1];
  Var w_p = ops::reshape(ops::slice(w_s, 0, 0, h), {1, h});
  Var w_q = ops::reshape(ops::slice(w_s, 0, h, h), {1, h});
  Var w_pq = ops::slice(w_s, 0, 2 * h, h);
  Var term_p = ops::linear(vp, w_p);                                        // [B,T,1]
  Var term_q = ops::reshape(ops::linear(vq, w_q), {batch, 1, qlen});        // [B,1,J]
  Var term_pq = ops::matmul_bt(ops::mul(vp, w_pq), vq);                     // [B,T,J]
  return detail::drop_batch(ops::add(ops::add(term_pq, term_p), term_q), unbatched);
}

// Question-merged attention: a_i = softmax(S_i:) over unmasked question
// words, output_i = sum_j a_ij q_j.
inline AttentionOutput question_merged_attention(Var s, Var q, const Tensor& mask_q) {
  const bool unbatched = s.shape().size() == 2;
  Var vs = detail::lift(s);
  Var vq = detail::lift(q);
  const Tensor mask = detail::lift_mask(mask_q);
  if (vs.shape()[2] != vq.shape()[1] || vs.shape()[0] != vq.shape()[0] || mask.shape() != Shape{vq.shape()[0], vq.shape()[1]}) {
    throw ShapeError("question_merged_attention: incompatible shapes " + shape_str(s.shape()) + " and " +
                     shape_str(q.shape()));
  }
  detail::require_unmasked(mask, "question_merged_attention");
  Var a = ops::masked_softmax(vs, expand_rows(mask, vs.shape()[1]));
  return {detail::drop_batch(a, unbatched), detail::drop_batch(ops::matmul(a, vq), unbatched)};
}

// Passage-merged attention: b = softmax over unmasked passage words of the
// row maxima of S (max over unmasked question words); the summary
// sum_i b_i p_i is tiled to every passage position.
inline AttentionOutput passage_merged_attention(Var s, Var p, const Tensor& mask_p, const Tensor& mask_q) {
  const bool unbatched = s.shape().size() == 2;
  Var vs = detail::lift(s);
  Var vp = detail::lift(p);
  const Tensor mp = detail::lift_mask(mask_p);
  const Tensor mq = detail::lift_mask(mask_q);
  const std::size_t batch = vp.shape()[0], plen = vp.shape()[1], h = vp.shape()[2];
  if (vs.shape()[0] != batch || vs.shape()[1] != plen || mp.shape() != Shape{batch, plen} ||
      mq.shape() != Shape{batch, vs.shape()[2]}) {
    throw ShapeError("passage_merged_attention: incompatible shapes " + shape_str(s.shape()) + " and " +
                     shape_str(p.shape()));
  }
  detail::require_unmasked(mp, "passage_merged_attention");
  detail::require_unmasked(mq, "passage_merged_attention");
  Var row_max = ops::masked_max(vs, expand_rows(mq, plen));      // [B,T]
  Var b = ops::masked_softmax(row_max, mp);                        // [B,T]
  Var pooled = ops::matmul(ops::reshape(b, {batch, 1, plen}), vp);  // [B,1,h]
  Var tiled = ops::broadcast_to(pooled, {batch, plen, h});
  return {detail::drop_batch(ops::reshape(b, {batch, 1, plen}), unbatched), detail::drop_batch(tiled, unbatched)};
}

}  // namespace a3net
