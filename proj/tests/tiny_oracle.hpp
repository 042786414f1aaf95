#pragma once

// Straight-line reimplementation of the forward pass with plain loops over
// std::vector, sharing nothing with the library beyond the parameter store
// and the batch encoding. Used as an oracle for P_s and P_e.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "a3net/data.hpp"
#include "a3net/model.hpp"
#include "a3net/params.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Seq = std::vector<Vec>;  // one vector per position

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double inner(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec cat(const Vec& a, const Vec& b) {
  Vec out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Softmax over the first n entries.
inline Vec softmax(const Vec& x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
  Vec out(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += out[i] = std::exp(x[i] - m);
  for (double& v : out) v /= z;
  return out;
}

// W is [rows, cols] row-major.
inline Vec matvec(const a3net::Tensor& W, const Vec& x) {
  const std::size_t rows = W.dim(0), cols = W.dim(1);
  Vec out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r] += W[r * cols + c] * x[c];
  }
  return out;
}

// Attend from each of a's first na vectors over b's first nb vectors.
inline Seq simatt(const Seq& a, std::size_t na, const Seq& b, std::size_t nb) {
  Seq out;
  for (std::size_t i = 0; i < na; ++i) {
    Vec scores(nb);
    for (std::size_t j = 0; j < nb; ++j) scores[j] = inner(a[i], b[j]);
    const Vec alpha = softmax(scores, nb);
    Vec s(b[0].size(), 0.0);
    for (std::size_t j = 0; j < nb; ++j) {
      for (std::size_t k = 0; k < s.size(); ++k) s[k] += alpha[j] * b[j][k];
    }
    out.push_back(s);
  }
  return out;
}

inline Seq sru_direction(const a3net::ParamStore& p, const std::string& prefix, const Seq& x, bool reverse) {
  const a3net::Tensor& W = p[prefix + "W"];
  const std::size_t d = W.dim(0), n = x.size();
  Seq h(n, Vec(d, 0.0));
  Vec c(d, 0.0);
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t t = reverse ? n - 1 - step : step;
    const Vec xt = matvec(W, x[t]);
    Vec f = matvec(p[prefix + "W_f"], x[t]);
    Vec r = matvec(p[prefix + "W_r"], x[t]);
    const Vec hw = p.contains(prefix + "W_h") ? matvec(p[prefix + "W_h"], x[t]) : x[t];
    for (std::size_t k = 0; k < d; ++k) {
      f[k] = sigmoid(f[k] + p[prefix + "b_f"][k]);
      r[k] = sigmoid(r[k] + p[prefix + "b_r"][k]);
      c[k] = f[k] * c[k] + (1.0 - f[k]) * xt[k];
      h[t][k] = r[k] * std::tanh(c[k]) + (1.0 - r[k]) * hw[k];
    }
  }
  return h;
}

inline Seq encoder(const a3net::ParamStore& p, const std::string& name, std::size_t layers, Seq x) {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = name + "." + std::to_string(l);
    const Seq f = sru_direction(p, base + ".fwd.", x, false);
    const Seq b = sru_direction(p, base + ".bwd.", x, true);
    for (std::size_t t = 0; t < x.size(); ++t) x[t] = cat(f[t], b[t]);
  }
  return x;
}

// Max-pooled character embeddings of the first n words of one batch row.
inline Seq embed(const a3net::ParamStore& p, const a3net::IndexTensor& ids, std::size_t row, std::size_t n) {
  const a3net::Tensor& E = p["char_embedding"];
  const std::size_t dim = E.dim(1), L = ids.shape[1], W = ids.shape[2];
  Seq out;
  for (std::size_t t = 0; t < n; ++t) {
    Vec u(dim, -std::numeric_limits<double>::infinity());
    for (std::size_t w = 0; w < W; ++w) {
      const std::size_t id = ids.ids[(row * L + t) * W + w];
      if (id == a3net::Vocab::kPad) continue;
      for (std::size_t k = 0; k < dim; ++k) u[k] = std::max(u[k], E[id * dim + k]);
    }
    out.push_back(u);
  }
  return out;
}

struct Output {
  Vec p_s;
  Vec p_e;
};

// P_s and P_e of one batch row over its real passage positions.
inline Output forward_row(const a3net::ModelDims& dims, const a3net::ParamStore& p, const a3net::Batch& batch,
                          std::size_t row) {
  const std::size_t T = batch.passage_lengths[row], J = batch.question_lengths[row];
  const Seq u_p = embed(p, batch.passage_chars, row, T);
  const Seq u_q = embed(p, batch.question_chars, row, J);
  const Seq u_hat = simatt(u_p, T, u_q, J);
  Seq enc_in(T);
  for (std::size_t t = 0; t < T; ++t) enc_in[t] = cat(u_p[t], u_hat[t]);
  const Seq v_p = encoder(p, "passage_encoder", dims.encoder_layers, enc_in);
  const Seq v_q = encoder(p, "question_encoder", dims.encoder_layers, u_q);

  const a3net::Tensor& w_s = p["W_S"];
  const std::size_t h2 = 2 * dims.hidden;
  std::vector<Vec> S(T, Vec(J));
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = 0; j < J; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < h2; ++k) {
        s += w_s[k] * v_p[i][k] + w_s[h2 + k] * v_q[j][k] + w_s[2 * h2 + k] * v_p[i][k] * v_q[j][k];
      }
      S[i][j] = s;
    }
  }
  Seq v1(T, Vec(h2, 0.0));
  for (std::size_t i = 0; i < T; ++i) {
    const Vec a = softmax(S[i], J);
    for (std::size_t j = 0; j < J; ++j) {
      for (std::size_t k = 0; k < h2; ++k) v1[i][k] += a[j] * v_q[j][k];
    }
  }
  Vec row_max(T);
  for (std::size_t i = 0; i < T; ++i) row_max[i] = *std::max_element(S[i].begin(), S[i].end());
  const Vec b = softmax(row_max, T);
  Vec v2(h2, 0.0);
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t k = 0; k < h2; ++k) v2[k] += b[i] * v_p[i][k];
  }
  Seq v_hat(T);
  for (std::size_t t = 0; t < T; ++t) v_hat[t] = cat(cat(v1[t], v2), v_p[t]);
  const Seq h_p = encoder(p, "fusion", dims.fusion_layers, v_hat);
  const Seq h_hat = simatt(h_p, T, h_p, T);

  Vec start(T), end(T);
  for (std::size_t t = 0; t < T; ++t) start[t] = inner(p["W_Ps"].values(), cat(h_hat[t], v1[t]));
  Output out;
  out.p_s = softmax(start, T);
  for (std::size_t t = 0; t < T; ++t) {
    end[t] = inner(p["W_Pe"].values(), cat(cat(h_hat[t], v1[t]), Vec{out.p_s[t]}));
  }
  out.p_e = softmax(end, T);
  return out;
}

}  // namespace oracle
