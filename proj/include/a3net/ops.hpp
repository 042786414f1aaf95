#pragma once

// Differentiable primitives. Every function records one node on the graph of
// its inputs and attaches the matching vector-Jacobian product.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "a3net/autodiff.hpp"
#include "a3net/error.hpp"
#include "a3net/tensor.hpp"

namespace a3net {

// Integer tensor used for embedding lookups (char ids) and gold indices.
struct IndexTensor {
  Shape shape;
  std::vector<std::size_t> ids;

  std::size_t operator[](std::size_t i) const { return ids[i]; }
  bool operator==(const IndexTensor&) const = default;
};

namespace ops {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

inline Graph& same_graph(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) throw Error("ops: operands live on different graphs");
  return *a.graph;
}

[[noreturn]] inline void shape_fail(OpKind kind, const Shape& a, const Shape& b, const std::string& why = {}) {
  std::string msg = std::string(op_name(kind)) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
  if (!why.empty()) msg += " (" + why + ")";
  throw ShapeError(msg);
}

// Index mapping for numpy-style broadcasting (shapes aligned on the right).
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;

  static std::vector<std::size_t> strides_for(const Shape& s, const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::size_t> st(r, 0);
    std::size_t acc = 1;
    for (std::size_t k = 0; k < s.size(); ++k) {
      const std::size_t axis_s = s.size() - 1 - k;
      const std::size_t axis_o = r - 1 - k;
      st[axis_o] = s[axis_s] == 1 ? 0 : acc;
      acc *= s[axis_s];
    }
    return st;
  }

  Broadcast(OpKind kind, const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    out.assign(r, 1);
    for (std::size_t k = 0; k < r; ++k) {
      const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
      const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
      if (da != db && da != 1 && db != 1) shape_fail(kind, a, b, "not broadcastable");
      out[r - 1 - k] = std::max(da, db);
    }
    stride_a = strides_for(a, out);
    stride_b = strides_for(b, out);
  }

  // fn(out_index, a_index, b_index) for every output element in order.
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const std::size_t r = out.size();
    const std::size_t n = shape_numel(out);
    std::vector<std::size_t> counter(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
      fn(i, ia, ib);
      for (std::size_t axis = r; axis-- > 0;) {
        ++counter[axis];
        ia += stride_a[axis];
        ib += stride_b[axis];
        if (counter[axis] < out[axis]) break;
        ia -= stride_a[axis] * out[axis];
        ib -= stride_b[axis] * out[axis];
        counter[axis] = 0;
      }
    }
  }
};

template <typename Fwd, typename DA, typename DB>
Var binary(OpKind kind, Var a, Var b, Fwd fwd, DA da, DB db) {
  Graph& g = same_graph(a, b);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.shape() == vb.shape()) {
    Tensor out(va.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(va[i], vb[i]);
    return g.record(kind, {a.id, b.id}, std::move(out), [ia = a.id, ib = b.id, da, db](Graph& g, const Tensor& go) {
      const Tensor& x = g.value(ia);
      const Tensor& y = g.value(ib);
      if (Tensor* ga = g.grad_slot(ia)) {
        for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * da(x[i], y[i]);
      }
      if (Tensor* gb = g.grad_slot(ib)) {
        for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i] * db(x[i], y[i]);
      }
    });
  }
  Broadcast plan(kind, va.shape(), vb.shape());
  Tensor out(plan.out);
  plan.for_each([&](std::size_t i, std::size_t ja, std::size_t jb) { out[i] = fwd(va[ja], vb[jb]); });
  return g.record(kind, {a.id, b.id}, std::move(out),
                  [ia = a.id, ib = b.id, plan = std::move(plan), da, db](Graph& g, const Tensor& go) {
                    const Tensor& x = g.value(ia);
                    const Tensor& y = g.value(ib);
                    Tensor* ga = g.grad_slot(ia);
                    Tensor* gb = g.grad_slot(ib);
                    plan.for_each([&](std::size_t i, std::size_t ja, std::size_t jb) {
                      if (ga) (*ga)[ja] += go[i] * da(x[ja], y[jb]);
                      if (gb) (*gb)[jb] += go[i] * db(x[ja], y[jb]);
                    });
                  });
}

// Elementwise unary op whose derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Var unary(OpKind kind, Var a, Fwd fwd, Deriv deriv) {
  Graph& g = *a.graph;
  const Tensor& va = a.value();
  Tensor out(va.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(va[i]);
  const NodeId self = g.size();
  return g.record(kind, {a.id}, std::move(out), [ia = a.id, self, deriv](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_slot(ia);
    if (!ga) return;
    const Tensor& x = g.value(ia);
    const Tensor& y = g.value(self);
    for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * deriv(x[i], y[i]);
  });
}

// Splits a shape into (batch, rows, cols) for the matrix primitives; rank 2
// is treated as a batch of one.
inline void as_batched(OpKind kind, const Shape& s, const Shape& other, std::size_t& batch, std::size_t& rows,
                       std::size_t& cols) {
  if (s.size() == 2) {
    batch = 1;
    rows = s[0];
    cols = s[1];
  } else if (s.size() == 3) {
    batch = s[0];
    rows = s[1];
    cols = s[2];
  } else {
    shape_fail(kind, s, other, "expected rank 2 or 3");
  }
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(
      OpKind::Add, a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      OpKind::Sub, a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return detail::binary(
      OpKind::Mul, a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var scale(Var a, double s) {
  return detail::unary(
      OpKind::Scale, a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var add_scalar(Var a, double s) {
  return detail::unary(
      OpKind::AddScalar, a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

// 1 - a
inline Var one_minus(Var a) { return add_scalar(scale(a, -1.0), 1.0); }

inline Var sigmoid(Var a) {
  return detail::unary(
      OpKind::Sigmoid, a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a) {
  return detail::unary(
      OpKind::Tanh, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(Var a) {
  return detail::unary(
      OpKind::Exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// log(max(x, floor)); the derivative is zero where the floor is active.
inline Var log(Var a, double floor = 1e-12) {
  return detail::unary(
      OpKind::Log, a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x < floor ? 0.0 : 1.0 / x; });
}

// x [..., k] times W [m, k] transposed -> [..., m].
inline Var linear(Var x, Var w) {
  Graph& g = detail::same_graph(x, w);
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.empty() || sw.size() != 2 || sx.back() != sw[1]) detail::shape_fail(OpKind::Linear, sx, sw);
  const std::size_t k = sw[1];
  const std::size_t m = sw[0];
  const std::size_t rows = x.value().size() / std::max<std::size_t>(k, 1);
  Shape so = sx;
  so.back() = m;
  Tensor out(so);
  if (rows && m) {
    detail::MapMatrix(out.ptr(), rows, m).noalias() =
        detail::ConstMapMatrix(x.value().ptr(), rows, k) * detail::ConstMapMatrix(w.value().ptr(), m, k).transpose();
  }
  return g.record(OpKind::Linear, {x.id, w.id}, std::move(out),
                  [ix = x.id, iw = w.id, rows, k, m](Graph& g, const Tensor& go) {
                    if (!rows || !m) return;
                    detail::ConstMapMatrix dy(go.ptr(), rows, m);
                    if (Tensor* gx = g.grad_slot(ix)) {
                      detail::MapMatrix(gx->ptr(), rows, k).noalias() +=
                          dy * detail::ConstMapMatrix(g.value(iw).ptr(), m, k);
                    }
                    if (Tensor* gw = g.grad_slot(iw)) {
                      detail::MapMatrix(gw->ptr(), m, k).noalias() +=
                          dy.transpose() * detail::ConstMapMatrix(g.value(ix).ptr(), rows, k);
                    }
                  });
}

// Batched A [B,n,k] times B [B,m,k] transposed -> [B,n,m]. Rank-2 operands
// are a batch of one.
inline Var matmul_bt(Var a, Var b) {
  Graph& g = detail::same_graph(a, b);
  std::size_t ba, n, k, bb, m, kb;
  detail::as_batched(OpKind::MatmulBT, a.shape(), b.shape(), ba, n, k);
  detail::as_batched(OpKind::MatmulBT, b.shape(), a.shape(), bb, m, kb);
  if (ba != bb || k != kb || a.shape().size() != b.shape().size()) {
    detail::shape_fail(OpKind::MatmulBT, a.shape(), b.shape());
  }
  Shape so = a.shape().size() == 3 ? Shape{ba, n, m} : Shape{n, m};
  Tensor out(so);
  for (std::size_t t = 0; t < ba; ++t) {
    detail::MapMatrix(out.ptr() + t * n * m, n, m).noalias() =
        detail::ConstMapMatrix(a.value().ptr() + t * n * k, n, k) *
        detail::ConstMapMatrix(b.value().ptr() + t * m * k, m, k).transpose();
  }
  return g.record(OpKind::MatmulBT, {a.id, b.id}, std::move(out),
                  [ia = a.id, ib = b.id, ba, n, m, k](Graph& g, const Tensor& go) {
                    Tensor* ga = g.grad_slot(ia);
                    Tensor* gb = g.grad_slot(ib);
                    for (std::size_t t = 0; t < ba; ++t) {
                      detail::ConstMapMatrix dy(go.ptr() + t * n * m, n, m);
                      if (ga) {
                        detail::MapMatrix(ga->ptr() + t * n * k, n, k).noalias() +=
                            dy * detail::ConstMapMatrix(g.value(ib).ptr() + t * m * k, m, k);
                      }
                      if (gb) {
                        detail::MapMatrix(gb->ptr() + t * m * k, m, k).noalias() +=
                            dy.transpose() * detail::ConstMapMatrix(g.value(ia).ptr() + t * n * k, n, k);
                      }
                    }
                  });
}

// Batched A [B,n,m] times V [B,m,d] -> [B,n,d].
inline Var matmul(Var a, Var v) {
  Graph& g = detail::same_graph(a, v);
  std::size_t ba, n, m, bv, mv, d;
  detail::as_batched(OpKind::Matmul, a.shape(), v.shape(), ba, n, m);
  detail::as_batched(OpKind::Matmul, v.shape(), a.shape(), bv, mv, d);
  if (ba != bv || m != mv || a.shape().size() != v.shape().size()) {
    detail::shape_fail(OpKind::Matmul, a.shape(), v.shape());
  }
  Shape so = a.shape().size() == 3 ? Shape{ba, n, d} : Shape{n, d};
  Tensor out(so);
  for (std::size_t t = 0; t < ba; ++t) {
    detail::MapMatrix(out.ptr() + t * n * d, n, d).noalias() =
        detail::ConstMapMatrix(a.value().ptr() + t * n * m, n, m) *
        detail::ConstMapMatrix(v.value().ptr() + t * m * d, m, d);
  }
  return g.record(OpKind::Matmul, {a.id, v.id}, std::move(out),
                  [ia = a.id, iv = v.id, ba, n, m, d](Graph& g, const Tensor& go) {
                    Tensor* ga = g.grad_slot(ia);
                    Tensor* gv = g.grad_slot(iv);
                    for (std::size_t t = 0; t < ba; ++t) {
                      detail::ConstMapMatrix dy(go.ptr() + t * n * d, n, d);
                      if (ga) {
                        detail::MapMatrix(ga->ptr() + t * n * m, n, m).noalias() +=
                            dy * detail::ConstMapMatrix(g.value(iv).ptr() + t * m * d, m, d).transpose();
                      }
                      if (gv) {
                        detail::MapMatrix(gv->ptr() + t * m * d, m, d).noalias() +=
                            detail::ConstMapMatrix(g.value(ia).ptr() + t * n * m, n, m).transpose() * dy;
                      }
                    }
                  });
}

// Concatenation along `axis`; all other dimensions must agree.
inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph& g = *parts.front().graph;
  const Shape& s0 = parts.front().shape();
  if (axis >= s0.size()) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  Shape so = s0;
  so[axis] = 0;
  std::vector<NodeId> ids;
  std::vector<std::size_t> widths;
  for (Var p : parts) {
    detail::same_graph(parts.front(), p);
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t k = 0; ok && k < s.size(); ++k) ok = k == axis || s[k] == s0[k];
    if (!ok) detail::shape_fail(OpKind::Concat, s0, s);
    so[axis] += s[axis];
    ids.push_back(p.id);
    widths.push_back(s[axis]);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= s0[k];
  for (std::size_t k = axis + 1; k < s0.size(); ++k) inner *= s0[k];
  const std::size_t total = so[axis];
  Tensor out(so);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    const std::size_t w = widths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.ptr() + o * w, w, out.ptr() + o * total * inner + offset);
    }
    offset += w;
  }
  return g.record(OpKind::Concat, ids, std::move(out),
                  [ids, widths, outer, inner, total](Graph& g, const Tensor& go) {
                    std::size_t offset = 0;
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                      const std::size_t w = widths[p] * inner;
                      if (Tensor* gp = g.grad_slot(ids[p])) {
                        for (std::size_t o = 0; o < outer; ++o) {
                          const double* src = go.ptr() + o * total * inner + offset;
                          double* dst = gp->ptr() + o * w;
                          for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
                        }
                      }
                      offset += w;
                    }
                  });
}

// a[..., start:start+length, ...] along `axis`.
inline Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  Graph& g = *a.graph;
  const Shape& s = a.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " of " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= s[k];
  for (std::size_t k = axis + 1; k < s.size(); ++k) inner *= s[k];
  const std::size_t full = s[axis];
  Shape so = s;
  so[axis] = length;
  Tensor out(so);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.value().ptr() + (o * full + start) * inner, length * inner, out.ptr() + o * length * inner);
  }
  return g.record(OpKind::Slice, {a.id}, std::move(out),
                  [ia = a.id, outer, inner, full, start, length](Graph& g, const Tensor& go) {
                    Tensor* ga = g.grad_slot(ia);
                    if (!ga) return;
                    for (std::size_t o = 0; o < outer; ++o) {
                      const double* src = go.ptr() + o * length * inner;
                      double* dst = ga->ptr() + (o * full + start) * inner;
                      for (std::size_t i = 0; i < length * inner; ++i) dst[i] += src[i];
                    }
                  });
}

inline Var reshape(Var a, Shape shape) {
  Graph& g = *a.graph;
  if (shape_numel(shape) != a.value().size()) detail::shape_fail(OpKind::Reshape, a.shape(), shape);
  Tensor out = a.value().reshaped(std::move(shape));
  return g.record(OpKind::Reshape, {a.id}, std::move(out), [ia = a.id](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_slot(ia);
    if (!ga) return;
    for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
  });
}

// Repeats size-1 (or missing leading) dimensions of `a` up to `shape`.
inline Var broadcast_to(Var a, Shape shape) {
  Graph& g = *a.graph;
  detail::Broadcast plan(OpKind::BroadcastTo, a.shape(), shape);
  if (plan.out != shape) detail::shape_fail(OpKind::BroadcastTo, a.shape(), shape);
  Tensor out(shape);
  const Tensor& va = a.value();
  plan.for_each([&](std::size_t i, std::size_t ja, std::size_t) { out[i] = va[ja]; });
  return g.record(OpKind::BroadcastTo, {a.id}, std::move(out),
                  [ia = a.id, plan = std::move(plan)](Graph& g, const Tensor& go) {
                    Tensor* ga = g.grad_slot(ia);
                    if (!ga) return;
                    plan.for_each([&](std::size_t i, std::size_t ja, std::size_t) { (*ga)[ja] += go[i]; });
                  });
}

// Softmax over the last axis restricted to entries with mask != 0. Masked
// logits are pushed to -1e30 before normalising and their outputs are exact
// zeros. A row with no unmasked entry yields all zeros.
inline Var masked_softmax(Var a, const Tensor& mask) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  if (mask.shape() != x.shape()) detail::shape_fail(OpKind::MaskedSoftmax, x.shape(), mask.shape(), "mask");
  if (x.rank() == 0) throw ShapeError("masked_softmax: scalar input");
  constexpr double kMasked = -1e30;
  const std::size_t n = x.shape().back();
  const std::size_t rows = n ? x.size() / n : 0;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + r * n;
    const double* mr = mask.ptr() + r * n;
    double* yr = out.ptr() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = mr[j] != 0.0 ? xr[j] : kMasked;
      if (mr[j] != 0.0) any = true;
      mx = std::max(mx, v);
    }
    if (!any) continue;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = mr[j] != 0.0 ? xr[j] : kMasked;
      yr[j] = std::exp(v - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] = mr[j] != 0.0 ? yr[j] / z : 0.0;
  }
  const NodeId self = g.size();
  return g.record(OpKind::MaskedSoftmax, {a.id}, std::move(out), [ia = a.id, self, n, rows](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_slot(ia);
    if (!ga) return;
    const Tensor& y = g.value(self);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = y.ptr() + r * n;
      const double* gr = go.ptr() + r * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += yr[j] * gr[j];
      double* dr = ga->ptr() + r * n;
      for (std::size_t j = 0; j < n; ++j) dr[j] += yr[j] * (gr[j] - s);
    }
  });
}

// Max over `axis` among entries with mask != 0 (mask has the shape of `a`).
// Ties route the gradient to the first maximal index; a slice with no
// unmasked entry yields 0 and no gradient.
inline Var masked_max(Var a, const Tensor& mask, std::size_t axis) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  if (mask.shape() != x.shape()) detail::shape_fail(OpKind::MaskedMax, x.shape(), mask.shape(), "mask");
  if (axis >= x.rank()) throw ShapeError("masked_max: axis out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= x.dim(k);
  for (std::size_t k = axis + 1; k < x.rank(); ++k) inner *= x.dim(k);
  const std::size_t n = x.dim(axis);
  Shape so = x.shape();
  so.erase(so.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(so);
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  // Flat source index of the winner for every output element.
  std::vector<std::size_t> argmax(outer * inner, kNone);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t base = (o * n + j) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        if (mask[base + i] == 0.0) continue;
        std::size_t& best = argmax[o * inner + i];
        if (best == kNone || x[base + i] > x[best]) best = base + i;
      }
    }
  }
  for (std::size_t k = 0; k < argmax.size(); ++k) out[k] = argmax[k] == kNone ? 0.0 : x[argmax[k]];
  return g.record(OpKind::MaskedMax, {a.id}, std::move(out),
                  [ia = a.id, argmax = std::move(argmax)](Graph& g, const Tensor& go) {
                    Tensor* ga = g.grad_slot(ia);
                    if (!ga) return;
                    for (std::size_t k = 0; k < argmax.size(); ++k) {
                      if (argmax[k] != kNone) (*ga)[argmax[k]] += go[k];
                    }
                  });
}

// Max over the last axis.
inline Var masked_max(Var a, const Tensor& mask) { return masked_max(a, mask, a.value().rank() - 1); }

inline Var sum(Var a) {
  Graph& g = *a.graph;
  return g.record(OpKind::Sum, {a.id}, Tensor::scalar(a.value().sum()), [ia = a.id](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_slot(ia);
    if (!ga) return;
    const double d = go[0];
    for (double& v : ga->data()) v += d;
  });
}

inline Var mean(Var a) {
  Graph& g = *a.graph;
  const std::size_t n = a.value().size();
  return g.record(OpKind::Mean, {a.id}, Tensor::scalar(a.value().sum() / static_cast<double>(n)),
                  [ia = a.id, n](Graph& g, const Tensor& go) {
                    Tensor* ga = g.grad_slot(ia);
                    if (!ga) return;
                    const double d = go[0] / static_cast<double>(n);
                    for (double& v : ga->data()) v += d;
                  });
}

// Row lookup: table [V, E] at ids of shape S -> [S..., E].
inline Var embedding(Var table, const IndexTensor& ids) {
  Graph& g = *table.graph;
  const Shape& st = table.shape();
  if (st.size() != 2) detail::shape_fail(OpKind::Embedding, st, ids.shape, "table must be rank 2");
  if (shape_numel(ids.shape) != ids.ids.size()) throw ShapeError("embedding: index tensor shape/data mismatch");
  const std::size_t vocab = st[0];
  const std::size_t e = st[1];
  Shape so = ids.shape;
  so.push_back(e);
  Tensor out(so);
  for (std::size_t i = 0; i < ids.ids.size(); ++i) {
    if (ids.ids[i] >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(ids.ids[i]) + " outside table of " + std::to_string(vocab));
    }
    std::copy_n(table.value().ptr() + ids.ids[i] * e, e, out.ptr() + i * e);
  }
  return g.record(OpKind::Embedding, {table.id}, std::move(out), [it = table.id, ids, e](Graph& g, const Tensor& go) {
    Tensor* gt = g.grad_slot(it);
    if (!gt) return;
    for (std::size_t i = 0; i < ids.ids.size(); ++i) {
      double* dst = gt->ptr() + ids.ids[i] * e;
      const double* src = go.ptr() + i * e;
      for (std::size_t k = 0; k < e; ++k) dst[k] += src[k];
    }
  });
}

// a [R, N] at one index per row -> [R].
inline Var pick(Var a, const std::vector<std::size_t>& index) {
  Graph& g = *a.graph;
  const Shape& s = a.shape();
  if (s.size() != 2 || s[0] != index.size()) detail::shape_fail(OpKind::Pick, s, Shape{index.size()});
  const std::size_t n = s[1];
  Tensor out(Shape{index.size()});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= n) throw ShapeError("pick: index " + std::to_string(index[r]) + " outside " + shape_str(s));
    out[r] = a.value()[r * n + index[r]];
  }
  return g.record(OpKind::Pick, {a.id}, std::move(out), [ia = a.id, index, n](Graph& g, const Tensor& go) {
    Tensor* ga = g.grad_slot(ia);
    if (!ga) return;
    for (std::size_t r = 0; r < index.size(); ++r) (*ga)[r * n + index[r]] += go[r];
  });
}

// Light recurrence of the SRU cell over [B, L, d] inputs:
//   c_t = f_t * c_{t-1} + (1 - f_t) * xt_t,  c_{-1} = 0.
// Steps with mask 0 carry c_{t-1} through unchanged. `reverse` walks time
// from L-1 down to 0. Returns the cell states c.
inline Var sru_recurrence(Var xt, Var forget, const Tensor& mask, bool reverse) {
  Graph& g = detail::same_graph(xt, forget);
  const Shape& s = xt.shape();
  if (s.size() != 3 || forget.shape() != s) detail::shape_fail(OpKind::SruRecurrence, s, forget.shape());
  const std::size_t batch = s[0], len = s[1], d = s[2];
  if (mask.shape() != Shape{batch, len}) detail::shape_fail(OpKind::SruRecurrence, s, mask.shape(), "mask");
  Tensor out(s);
  const Tensor& x = xt.value();
  const Tensor& f = forget.value();
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<double> c(d, 0.0);
    for (std::size_t step = 0; step < len; ++step) {
      const std::size_t t = reverse ? len - 1 - step : step;
      const std::size_t base = (b * len + t) * d;
      if (mask[b * len + t] != 0.0) {
        for (std::size_t k = 0; k < d; ++k) c[k] = f[base + k] * c[k] + (1.0 - f[base + k]) * x[base + k];
      }
      std::copy(c.begin(), c.end(), out.ptr() + base);
    }
  }
  const NodeId self = g.size();
  return g.record(
      OpKind::SruRecurrence, {xt.id, forget.id}, std::move(out),
      [ix = xt.id, iff = forget.id, self, mask, reverse, batch, len, d](Graph& g, const Tensor& go) {
        Tensor* gx = g.grad_slot(ix);
        Tensor* gf = g.grad_slot(iff);
        const Tensor& x = g.value(ix);
        const Tensor& f = g.value(iff);
        const Tensor& c = g.value(self);
        for (std::size_t b = 0; b < batch; ++b) {
          // dc carries d loss / d c_t back through time.
          std::vector<double> dc(d, 0.0);
          for (std::size_t step = len; step-- > 0;) {
            const std::size_t t = reverse ? len - 1 - step : step;
            const std::size_t base = (b * len + t) * d;
            for (std::size_t k = 0; k < d; ++k) dc[k] += go[base + k];
            if (mask[b * len + t] == 0.0) continue;
            const bool first = step == 0;
            const std::size_t prev = reverse ? base + d : base - d;
            for (std::size_t k = 0; k < d; ++k) {
              const double c_prev = first ? 0.0 : c[prev + k];
              if (gx) (*gx)[base + k] += dc[k] * (1.0 - f[base + k]);
              if (gf) (*gf)[base + k] += dc[k] * (c_prev - x[base + k]);
              dc[k] *= f[base + k];
            }
          }
        }
      });
}

}  // namespace ops

inline Var operator+(Var a, Var b) { return ops::add(a, b); }
inline Var operator-(Var a, Var b) { return ops::sub(a, b); }
inline Var operator*(Var a, Var b) { return ops::mul(a, b); }

}  // namespace a3net
