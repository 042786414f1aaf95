#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "a3net/autodiff.hpp"
#include "a3net/error.hpp"

namespace a3net {

// Scalar function of one tensor, built on a fresh graph. The returned Var
// must be a scalar node of that graph.
using ScalarFn = std::function<Var(Graph&, Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline double evaluate_scalar(const ScalarFn& f, const Tensor& x) {
  Graph g;
  Var loss = f(g, g.leaf(x));
  if (!loss.value().is_scalar()) throw ShapeError("finite_diff_check: function must return a scalar");
  return loss.value().item();
}

inline Tensor analytic_gradient(const ScalarFn& f, const Tensor& x) {
  Graph g;
  Var input = g.leaf(x);
  Var loss = f(g, input);
  return g.backward(loss).wrt(input);
}

// Central differences against the reverse-mode gradient. The relative error
// per coordinate uses max(|analytic|, |numeric|, 1e-8) as denominator.
inline GradCheckResult finite_diff_check_detailed(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw Error("finite_diff_check: step must be positive");
  const double first = evaluate_scalar(f, x);
  const double second = evaluate_scalar(f, x);
  if (first != second && !(std::isnan(first) && std::isnan(second))) {
    throw Error("finite_diff_check: function is not deterministic");
  }
  const Tensor analytic = analytic_gradient(f, x);
  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = evaluate_scalar(f, probe);
    probe[i] = x[i] - h;
    const double down = evaluate_scalar(f, probe);
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > result.max_rel_error || i == 0) {
      result.max_rel_error = std::max(result.max_rel_error, rel);
      result.worst_index = i;
      result.analytic = analytic[i];
      result.numeric = numeric;
    }
  }
  return result;
}

inline double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  return finite_diff_check_detailed(f, x, h).max_rel_error;
}

}  // namespace a3net
