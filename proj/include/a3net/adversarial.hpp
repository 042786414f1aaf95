#pragma once

// Norm-scaled perturbations of intermediate variables.
//
// For a target X with cost gradient g, the adversarial perturbation is
//   r_adv = eps * ||X|| * g / ||g||
// with norms taken per batch row over that row's real positions, so each
// sample gets its own scale. The Gaussian control draws n ~ N(0, I) and
// rescales it to the same norm.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "a3net/error.hpp"
#include "a3net/rng.hpp"
#include "a3net/tensor.hpp"

namespace a3net {

enum class AdvMode { Adversarial, GaussianNoise, Off };

inline std::string to_string(AdvMode mode) {
  switch (mode) {
    case AdvMode::Adversarial: return "adversarial";
    case AdvMode::GaussianNoise: return "noise";
    case AdvMode::Off: return "off";
  }
  return "off";
}

inline AdvMode parse_adv_mode(const std::string& s) {
  if (s == "adversarial") return AdvMode::Adversarial;
  if (s == "noise" || s == "gaussian_noise") return AdvMode::GaussianNoise;
  if (s == "off") return AdvMode::Off;
  throw UsageError("unknown adversarial mode '" + s + "' (expected adversarial, noise or off)");
}

struct AdvTarget {
  std::string name;
  double epsilon = 0.0;

  bool operator==(const AdvTarget&) const = default;
};

// Variables accepted as adversarial targets.
inline const std::vector<std::string>& adversarial_targets() {
  static const std::vector<std::string> names = {"w_P", "u_P", "u_hat_P", "v_hat_P1", "v_hat_P", "h_hat_P"};
  return names;
}

struct AdvConfig {
  std::vector<AdvTarget> targets;
  AdvMode mode = AdvMode::Off;

  void validate() const {
    const auto& names = adversarial_targets();
    for (const auto& t : targets) {
      if (std::find(names.begin(), names.end(), t.name) == names.end()) {
        throw UsageError("'" + t.name + "' is not an adversarial target");
      }
      if (!(t.epsilon > 0.0)) throw UsageError("epsilon for '" + t.name + "' must be positive");
    }
  }

  bool active() const { return mode != AdvMode::Off && !targets.empty(); }

  bool operator==(const AdvConfig&) const = default;
};

// "name=epsilon"
inline AdvTarget parse_adv_target(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw UsageError("adversarial target '" + spec + "' must look like NAME=EPSILON");
  AdvTarget t{spec.substr(0, eq), 0.0};
  try {
    std::size_t used = 0;
    t.epsilon = std::stod(spec.substr(eq + 1), &used);
    if (used != spec.size() - eq - 1) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw UsageError("bad epsilon in adversarial target '" + spec + "'");
  }
  return t;
}

inline constexpr double kMinGradNorm = 1e-12;

namespace detail {

// Calls fn(row, begin, end) over the flat ranges of X belonging to each batch
// row's real positions. `positions` is a 0/1 mask whose shape is a prefix of
// X's shape; an empty mask treats the whole tensor as one row.
template <typename Fn>
void for_each_row_segment(const Tensor& x, const Tensor* positions, Fn&& fn) {
  if (!positions) {
    fn(std::size_t{0}, std::size_t{0}, x.size());
    return;
  }
  const Shape& ps = positions->shape();
  if (ps.empty() || ps.size() > x.rank() || !std::equal(ps.begin(), ps.end(), x.shape().begin())) {
    throw ShapeError("perturbation: position mask " + shape_str(ps) + " is not a prefix of " + shape_str(x.shape()));
  }
  const std::size_t inner = x.size() / positions->size();
  const std::size_t per_row = positions->size() / ps[0];
  for (std::size_t p = 0; p < positions->size(); ++p) {
    if ((*positions)[p] != 0.0) fn(p / per_row, p * inner, (p + 1) * inner);
  }
}

inline std::vector<double> row_norms(const Tensor& x, const Tensor* positions, std::size_t rows) {
  std::vector<double> sq(rows, 0.0);
  for_each_row_segment(x, positions, [&](std::size_t row, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) sq[row] += x[i] * x[i];
  });
  for (double& v : sq) v = std::sqrt(v);
  return sq;
}

inline std::size_t row_count(const Tensor* positions) { return positions ? positions->dim(0) : 1; }

// eps * ||X_row|| * dir / ||dir_row|| on real positions, zero elsewhere and
// on rows where ||dir_row|| < 1e-12.
inline Tensor rescale_direction(const Tensor& x, const Tensor& dir, double epsilon, const Tensor* positions) {
  if (x.shape() != dir.shape()) {
    throw ShapeError("perturbation: target " + shape_str(x.shape()) + " vs direction " + shape_str(dir.shape()));
  }
  const std::size_t rows = row_count(positions);
  const auto x_norm = row_norms(x, positions, rows);
  const auto d_norm = row_norms(dir, positions, rows);
  Tensor r(x.shape());
  for_each_row_segment(x, positions, [&](std::size_t row, std::size_t begin, std::size_t end) {
    if (d_norm[row] < kMinGradNorm) return;
    const double factor = epsilon * x_norm[row] / d_norm[row];
    for (std::size_t i = begin; i < end; ++i) r[i] = factor * dir[i];
  });
  return r;
}

}  // namespace detail

// Whole tensor treated as one sample.
inline Tensor adversarial_perturbation(const Tensor& x, const Tensor& grad, double epsilon) {
  return detail::rescale_direction(x, grad, epsilon, nullptr);
}

// Per batch row over the real positions given by `positions`.
inline Tensor adversarial_perturbation(const Tensor& x, const Tensor& grad, double epsilon, const Tensor& positions) {
  return detail::rescale_direction(x, grad, epsilon, &positions);
}

inline Tensor gaussian_noise_perturbation(const Tensor& x, double epsilon, Rng& rng) {
  Tensor n(x.shape());
  for (double& v : n.data()) v = rng.normal();
  return detail::rescale_direction(x, n, epsilon, nullptr);
}

inline Tensor gaussian_noise_perturbation(const Tensor& x, double epsilon, Rng& rng, const Tensor& positions) {
  Tensor n(x.shape());
  for (double& v : n.data()) v = rng.normal();
  return detail::rescale_direction(x, n, epsilon, &positions);
}

}  // namespace a3net
