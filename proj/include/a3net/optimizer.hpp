#pragma once

#include <cmath>
#include <vector>

#include "a3net/error.hpp"
#include "a3net/params.hpp"
#include "a3net/tensor.hpp"

namespace a3net {

// AdaDelta with a learning-rate multiplier on the step:
//   E[g^2]  <- rho E[g^2] + (1 - rho) g^2
//   dx      =  sqrt(E[dx^2] + eps) / sqrt(E[g^2] + eps) * g
//   E[dx^2] <- rho E[dx^2] + (1 - rho) dx^2
//   theta   <- theta - lr * dx
class AdaDelta {
 public:
  struct Options {
    double learning_rate = 0.1;
    double rho = 0.95;
    double eps = 1e-6;
  };

  AdaDelta() = default;
  AdaDelta(const ParamStore& params, Options options) : options_(options) {
    if (!(options.rho > 0.0 && options.rho < 1.0)) throw UsageError("adadelta: rho must be in (0, 1)");
    if (!(options.eps > 0.0)) throw UsageError("adadelta: eps must be positive");
    if (!(options.learning_rate > 0.0)) throw UsageError("adadelta: learning rate must be positive");
    for (const auto& e : params.entries()) {
      square_avg_.emplace_back(e.value.shape());
      acc_delta_.emplace_back(e.value.shape());
    }
  }

  void step(ParamStore& params, const std::vector<Tensor>& grads) {
    auto& entries = params.entries();
    if (grads.size() != entries.size() || square_avg_.size() != entries.size()) {
      throw Error("adadelta: gradient count does not match parameters");
    }
    const double rho = options_.rho, eps = options_.eps, lr = options_.learning_rate;
    for (std::size_t p = 0; p < entries.size(); ++p) {
      Tensor& theta = entries[p].value;
      const Tensor& g = grads[p];
      Tensor& sq = square_avg_[p];
      Tensor& acc = acc_delta_[p];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        sq[i] = rho * sq[i] + (1.0 - rho) * g[i] * g[i];
        const double dx = std::sqrt(acc[i] + eps) / std::sqrt(sq[i] + eps) * g[i];
        acc[i] = rho * acc[i] + (1.0 - rho) * dx * dx;
        theta[i] -= lr * dx;
      }
    }
    ++steps_;
  }

  std::size_t steps() const { return steps_; }
  const Options& options() const { return options_; }

 private:
  Options options_;
  std::vector<Tensor> square_avg_;
  std::vector<Tensor> acc_delta_;
  std::size_t steps_ = 0;
};

}  // namespace a3net
