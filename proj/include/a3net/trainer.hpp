#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "a3net/adversarial.hpp"
#include "a3net/data.hpp"
#include "a3net/error.hpp"
#include "a3net/metrics.hpp"
#include "a3net/model.hpp"
#include "a3net/optimizer.hpp"
#include "a3net/rng.hpp"

namespace a3net {

struct TrainConfig {
  std::size_t batch_size = 64;
  double learning_rate = 0.1;
  double rho = 0.95;
  double eps_opt = 1e-6;
  double dropout = 0.2;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
    if (!(rho > 0.0 && rho < 1.0)) throw UsageError("rho must be in (0, 1)");
    if (!(eps_opt > 0.0)) throw UsageError("eps_opt must be positive");
    if (dropout < 0.0 || dropout > 1.0) throw UsageError("dropout must be in [0, 1]");
  }

  // Minibatch 64, learning rate 0.1.
  static TrainConfig paper() { return {}; }

  // Minibatch 8, learning rate 1.0, 50 epochs.
  static TrainConfig desk() {
    TrainConfig c;
    c.batch_size = 8;
    c.learning_rate = 1.0;
    c.epochs = 50;
    return c;
  }

  AdaDelta::Options optimizer() const { return {learning_rate, rho, eps_opt}; }

  bool operator==(const TrainConfig&) const = default;
};

struct StepResult {
  double clean_loss = 0.0;
  double adv_loss = 0.0;
};

// Perturbation for one target given the clean trace and its backward pass.
inline Tensor make_perturbation(const ForwardTrace& trace, const Gradients& grads, const AdvTarget& target,
                                AdvMode mode, Rng& noise_rng) {
  Var x = trace.variable(target.name);
  const Tensor& positions = trace.position_masks.at(target.name);
  if (mode == AdvMode::GaussianNoise) {
    return gaussian_noise_perturbation(x.value(), target.epsilon, noise_rng, positions);
  }
  return adversarial_perturbation(x.value(), grads.wrt(x), target.epsilon, positions);
}

// Random number streams of one training run.
struct TrainRngs {
  Rng shuffle;
  Rng dropout;
  Rng noise;

  explicit TrainRngs(std::uint64_t seed)
      : shuffle(Rng(seed).fork(1)), dropout(Rng(seed).fork(2)), noise(Rng(seed).fork(3)) {}
};

// One optimizer step:
//   1. clean forward (dropout masks recorded) -> L
//   2. backward on L: parameter gradients and g for every target
//   3. perturbations for all targets
//   4. one forward with all perturbations injected and the same dropout
//      masks -> L_adv, and its backward
//   5. AdaDelta update on the summed gradients of L + L_adv
inline StepResult train_step(Model& model, const Batch& batch, const TrainConfig& cfg, const AdvConfig& adv,
                             AdaDelta& opt, TrainRngs& rngs) {
  DropoutMasks dropout(cfg.dropout, rngs.dropout);
  ForwardOptions fo;
  fo.training = true;
  fo.dropout = &dropout;
  ForwardTrace clean = forward(model.dims, model.params, batch, fo);
  Var loss = span_loss(clean, batch);
  StepResult result;
  result.clean_loss = loss.value().item();
  if (!std::isfinite(result.clean_loss)) throw NumericError("training loss is not finite");
  const Gradients clean_grads = clean.graph->backward(loss);
  std::vector<Tensor> grads = clean.params->gradients(clean_grads);

  if (adv.active()) {
    ForwardOptions ao;
    ao.training = true;
    ao.dropout = &dropout;
    for (const auto& target : adv.targets) {
      ao.injections.push_back({target.name, make_perturbation(clean, clean_grads, target, adv.mode, rngs.noise)});
    }
    dropout.replay();
    ForwardTrace perturbed = forward(model.dims, model.params, batch, ao);
    Var adv_loss = span_loss(perturbed, batch);
    result.adv_loss = adv_loss.value().item();
    if (!std::isfinite(result.adv_loss)) throw NumericError("adversarial loss is not finite");
    const auto adv_grads = perturbed.params->gradients(perturbed.graph->backward(adv_loss));
    for (std::size_t p = 0; p < grads.size(); ++p) grads[p] += adv_grads[p];
  }
  opt.step(model.params, grads);
  return result;
}

struct HistoryRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double clean_loss = 0.0;
  double adv_loss = 0.0;
  std::optional<double> valid_strict;
  std::optional<double> valid_fuzzy;
};

inline void write_history_csv(std::ostream& out, const std::vector<HistoryRow>& rows) {
  out << "step,epoch,clean_loss,adv_loss,valid_strict,valid_fuzzy\n";
  std::ostringstream os;
  os.precision(17);
  for (const auto& r : rows) {
    os.str("");
    os << r.step << ',' << r.epoch << ',' << r.clean_loss << ',' << r.adv_loss << ',';
    if (r.valid_strict) os << *r.valid_strict;
    os << ',';
    if (r.valid_fuzzy) os << *r.valid_fuzzy;
    out << os.str() << '\n';
  }
}

struct TrainResult {
  ParamStore final_params;
  ParamStore best_params;
  std::size_t best_epoch = 0;
  double best_valid_fuzzy = -1.0;
  std::vector<HistoryRow> history;
  std::vector<EvalResult> valid_scores;  // one per epoch (empty without a validation set)
};

struct TrainLoopOptions {
  // Called after each epoch with (epoch, rows of that epoch); used for logging.
  std::function<void(std::size_t, const HistoryRow&)> on_epoch;
};

// Shuffled minibatch training for cfg.epochs epochs. Deterministic in
// cfg.seed. Keeps the parameters with the best validation fuzzy score
// (earliest epoch on ties); without a validation set the final parameters.
inline TrainResult train_loop(Model& model, const std::vector<Example>& train, const std::vector<Example>& valid,
                              const SynonymTable& synonyms, const TrainConfig& cfg, const AdvConfig& adv,
                              const TrainLoopOptions& options = {}) {
  if (train.empty()) throw DataError("train_loop: empty training set");
  cfg.validate();
  adv.validate();
  TrainRngs rngs(cfg.seed);
  AdaDelta opt(model.params, cfg.optimizer());
  TrainResult result;
  result.best_params = model.params;
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rngs.shuffle.shuffle(order);
    for (std::size_t i = 0; i < order.size(); i += cfg.batch_size) {
      std::vector<Example> chunk;
      for (std::size_t k = i; k < std::min(order.size(), i + cfg.batch_size); ++k) chunk.push_back(train[order[k]]);
      const Batch batch = encode_and_batch(chunk, model.vocab, model.dims.max_word_len);
      const StepResult sr = train_step(model, batch, cfg, adv, opt, rngs);
      result.history.push_back(HistoryRow{++step, epoch, sr.clean_loss, sr.adv_loss, std::nullopt, std::nullopt});
    }
    if (!valid.empty()) {
      const EvalResult er = evaluate_dataset(model, valid, synonyms);
      result.valid_scores.push_back(er);
      result.history.back().valid_strict = er.strict.f1;
      result.history.back().valid_fuzzy = er.fuzzy.f1;
      if (er.fuzzy.f1 > result.best_valid_fuzzy) {
        result.best_valid_fuzzy = er.fuzzy.f1;
        result.best_epoch = epoch;
        result.best_params = model.params;
      }
    }
    if (options.on_epoch) options.on_epoch(epoch, result.history.back());
  }
  result.final_params = model.params;
  if (valid.empty()) {
    result.best_params = model.params;
    result.best_epoch = cfg.epochs;
  }
  return result;
}

// Loss of a clean batch after perturbing one target (no dropout): the
// adversarial direction or Gaussian noise, each rescaled to eps * ||X|| per
// row.
struct ProbeResult {
  double clean_loss = 0.0;
  double perturbed_loss = 0.0;
};

inline ProbeResult perturbed_loss_probe(const Model& model, const Batch& batch, const AdvTarget& target, AdvMode mode,
                                        Rng& rng) {
  ForwardTrace clean = forward(model.dims, model.params, batch);
  Var loss = span_loss(clean, batch);
  const Gradients grads = clean.graph->backward(loss);
  ForwardOptions fo;
  fo.injections.push_back({target.name, make_perturbation(clean, grads, target, mode, rng)});
  ForwardTrace perturbed = forward(model.dims, model.params, batch, fo);
  return {loss.value().item(), span_loss(perturbed, batch).value().item()};
}

}  // namespace a3net
