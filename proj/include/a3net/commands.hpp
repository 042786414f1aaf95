#pragma once

// Command implementations behind the a3net CLI. Each takes a resolved
// RunConfig, writes its artifacts under cfg.out_dir and logs to `log`.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "a3net/checkpoint.hpp"
#include "a3net/config.hpp"
#include "a3net/data.hpp"
#include "a3net/hash.hpp"
#include "a3net/metrics.hpp"
#include "a3net/model.hpp"
#include "a3net/trainer.hpp"

namespace a3net {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create directory '" + dir + "': " + ec.message());
}

inline std::string join_path(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << text;
}

inline std::string dataset_hash(const std::vector<Example>& examples) {
  std::ostringstream os;
  write_jsonl(os, examples);
  return hash_hex(os.str());
}

// --- gen-data ------------------------------------------------------------

struct GenDataOutput {
  std::string train, valid, test, synonyms;
};

inline GenDataOutput cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  if (cfg.num_examples == 0) throw UsageError("gen-data: number of examples must be positive");
  ensure_dir(cfg.out_dir);
  const auto corpus = generate_synthetic_corpus(cfg.seed(), cfg.num_examples);
  const Splits s = split_corpus(corpus);
  GenDataOutput out{join_path(cfg.out_dir, "train.jsonl"), join_path(cfg.out_dir, "valid.jsonl"),
                    join_path(cfg.out_dir, "test.jsonl"), join_path(cfg.out_dir, "synonyms.tsv")};
  save_jsonl(out.train, s.train);
  save_jsonl(out.valid, s.valid);
  save_jsonl(out.test, s.test);
  save_synonyms(out.synonyms, synthetic_synonyms());
  log << "wrote " << s.train.size() << "/" << s.valid.size() << "/" << s.test.size() << " examples to " << cfg.out_dir
      << " (seed " << cfg.seed() << ")\n";
  return out;
}

// --- datasets ------------------------------------------------------------

struct Dataset {
  std::vector<Example> train, valid, test;
  SynonymTable synonyms;

  // Hashes of the loaded splits.
  nlohmann::json split_hashes() const {
    nlohmann::json j = {{"train", dataset_hash(train)}, {"valid", dataset_hash(valid)}};
    if (!test.empty()) j["test"] = dataset_hash(test);
    return j;
  }
};

inline Dataset load_dataset(const RunConfig& cfg, bool need_test) {
  Dataset d;
  d.train = load_jsonl(cfg.train_file());
  d.valid = load_jsonl(cfg.valid_file());
  if (need_test) d.test = load_jsonl(cfg.test_file());
  d.synonyms = load_synonyms(cfg.synonyms_file());
  if (d.train.empty()) throw DataError("training split is empty");
  return d;
}

// --- train ---------------------------------------------------------------

struct RunOutcome {
  Model model;  // best-validation parameters
  TrainResult result;
};

// One training run on prepared data; the vocabulary comes from the training
// split and the model is initialised from the run seed.
inline RunOutcome run_training(const RunConfig& cfg, const Dataset& data, const TrainLoopOptions& options = {}) {
  validate(cfg);
  ModelDims dims = cfg.dims;
  Model model = make_model(dims, build_vocab(data.train), cfg.seed());
  TrainResult result = train_loop(model, data.train, data.valid, data.synonyms, cfg.train, cfg.adv, options);
  model.params = result.best_params;
  return {std::move(model), std::move(result)};
}

struct TrainOutput {
  std::string checkpoint, history, report;
};

inline TrainOutput cmd_train(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  const Dataset data = load_dataset(cfg, false);
  ensure_dir(cfg.out_dir);
  TrainLoopOptions options;
  options.on_epoch = [&](std::size_t epoch, const HistoryRow& row) {
    log << "epoch " << epoch << " step " << row.step << " clean_loss " << row.clean_loss << " adv_loss "
        << row.adv_loss;
    if (row.valid_fuzzy) log << " valid_strict " << *row.valid_strict << " valid_fuzzy " << *row.valid_fuzzy;
    log << '\n';
  };
  const RunOutcome run = run_training(cfg, data, options);
  TrainOutput out{join_path(cfg.out_dir, "model.ckpt"), join_path(cfg.out_dir, "history.csv"),
                  join_path(cfg.out_dir, "train_report.json")};
  save_checkpoint(out.checkpoint, run.model);
  {
    std::ofstream h(out.history, std::ios::binary);
    if (!h) throw UsageError("cannot write '" + out.history + "'");
    write_history_csv(h, run.result.history);
  }
  nlohmann::json report = {{"config_hash", config_hash(cfg)},
                           {"seed", cfg.seed()},
                           {"profile", to_string(cfg.profile)},
                           {"adv_mode", to_string(cfg.adv.mode)},
                           {"steps", run.result.history.size()},
                           {"best_epoch", run.result.best_epoch},
                           {"best_valid_fuzzy", run.result.best_valid_fuzzy},
                           {"split_hashes", data.split_hashes()},
                           {"checkpoint_hash", hash_file(out.checkpoint)}};
  write_text(out.report, report.dump(2) + "\n");
  log << "best epoch " << run.result.best_epoch << " valid fuzzy " << run.result.best_valid_fuzzy << "; wrote "
      << out.checkpoint << "\n";
  return out;
}

// --- eval / predict --------------------------------------------------------

inline std::string eval_report_text(const std::string& label, const EvalResult& r) {
  return eval_table({{label, r}});
}

inline nlohmann::json eval_report_json(const EvalResult& r, const std::string& checkpoint_hash,
                                       const std::string& data_hash, std::uint64_t seed) {
  nlohmann::json j = eval_to_json(r);
  j["checkpoint_hash"] = checkpoint_hash;
  j["dataset_hash"] = data_hash;
  j["seed"] = seed;
  return j;
}

inline EvalResult cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& dataset,
                           std::ostream& log) {
  const Model model = load_checkpoint(checkpoint);
  const auto examples = load_jsonl(dataset);
  const SynonymTable table = cfg.synonyms_path.empty() && cfg.data_dir.empty() ? SynonymTable{}
                                                                               : load_synonyms(cfg.synonyms_file());
  const EvalResult r = evaluate_dataset(model, examples, table);
  const std::string text = eval_report_text(std::filesystem::path(dataset).filename().string(), r);
  log << text;
  if (!cfg.out_dir.empty() && cfg.out_dir != ".") {
    ensure_dir(cfg.out_dir);
    write_text(join_path(cfg.out_dir, "eval.txt"), text);
    write_text(join_path(cfg.out_dir, "eval.json"),
               eval_report_json(r, hash_file(checkpoint), dataset_hash(examples), cfg.seed()).dump(2) + "\n");
  }
  return r;
}

inline nlohmann::json prediction_to_json(const Prediction& p) {
  return {{"id", p.id}, {"answer_text", p.answer_text}, {"start", p.start}, {"end", p.end}, {"score", p.score}};
}

inline std::vector<Prediction> cmd_predict(const std::string& checkpoint, const std::string& dataset,
                                           std::ostream& out) {
  const Model model = load_checkpoint(checkpoint);
  const auto predictions = predict(model, load_jsonl(dataset));
  for (const auto& p : predictions) out << prediction_to_json(p).dump() << '\n';
  return predictions;
}

// --- gradcheck -------------------------------------------------------------

// Two-example batch over a five-symbol vocabulary (PAD, UNK and three chars).
inline std::vector<Example> gradcheck_examples() {
  return {{"g0", {"ab", "c"}, {"ca", "b", "abc"}, 1, 2, "b abc"}, {"g1", {"b", "ac"}, {"a", "cb", "bb"}, 0, 0, "a"}};
}

struct GradCheckReport {
  ModelGradCheck worst;
  std::vector<ModelGradCheck> per_seed;
};

// Full-loss check of a d=2 model at parameter points drawn uniformly from
// [-1, 1], one point per seed.
inline GradCheckReport full_model_gradcheck(std::uint64_t seed, std::size_t points, double h,
                                            bool extrapolate = true) {
  const auto examples = gradcheck_examples();
  const Vocab vocab = build_vocab(examples);
  ModelDims dims;
  dims.vocab_size = vocab.size();
  dims.embed_dim = 4;
  dims.hidden = 2;
  dims.encoder_layers = 2;
  dims.fusion_layers = 2;
  dims.max_word_len = 4;
  const Batch batch = encode_and_batch(examples, vocab, dims.max_word_len);
  GradCheckReport report;
  for (std::size_t k = 0; k < points; ++k) {
    ParamStore params = init_params(dims, seed + k);
    Rng rng = Rng(seed + k).fork(7);
    for (auto& e : params.entries()) {
      for (double& v : e.value.data()) v = rng.uniform(-1.0, 1.0);
    }
    report.per_seed.push_back(model_gradient_check(dims, params, batch, h, 1e-8, extrapolate));
    if (k == 0 || report.per_seed.back().max_rel_error > report.worst.max_rel_error) {
      report.worst = report.per_seed.back();
    }
  }
  return report;
}

inline constexpr double kGradCheckTolerance = 1e-4;

inline GradCheckReport cmd_gradcheck(const RunConfig& cfg, std::ostream& log) {
  const GradCheckReport r = full_model_gradcheck(cfg.seed(), 3, 1e-3);
  for (std::size_t k = 0; k < r.per_seed.size(); ++k) {
    const auto& c = r.per_seed[k];
    log << "point " << k << ": " << c.entries << " entries, max relative error " << c.max_rel_error << " at "
        << c.worst_param << "[" << c.worst_index << "]\n";
  }
  if (!(r.worst.max_rel_error < kGradCheckTolerance)) {
    throw NumericError("gradient check failed: max relative error " + std::to_string(r.worst.max_rel_error));
  }
  log << "gradient check passed (tolerance " << kGradCheckTolerance << ")\n";
  return r;
}

// --- ablate / sweep-eps ----------------------------------------------------

// Default intensity per target: larger for the embedding-level variables.
inline double default_epsilon(const std::string& target) {
  if (target == "w_P" || target == "u_P" || target == "u_hat_P") return 2e-4;
  return 0.5e-4;
}

struct RunSpec {
  std::string label;
  RunConfig cfg;
};

struct RunScore {
  std::string label;
  std::uint64_t seed = 0;
  EvalResult test;
  std::size_t best_epoch = 0;
};

// Trains every spec and scores the best-validation model on the test split.
// Specs run on `workers` threads; results keep the order of `specs`.
inline std::vector<RunScore> run_all(const std::vector<RunSpec>& specs, const Dataset& data, std::size_t workers,
                                     std::ostream& log) {
  std::vector<RunScore> scores(specs.size());
  std::vector<std::exception_ptr> errors(specs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      try {
        const RunOutcome run = run_training(specs[i].cfg, data);
        scores[i] = {specs[i].label, specs[i].cfg.seed(), evaluate_dataset(run.model, data.test, data.synonyms),
                     run.result.best_epoch};
        std::lock_guard<std::mutex> lock(log_mutex);
        log << specs[i].label << " seed " << specs[i].cfg.seed() << ": test fuzzy " << scores[i].test.fuzzy.f1
            << " strict " << scores[i].test.strict.f1 << " (best epoch " << scores[i].best_epoch << ")\n";
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(workers, specs.size()); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return scores;
}

struct Summary {
  double mean = 0.0;
  double std_error = 0.0;
};

inline Summary summarize(const std::vector<double>& xs) {
  Summary s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std_error = std::sqrt(ss / static_cast<double>(xs.size() - 1)) / std::sqrt(static_cast<double>(xs.size()));
  }
  return s;
}

inline RunConfig with_adv(RunConfig cfg, AdvMode mode, std::vector<AdvTarget> targets, std::uint64_t seed) {
  cfg.adv.mode = mode;
  cfg.adv.targets = std::move(targets);
  cfg.train.seed = seed;
  return cfg;
}

inline double epsilon_for(const RunConfig& cfg, const std::string& target) {
  for (const auto& t : cfg.adv.targets) {
    if (t.name == target) return t.epsilon;
  }
  return default_epsilon(target);
}

// Rows: off, noise on the joint pair, each single target, joint (w_P, v_hat_P).
inline std::vector<RunSpec> ablation_specs(const RunConfig& cfg) {
  const std::vector<AdvTarget> joint = {{"w_P", epsilon_for(cfg, "w_P")}, {"v_hat_P", epsilon_for(cfg, "v_hat_P")}};
  std::vector<std::pair<std::string, std::pair<AdvMode, std::vector<AdvTarget>>>> rows;
  rows.push_back({"off", {AdvMode::Off, {}}});
  rows.push_back({"noise (w_P, v_hat_P)", {AdvMode::GaussianNoise, joint}});
  for (const auto& name : adversarial_targets()) {
    rows.push_back({name, {AdvMode::Adversarial, {{name, epsilon_for(cfg, name)}}}});
  }
  rows.push_back({"w_P + v_hat_P", {AdvMode::Adversarial, joint}});
  std::vector<RunSpec> specs;
  for (const auto& [label, adv] : rows) {
    for (std::size_t k = 0; k < cfg.seeds; ++k) {
      specs.push_back({label, with_adv(cfg, adv.first, adv.second, cfg.seed() + k)});
    }
  }
  return specs;
}

struct SummaryRow {
  std::string label;
  Summary strict;
  Summary fuzzy;
  std::vector<double> fuzzy_per_seed;
};

inline std::vector<SummaryRow> summarize_rows(const std::vector<RunScore>& scores) {
  std::vector<SummaryRow> rows;
  for (const auto& s : scores) {
    if (rows.empty() || rows.back().label != s.label) rows.push_back({s.label, {}, {}, {}});
    rows.back().fuzzy_per_seed.push_back(s.test.fuzzy.f1);
  }
  for (auto& row : rows) {
    std::vector<double> strict;
    for (const auto& s : scores) {
      if (s.label == row.label) strict.push_back(s.test.strict.f1);
    }
    row.strict = summarize(strict);
    row.fuzzy = summarize(row.fuzzy_per_seed);
  }
  return rows;
}

inline std::string summary_table(const std::string& first_column, const std::vector<SummaryRow>& rows) {
  std::size_t width = first_column.size();
  for (const auto& r : rows) width = std::max(width, r.label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << first_column << " | Strict score     | Fuzzy score\n";
  os << std::string(width, '-') << "-|------------------|-----------------\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.label << std::right << " | " << std::setw(6)
       << 100 * r.strict.mean << " +/- " << std::setw(5) << 100 * r.strict.std_error << " | " << std::setw(6)
       << 100 * r.fuzzy.mean << " +/- " << std::setw(5) << 100 * r.fuzzy.std_error << '\n';
  }
  return os.str();
}

inline nlohmann::json summary_json(const RunConfig& cfg, const Dataset& data, const std::vector<RunScore>& scores,
                                   const std::vector<SummaryRow>& rows) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& s : scores) {
    runs.push_back({{"label", s.label}, {"seed", s.seed}, {"best_epoch", s.best_epoch}, {"test", eval_to_json(s.test)}});
  }
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& r : rows) {
    summary.push_back({{"label", r.label},
                       {"strict_mean", r.strict.mean},
                       {"strict_std_error", r.strict.std_error},
                       {"fuzzy_mean", r.fuzzy.mean},
                       {"fuzzy_std_error", r.fuzzy.std_error},
                       {"fuzzy_per_seed", r.fuzzy_per_seed}});
  }
  return {{"config_hash", config_hash(cfg)},
          {"seed", cfg.seed()},
          {"seeds", cfg.seeds},
          {"split_hashes", data.split_hashes()},
          {"runs", runs},
          {"summary", summary}};
}

inline std::vector<SummaryRow> cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  validate(cfg);
  const Dataset data = load_dataset(cfg, true);
  ensure_dir(cfg.out_dir);
  const auto scores = run_all(ablation_specs(cfg), data, cfg.workers, log);
  const auto rows = summarize_rows(scores);
  const std::string table = summary_table("Target variable", rows);
  log << table;
  write_text(join_path(cfg.out_dir, "ablation.txt"), table);
  write_text(join_path(cfg.out_dir, "ablation.json"), summary_json(cfg, data, scores, rows).dump(2) + "\n");
  return rows;
}

inline const std::vector<double>& epsilon_grid() {
  static const std::vector<double> grid = {0.25e-4, 0.5e-4, 1e-4, 2e-4, 4e-4};
  return grid;
}

inline std::string format_epsilon(double eps) {
  std::ostringstream os;
  os << eps * 1e4 << "e-4";
  return os.str();
}

inline std::vector<SummaryRow> cmd_sweep_eps(const RunConfig& cfg, const std::string& target, std::ostream& log) {
  validate(cfg);
  AdvConfig probe{{{target, 1.0}}, AdvMode::Adversarial};
  probe.validate();
  const Dataset data = load_dataset(cfg, true);
  ensure_dir(cfg.out_dir);
  std::vector<RunSpec> specs;
  for (double eps : epsilon_grid()) {
    for (std::size_t k = 0; k < cfg.seeds; ++k) {
      specs.push_back({target + " eps=" + format_epsilon(eps),
                       with_adv(cfg, AdvMode::Adversarial, {{target, eps}}, cfg.seed() + k)});
    }
  }
  const auto scores = run_all(specs, data, cfg.workers, log);
  const auto rows = summarize_rows(scores);
  const std::string table = summary_table("Intensity", rows);
  log << table;
  write_text(join_path(cfg.out_dir, "sweep_" + target + ".txt"), table);
  write_text(join_path(cfg.out_dir, "sweep_" + target + ".json"), summary_json(cfg, data, scores, rows).dump(2) + "\n");
  return rows;
}

}  // namespace a3net
