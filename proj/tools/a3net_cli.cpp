#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "a3net/commands.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> profile;
  std::vector<std::string> adv_targets;
  std::optional<std::string> adv_mode;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> seeds;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> num_examples;
  std::optional<std::string> data_dir;
  std::string checkpoint;
  std::string dataset;
  std::string output;
  std::string target = "v_hat_P";
};

// Config file keys first, then command-line flags on top.
a3net::RunConfig resolve(const Flags& f) {
  a3net::KeyValues kv;
  if (!f.config.empty()) kv = a3net::load_key_values(f.config);
  auto set = [&](const std::string& key, const std::string& value) {
    std::erase_if(kv, [&](const auto& e) { return e.first == key; });
    kv.emplace_back(key, value);
  };
  if (f.seed) set("seed", std::to_string(*f.seed));
  if (f.out) set("out", *f.out);
  if (f.adv_mode) set("adv_mode", *f.adv_mode);
  if (f.workers) set("workers", std::to_string(*f.workers));
  if (f.seeds) set("seeds", std::to_string(*f.seeds));
  if (f.epochs) set("epochs", std::to_string(*f.epochs));
  if (f.num_examples) set("num_examples", std::to_string(*f.num_examples));
  if (f.data_dir) set("data_dir", *f.data_dir);
  if (!f.adv_targets.empty()) {
    std::erase_if(kv, [](const auto& e) { return e.first == "adv_target"; });
    for (const auto& t : f.adv_targets) kv.emplace_back("adv_target", t);
  }
  std::optional<a3net::Profile> profile;
  if (f.profile) profile = a3net::parse_profile(*f.profile);
  a3net::RunConfig cfg = a3net::build_config(kv, profile);
  a3net::validate(cfg);
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Attention reader with adversarial training on intermediate variables"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "run seed");
  app.add_option("--out", f.out, "output directory");
  app.add_option("--profile", f.profile, "model profile")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--adv-target", f.adv_targets, "adversarial target NAME=EPSILON (repeatable)");
  app.add_option("--adv-mode", f.adv_mode, "adversarial, noise or off")
      ->check(CLI::IsMember({"adversarial", "noise", "gaussian_noise", "off"}));
  app.add_option("--workers", f.workers, "parallel runs for ablate and sweep-eps");

  auto* gen = app.add_subcommand("gen-data", "write synthetic train/valid/test splits and a synonym table");
  gen->add_option("--n", f.num_examples, "number of examples");

  auto* train = app.add_subcommand("train", "train a model; writes checkpoint, history and report");
  train->add_option("--data", f.data_dir, "directory with train/valid JSONL and synonyms.tsv");
  train->add_option("--epochs", f.epochs, "number of epochs");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a JSONL dataset");
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  eval->add_option("--dataset", f.dataset, "JSONL dataset")->required();
  eval->add_option("--data", f.data_dir, "directory holding synonyms.tsv");

  auto* pred = app.add_subcommand("predict", "write one predicted span per question as JSONL");
  pred->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  pred->add_option("--dataset", f.dataset, "JSONL dataset")->required();
  pred->add_option("--output", f.output, "output file (default stdout)");

  app.add_subcommand("gradcheck", "finite-difference check of the full model gradient");

  auto* ablate = app.add_subcommand("ablate", "train every target-variable configuration and tabulate");
  ablate->add_option("--data", f.data_dir, "directory with the splits");
  ablate->add_option("--seeds", f.seeds, "seeds per configuration");
  ablate->add_option("--epochs", f.epochs, "number of epochs");

  auto* sweep = app.add_subcommand("sweep-eps", "train one target over the intensity grid");
  sweep->add_option("--data", f.data_dir, "directory with the splits");
  sweep->add_option("--target", f.target, "target variable");
  sweep->add_option("--seeds", f.seeds, "seeds per intensity");
  sweep->add_option("--epochs", f.epochs, "number of epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const a3net::RunConfig cfg = resolve(f);
  if (gen->parsed()) {
    a3net::cmd_gen_data(cfg, std::cout);
  } else if (train->parsed()) {
    a3net::cmd_train(cfg, std::cout);
  } else if (eval->parsed()) {
    a3net::cmd_eval(cfg, f.checkpoint, f.dataset, std::cout);
  } else if (pred->parsed()) {
    if (f.output.empty()) {
      a3net::cmd_predict(f.checkpoint, f.dataset, std::cout);
    } else {
      std::ofstream out(f.output, std::ios::binary);
      if (!out) throw a3net::UsageError("cannot write '" + f.output + "'");
      a3net::cmd_predict(f.checkpoint, f.dataset, out);
    }
  } else if (ablate->parsed()) {
    a3net::cmd_ablate(cfg, std::cout);
  } else if (sweep->parsed()) {
    a3net::cmd_sweep_eps(cfg, f.target, std::cout);
  } else {
    a3net::cmd_gradcheck(cfg, std::cout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const a3net::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const a3net::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const a3net::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
