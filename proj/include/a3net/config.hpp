#pragma once

// Run configuration as a key-value text file:
//
//   # comment
//   profile = desk
//   epochs = 30
//   adv_mode = adversarial
//   adv_target = w_P=2e-4
//   adv_target = v_hat_P=0.5e-4
//
// Keys may repeat only for adv_target. Values run to the end of the line.

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "a3net/adversarial.hpp"
#include "a3net/error.hpp"
#include "a3net/hash.hpp"
#include "a3net/model.hpp"
#include "a3net/trainer.hpp"

namespace a3net {

enum class Profile { Desk, Paper };

inline Profile parse_profile(const std::string& s) {
  if (s == "desk") return Profile::Desk;
  if (s == "paper") return Profile::Paper;
  throw UsageError("unknown profile '" + s + "' (expected desk or paper)");
}

inline std::string to_string(Profile p) { return p == Profile::Desk ? "desk" : "paper"; }

struct RunConfig {
  Profile profile = Profile::Desk;
  ModelDims dims = ModelDims::desk(0);
  TrainConfig train = TrainConfig::desk();
  AdvConfig adv;
  std::string data_dir;
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  std::string synonyms_path;
  std::string out_dir = ".";
  std::size_t num_examples = 200;
  std::size_t seeds = 3;
  std::size_t workers = 1;

  std::uint64_t seed() const { return train.seed; }

  std::string resolved_path(const std::string& explicit_path, const char* file) const {
    if (!explicit_path.empty()) return explicit_path;
    if (data_dir.empty()) throw UsageError(std::string("no data directory given for ") + file);
    return data_dir + "/" + file;
  }
  std::string train_file() const { return resolved_path(train_path, "train.jsonl"); }
  std::string valid_file() const { return resolved_path(valid_path, "valid.jsonl"); }
  std::string test_file() const { return resolved_path(test_path, "test.jsonl"); }
  std::string synonyms_file() const { return resolved_path(synonyms_path, "synonyms.tsv"); }
};

inline RunConfig profile_defaults(Profile p) {
  RunConfig c;
  c.profile = p;
  c.dims = p == Profile::Desk ? ModelDims::desk(0) : ModelDims::paper(0);
  c.train = p == Profile::Desk ? TrainConfig::desk() : TrainConfig::paper();
  return c;
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>") {
  KeyValues out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(source + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline KeyValues load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config '" + path + "'");
  return parse_key_values(in, path);
}

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw UsageError("config: bad value '" + value + "' for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw UsageError("config: bad boolean '" + value + "' for " + key);
}

}  // namespace detail

inline void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  if (key == "profile") {
    c = profile_defaults(parse_profile(value));
  } else if (key == "seed") {
    c.train.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "batch_size") {
    c.train.batch_size = parse_number<std::size_t>(key, value);
  } else if (key == "learning_rate") {
    c.train.learning_rate = parse_number<double>(key, value);
  } else if (key == "rho") {
    c.train.rho = parse_number<double>(key, value);
  } else if (key == "eps_opt") {
    c.train.eps_opt = parse_number<double>(key, value);
  } else if (key == "dropout") {
    c.train.dropout = parse_number<double>(key, value);
  } else if (key == "epochs") {
    c.train.epochs = parse_number<std::size_t>(key, value);
  } else if (key == "adv_mode") {
    c.adv.mode = parse_adv_mode(value);
  } else if (key == "adv_target") {
    c.adv.targets.push_back(parse_adv_target(value));
  } else if (key == "embed_dim") {
    c.dims.embed_dim = parse_number<std::size_t>(key, value);
  } else if (key == "hidden") {
    c.dims.hidden = parse_number<std::size_t>(key, value);
  } else if (key == "encoder_layers") {
    c.dims.encoder_layers = parse_number<std::size_t>(key, value);
  } else if (key == "fusion_layers") {
    c.dims.fusion_layers = parse_number<std::size_t>(key, value);
  } else if (key == "max_word_len") {
    c.dims.max_word_len = parse_number<std::size_t>(key, value);
  } else if (key == "literal_double_exp") {
    c.dims.literal_double_exp = detail::parse_bool(key, value);
  } else if (key == "data_dir") {
    c.data_dir = value;
  } else if (key == "train") {
    c.train_path = value;
  } else if (key == "valid") {
    c.valid_path = value;
  } else if (key == "test") {
    c.test_path = value;
  } else if (key == "synonyms") {
    c.synonyms_path = value;
  } else if (key == "out") {
    c.out_dir = value;
  } else if (key == "num_examples") {
    c.num_examples = parse_number<std::size_t>(key, value);
  } else if (key == "seeds") {
    c.seeds = parse_number<std::size_t>(key, value);
  } else if (key == "workers") {
    c.workers = parse_number<std::size_t>(key, value);
  } else {
    throw UsageError("config: unknown key '" + key + "'");
  }
}

// Profile defaults first, then the file's keys in order.
inline RunConfig build_config(const KeyValues& kv, std::optional<Profile> profile_override = std::nullopt) {
  Profile profile = Profile::Desk;
  for (const auto& [k, v] : kv) {
    if (k == "profile") profile = parse_profile(v);
  }
  if (profile_override) profile = *profile_override;
  RunConfig c = profile_defaults(profile);
  for (const auto& [k, v] : kv) {
    if (k == "profile") continue;
    if (k != "adv_target") {
      std::size_t seen = 0;
      for (const auto& entry : kv) seen += entry.first == k;
      if (seen > 1) throw UsageError("config: key '" + k + "' given more than once");
    }
    apply_key(c, k, v);
  }
  return c;
}

inline void validate(const RunConfig& c) {
  c.train.validate();
  c.adv.validate();
  if (c.dims.embed_dim < 1 || c.dims.hidden < 1 || c.dims.encoder_layers < 1 || c.dims.fusion_layers < 1) {
    throw UsageError("config: model sizes must be >= 1");
  }
  if (c.dims.max_word_len < 1) throw UsageError("config: max_word_len must be >= 1");
  if (c.seeds < 1) throw UsageError("config: seeds must be >= 1");
  if (c.workers < 1) throw UsageError("config: workers must be >= 1");
}

// Canonical text of everything that affects results; its hash identifies a
// run in reports. Output locations are excluded.
inline std::string canonical_text(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "profile=" << to_string(c.profile) << '\n'
     << "embed_dim=" << c.dims.embed_dim << '\n'
     << "hidden=" << c.dims.hidden << '\n'
     << "encoder_layers=" << c.dims.encoder_layers << '\n'
     << "fusion_layers=" << c.dims.fusion_layers << '\n'
     << "max_word_len=" << c.dims.max_word_len << '\n'
     << "literal_double_exp=" << c.dims.literal_double_exp << '\n'
     << "batch_size=" << c.train.batch_size << '\n'
     << "learning_rate=" << c.train.learning_rate << '\n'
     << "rho=" << c.train.rho << '\n'
     << "eps_opt=" << c.train.eps_opt << '\n'
     << "dropout=" << c.train.dropout << '\n'
     << "epochs=" << c.train.epochs << '\n'
     << "seed=" << c.train.seed << '\n'
     << "adv_mode=" << to_string(c.adv.mode) << '\n';
  for (const auto& t : c.adv.targets) os << "adv_target=" << t.name << '=' << t.epsilon << '\n';
  os << "seeds=" << c.seeds << '\n';
  return os.str();
}

inline std::string config_hash(const RunConfig& c) { return hash_hex(canonical_text(c)); }

}  // namespace a3net
