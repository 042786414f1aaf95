#pragma once

#include <cctype>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "a3net/data.hpp"
#include "a3net/error.hpp"
#include "a3net/model.hpp"

namespace a3net {

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// P = C/A, R = C/Q, F1 = 2PR/(P+R); zero denominators give 0.
inline Prf1 prf1(std::size_t correct, std::size_t answered, std::size_t questions) {
  if (correct > answered || correct > questions) {
    throw Error("prf1: correct count " + std::to_string(correct) + " exceeds answered " + std::to_string(answered) +
                " or questions " + std::to_string(questions));
  }
  Prf1 r;
  if (answered) r.precision = static_cast<double>(correct) / static_cast<double>(answered);
  if (questions) r.recall = static_cast<double>(correct) / static_cast<double>(questions);
  // The harmonic mean of equal values is that value; the general formula
  // can be an ulp off.
  if (r.precision == r.recall) {
    r.f1 = r.precision;
  } else {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

// Trim, collapse runs of whitespace to one space, ASCII case-fold.
inline std::string normalize_answer(const std::string& s) {
  std::string out;
  bool pending_space = false;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
  }
  return out;
}

inline bool match_strict(const std::string& predicted, const std::string& gold) {
  return normalize_answer(predicted) == normalize_answer(gold);
}

// Strict match, or both answers listed in one synonym group (after
// normalising the group entries too).
inline bool match_fuzzy(const std::string& predicted, const std::string& gold, const SynonymTable& table) {
  const std::string p = normalize_answer(predicted);
  const std::string g = normalize_answer(gold);
  if (p == g) return true;
  for (const auto& group : table.groups()) {
    bool has_p = false, has_g = false;
    for (const auto& s : group) {
      const std::string n = normalize_answer(s);
      has_p = has_p || n == p;
      has_g = has_g || n == g;
    }
    if (has_p && has_g) return true;
  }
  return false;
}

struct MatchCounts {
  std::size_t correct = 0;
  std::size_t answered = 0;
  std::size_t questions = 0;
};

struct EvalResult {
  MatchCounts strict_counts;
  MatchCounts fuzzy_counts;
  Prf1 strict;
  Prf1 fuzzy;
};

struct Prediction {
  std::string id;
  std::string answer_text;
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;
};

inline EvalResult score_predictions(const std::vector<Prediction>& predictions, const std::vector<Example>& gold,
                                    const SynonymTable& table) {
  if (predictions.size() != gold.size()) throw Error("score_predictions: prediction count differs from dataset");
  EvalResult r;
  r.strict_counts.questions = r.fuzzy_counts.questions = gold.size();
  r.strict_counts.answered = r.fuzzy_counts.answered = predictions.size();
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (match_strict(predictions[i].answer_text, gold[i].answer_text)) ++r.strict_counts.correct;
    if (match_fuzzy(predictions[i].answer_text, gold[i].answer_text, table)) ++r.fuzzy_counts.correct;
  }
  r.strict = prf1(r.strict_counts.correct, r.strict_counts.answered, r.strict_counts.questions);
  r.fuzzy = prf1(r.fuzzy_counts.correct, r.fuzzy_counts.answered, r.fuzzy_counts.questions);
  return r;
}

// One decoded span per question, in dataset order.
inline std::vector<Prediction> predict(const Model& model, const std::vector<Example>& dataset,
                                       std::size_t batch_size = 32) {
  std::vector<Prediction> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); i += batch_size) {
    const std::vector<Example> chunk(dataset.begin() + i, dataset.begin() + std::min(dataset.size(), i + batch_size));
    const Batch batch = encode_and_batch(chunk, model.vocab, model.dims.max_word_len);
    const ForwardTrace trace = forward(model.dims, model.params, batch);
    const auto spans = decode_batch(trace);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      out.push_back(Prediction{chunk[b].id, join_words(chunk[b].passage, spans[b].start, spans[b].end), spans[b].start,
                               spans[b].end, spans[b].score});
    }
  }
  return out;
}

inline EvalResult evaluate_dataset(const Model& model, const std::vector<Example>& dataset, const SynonymTable& table) {
  if (dataset.empty()) throw DataError("evaluate_dataset: empty dataset");
  return score_predictions(predict(model, dataset), dataset, table);
}

inline nlohmann::json eval_to_json(const EvalResult& r) {
  auto block = [](const Prf1& s, const MatchCounts& c) {
    return nlohmann::json{{"precision", s.precision}, {"recall", s.recall},     {"f1", s.f1},
                          {"correct", c.correct},     {"answered", c.answered}, {"questions", c.questions}};
  };
  return {{"strict", block(r.strict, r.strict_counts)}, {"fuzzy", block(r.fuzzy, r.fuzzy_counts)}};
}

// Text table with Strict P/R/F1 and Fuzzy P/R/F1 columns, values in percent.
inline std::string eval_table(const std::vector<std::pair<std::string, EvalResult>>& rows) {
  std::ostringstream os;
  std::size_t width = 5;
  for (const auto& [name, r] : rows) width = std::max(width, name.size());
  os << std::left << std::setw(static_cast<int>(width)) << "Model"
     << " | Strict P | Strict R | Strict F1 | Fuzzy P | Fuzzy R | Fuzzy F1\n";
  os << std::string(width, '-') << "-|----------|----------|-----------|---------|---------|---------\n";
  os << std::fixed << std::setprecision(2);
  for (const auto& [name, r] : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << name << std::right << " | " << std::setw(8)
       << 100 * r.strict.precision << " | " << std::setw(8) << 100 * r.strict.recall << " | " << std::setw(9)
       << 100 * r.strict.f1 << " | " << std::setw(7) << 100 * r.fuzzy.precision << " | " << std::setw(7)
       << 100 * r.fuzzy.recall << " | " << std::setw(7) << 100 * r.fuzzy.f1 << '\n';
  }
  return os.str();
}

}  // namespace a3net
