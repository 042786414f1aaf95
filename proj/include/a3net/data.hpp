#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "a3net/error.hpp"
#include "a3net/ops.hpp"
#include "a3net/rng.hpp"
#include "a3net/tensor.hpp"

namespace a3net {

// Splits UTF-8 text into code points, each returned as its byte sequence.
// Invalid lead bytes are taken as single-byte characters.
inline std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if (lead >= 0xF0) len = 4;
    else if (lead >= 0xE0) len = 3;
    else if (lead >= 0xC0) len = 2;
    len = std::min(len, text.size() - i);
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

inline std::string join_words(const std::vector<std::string>& words, std::size_t first, std::size_t last) {
  std::string out;
  for (std::size_t i = first; i <= last && i < words.size(); ++i) {
    if (i > first) out += ' ';
    out += words[i];
  }
  return out;
}

struct Example {
  std::string id;
  std::vector<std::string> question;
  std::vector<std::string> passage;
  std::size_t answer_start = 0;
  std::size_t answer_end = 0;  // inclusive
  std::string answer_text;

  bool operator==(const Example&) const = default;
};

// Character vocabulary. Ids 0 and 1 are reserved for padding and unknown
// characters; the rest follow first occurrence order.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocab() : chars_{"<pad>", "<unk>"} {}

  // Rebuilds from a saved character list (ids 2.. in order).
  static Vocab from_chars(const std::vector<std::string>& chars) {
    Vocab v;
    for (const auto& c : chars) v.add(c);
    return v;
  }

  std::size_t add(const std::string& ch) {
    auto [it, inserted] = index_.try_emplace(ch, chars_.size());
    if (inserted) chars_.push_back(ch);
    return it->second;
  }

  std::size_t id(const std::string& ch) const {
    auto it = index_.find(ch);
    return it == index_.end() ? kUnk : it->second;
  }

  std::size_t size() const { return chars_.size(); }

  const std::string& symbol(std::size_t id) const { return chars_.at(id); }

  // Characters with ids >= 2, in id order.
  std::vector<std::string> chars() const { return {chars_.begin() + 2, chars_.end()}; }

  std::vector<std::size_t> encode_word(const std::string& word) const {
    std::vector<std::size_t> ids;
    for (const auto& ch : utf8_chars(word)) ids.push_back(id(ch));
    return ids;
  }

 private:
  std::vector<std::string> chars_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline Vocab build_vocab(const std::vector<Example>& corpus) {
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");
  Vocab vocab;
  auto add_words = [&](const std::vector<std::string>& words) {
    for (const auto& w : words) {
      for (const auto& ch : utf8_chars(w)) vocab.add(ch);
    }
  };
  for (const auto& ex : corpus) {
    add_words(ex.question);
    add_words(ex.passage);
  }
  return vocab;
}

// Padded, masked batch. Masks hold 1.0 on real positions and 0.0 on padding.
struct Batch {
  std::size_t size = 0;
  std::size_t passage_len = 0;   // T_max
  std::size_t question_len = 0;  // J_max
  std::size_t word_len = 0;      // W
  IndexTensor passage_chars;     // [B, T, W]
  IndexTensor question_chars;    // [B, J, W]
  Tensor passage_char_mask;      // [B, T, W]
  Tensor question_char_mask;     // [B, J, W]
  Tensor passage_mask;           // [B, T]
  Tensor question_mask;          // [B, J]
  std::vector<std::size_t> passage_lengths;
  std::vector<std::size_t> question_lengths;
  std::vector<std::size_t> gold_starts;
  std::vector<std::size_t> gold_ends;
};

namespace detail {

inline void fill_words(const std::vector<std::string>& words, const Vocab& vocab, std::size_t b, std::size_t max_len,
                       std::size_t w, IndexTensor& ids, Tensor& char_mask, Tensor& mask) {
  for (std::size_t t = 0; t < words.size(); ++t) {
    mask[b * max_len + t] = 1.0;
    const auto chars = vocab.encode_word(words[t]);
    const std::size_t n = std::min(chars.size(), w);
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t off = (b * max_len + t) * w + c;
      ids.ids[off] = chars[c];
      char_mask[off] = 1.0;
    }
  }
}

}  // namespace detail

inline Batch encode_and_batch(const std::vector<Example>& examples, const Vocab& vocab, std::size_t max_word_len) {
  if (max_word_len < 1) throw UsageError("encode_and_batch: max word length must be >= 1");
  if (examples.empty()) throw DataError("encode_and_batch: no examples");
  Batch batch;
  batch.size = examples.size();
  batch.word_len = max_word_len;
  for (const auto& ex : examples) {
    if (ex.passage.empty()) throw DataError("encode_and_batch: example '" + ex.id + "' has an empty passage");
    batch.passage_len = std::max(batch.passage_len, ex.passage.size());
    batch.question_len = std::max(batch.question_len, ex.question.size());
  }
  batch.question_len = std::max<std::size_t>(batch.question_len, 1);
  const std::size_t B = batch.size, T = batch.passage_len, J = batch.question_len, W = max_word_len;
  batch.passage_chars = IndexTensor{{B, T, W}, std::vector<std::size_t>(B * T * W, Vocab::kPad)};
  batch.question_chars = IndexTensor{{B, J, W}, std::vector<std::size_t>(B * J * W, Vocab::kPad)};
  batch.passage_char_mask = Tensor({B, T, W});
  batch.question_char_mask = Tensor({B, J, W});
  batch.passage_mask = Tensor({B, T});
  batch.question_mask = Tensor({B, J});
  for (std::size_t b = 0; b < B; ++b) {
    const Example& ex = examples[b];
    detail::fill_words(ex.passage, vocab, b, T, W, batch.passage_chars, batch.passage_char_mask, batch.passage_mask);
    detail::fill_words(ex.question, vocab, b, J, W, batch.question_chars, batch.question_char_mask,
                       batch.question_mask);
    batch.passage_lengths.push_back(ex.passage.size());
    batch.question_lengths.push_back(ex.question.size());
    batch.gold_starts.push_back(ex.answer_start);
    batch.gold_ends.push_back(ex.answer_end);
  }
  return batch;
}

// Char ids of every real passage word of row b, padding stripped.
inline std::vector<std::vector<std::size_t>> unpad_passage(const Batch& batch, std::size_t b) {
  std::vector<std::vector<std::size_t>> words;
  for (std::size_t t = 0; t < batch.passage_lengths.at(b); ++t) {
    std::vector<std::size_t> chars;
    for (std::size_t c = 0; c < batch.word_len; ++c) {
      const std::size_t off = (b * batch.passage_len + t) * batch.word_len + c;
      if (batch.passage_char_mask[off] != 0.0) chars.push_back(batch.passage_chars[off]);
    }
    words.push_back(std::move(chars));
  }
  return words;
}

inline std::vector<Batch> make_batches(const std::vector<Example>& examples, const Vocab& vocab,
                                       std::size_t batch_size, std::size_t max_word_len) {
  std::vector<Batch> out;
  for (std::size_t i = 0; i < examples.size(); i += batch_size) {
    const std::size_t end = std::min(examples.size(), i + batch_size);
    out.push_back(encode_and_batch({examples.begin() + i, examples.begin() + end}, vocab, max_word_len));
  }
  return out;
}

// Groups of interchangeable answer strings. Membership is looked up per
// group; no closure across groups is computed.
class SynonymTable {
 public:
  void add_group(std::vector<std::string> group) {
    const std::size_t gid = groups_.size();
    for (const auto& s : group) membership_[s].insert(gid);
    groups_.push_back(std::move(group));
  }

  bool same_group(const std::string& a, const std::string& b) const {
    auto ia = membership_.find(a);
    auto ib = membership_.find(b);
    if (ia == membership_.end() || ib == membership_.end()) return false;
    for (std::size_t g : ia->second) {
      if (ib->second.count(g)) return true;
    }
    return false;
  }

  const std::vector<std::vector<std::string>>& groups() const { return groups_; }
  bool empty() const { return groups_.empty(); }

 private:
  std::vector<std::vector<std::string>> groups_;
  std::unordered_map<std::string, std::set<std::size_t>> membership_;
};

// --- validation and file formats ---------------------------------------

inline void validate_example(const Example& ex) {
  if (ex.passage.empty()) throw DataError("record '" + ex.id + "': empty passage");
  if (ex.answer_end < ex.answer_start) throw DataError("record '" + ex.id + "': answer_end < answer_start");
  if (ex.answer_end >= ex.passage.size()) throw DataError("record '" + ex.id + "': answer span out of range");
  std::string spaced = join_words(ex.passage, ex.answer_start, ex.answer_end);
  std::string packed;
  for (std::size_t i = ex.answer_start; i <= ex.answer_end; ++i) packed += ex.passage[i];
  if (ex.answer_text != spaced && ex.answer_text != packed) {
    throw DataError("record '" + ex.id + "': answer_text does not match the passage span");
  }
}

inline nlohmann::json example_to_json(const Example& ex) {
  return nlohmann::json{{"id", ex.id},
                        {"question", ex.question},
                        {"passage", ex.passage},
                        {"answer_start", ex.answer_start},
                        {"answer_end", ex.answer_end},
                        {"answer_text", ex.answer_text}};
}

inline Example example_from_json(const nlohmann::json& j) {
  Example ex;
  ex.id = j.at("id").get<std::string>();
  ex.question = j.at("question").get<std::vector<std::string>>();
  ex.passage = j.at("passage").get<std::vector<std::string>>();
  const auto start = j.at("answer_start").get<long long>();
  const auto end = j.at("answer_end").get<long long>();
  if (start < 0 || end < 0) throw DataError("record '" + ex.id + "': negative answer index");
  ex.answer_start = static_cast<std::size_t>(start);
  ex.answer_end = static_cast<std::size_t>(end);
  ex.answer_text = j.at("answer_text").get<std::string>();
  return ex;
}

inline std::vector<Example> parse_jsonl(std::istream& in, const std::string& source = "<stream>") {
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Example ex;
    try {
      ex = example_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(source + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    validate_example(ex);
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<Example> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  return parse_jsonl(in, path);
}

inline void write_jsonl(std::ostream& out, const std::vector<Example>& examples) {
  for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
}

inline void save_jsonl(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  write_jsonl(out, examples);
}

inline SynonymTable parse_synonyms(std::istream& in) {
  SynonymTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> group;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) {
      if (!field.empty()) group.push_back(field);
    }
    if (!group.empty()) table.add_group(std::move(group));
  }
  return table;
}

inline SynonymTable load_synonyms(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open synonym table '" + path + "'");
  return parse_synonyms(in);
}

inline void save_synonyms(const std::string& path, const SynonymTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path + "'");
  for (const auto& group : table.groups()) {
    for (std::size_t i = 0; i < group.size(); ++i) out << (i ? "\t" : "") << group[i];
    out << '\n';
  }
}

// --- synthetic corpus ----------------------------------------------------

struct GrammarParams {
  std::size_t min_distractors = 2;
  std::size_t max_distractors = 3;
};

namespace synth {

struct Relation {
  std::vector<std::string> phrase;    // words between entity and value
  std::vector<std::string> question;  // "{E}" marks the entity slot
  std::size_t pool;                   // index into value_pools()
};

inline const std::vector<std::string>& entities() {
  static const std::vector<std::string> names = {
      "alvor",  "brenna", "corvid", "dalmar", "elkin",  "fenwick", "garlow", "hasket", "ivren",  "jorvik",
      "kestel", "lumora", "marrow", "nerith", "osprey", "pellam",  "quenby", "rostov", "selwyn", "tarrin",
      "ulmen",  "varek",  "wendal", "yarrow", "zephyr", "ambrel",  "belcor", "cindra", "dorvan", "essla",
      "farrow", "glenna", "holbek", "istra",  "jasper", "kirwan",  "lorcan", "mistra", "norvel", "oberon"};
  return names;
}

// Multi-word values are vectors of words. Pools mix 1-, 2- and 3-word values.
inline const std::vector<std::vector<std::vector<std::string>>>& value_pools() {
  static const std::vector<std::vector<std::vector<std::string>>> pools = {
      // 0 cities
      {{"beijing"}, {"beijing", "city"}, {"new", "york"}, {"new", "york", "city"}, {"paris"}, {"lima"},
       {"cairo"}, {"oslo"}, {"rio", "de", "janeiro"}, {"kyoto"}, {"san", "marco"}},
      // 1 colors
      {{"black"}, {"red"}, {"deep", "blue"}, {"pale", "green"}, {"white"}, {"gold"}, {"dark", "violet", "red"},
       {"amber"}, {"grey"}},
      // 2 persons
      {{"king", "aldric"}, {"mara"}, {"old", "tomas"}, {"queen", "isolde"}, {"bran"}, {"lady", "of", "ash"},
       {"hugo"}, {"sir", "edwin"}},
      // 3 years
      {{"1204"}, {"1650"}, {"year", "900"}, {"1888"}, {"early", "1700"}, {"2001"}, {"late", "iron", "age"}},
      // 4 languages
      {{"latin"}, {"old", "norse"}, {"greek"}, {"basque"}, {"welsh"}, {"high", "valley", "tongue"}},
      // 5 goods
      {{"salt"}, {"timber"}, {"red", "wine"}, {"silk"}, {"wool"}, {"copper", "wire"}, {"dried", "sea", "fish"},
       {"honey"}},
      // 6 regions
      {{"the", "north"}, {"east", "coast"}, {"valley"}, {"lowlands"}, {"far", "west", "hills"}, {"islands"}},
      // 7 creatures
      {{"wolves"}, {"snakes"}, {"sea", "serpents"}, {"crows"}, {"bears"}, {"giant", "cave", "spiders"}},
      // 8 numbers
      {{"two", "million"}, {"ninety"}, {"four", "hundred"}, {"one", "thousand"}, {"seven"}, {"six", "hundred", "ten"}},
      // 9 crops
      {{"barley"}, {"rice"}, {"rye"}, {"sweet", "corn"}, {"olives"}, {"wild", "red", "beans"}},
  };
  return pools;
}

inline const std::vector<Relation>& relations() {
  static const std::vector<Relation> rels = {
      {{"has", "capital"}, {"what", "is", "the", "capital", "of", "{E}", "?"}, 0},
      {{"is", "colored"}, {"what", "color", "is", "{E}", "?"}, 1},
      {{"was", "founded", "by"}, {"who", "founded", "{E}", "?"}, 2},
      {{"was", "built", "in"}, {"when", "was", "{E}", "built", "?"}, 3},
      {{"speaks"}, {"what", "language", "does", "{E}", "speak", "?"}, 4},
      {{"exports"}, {"what", "does", "{E}", "export", "?"}, 5},
      {{"is", "located", "in"}, {"where", "is", "{E}", "located", "?"}, 6},
      {{"is", "ruled", "by"}, {"who", "rules", "{E}", "?"}, 2},
      {{"trades", "with"}, {"which", "city", "does", "{E}", "trade", "with", "?"}, 0},
      {{"grows"}, {"what", "crop", "does", "{E}", "grow", "?"}, 9},
      {{"fears"}, {"what", "does", "{E}", "fear", "?"}, 7},
      {{"mines"}, {"what", "metal", "does", "{E}", "mine", "?"}, 5},
      {{"borders"}, {"what", "region", "does", "{E}", "border", "?"}, 6},
      {{"is", "famous", "for"}, {"what", "is", "{E}", "famous", "for", "?"}, 5},
      {{"has", "population"}, {"how", "many", "people", "live", "in", "{E}", "?"}, 8},
      {{"flies", "flag"}, {"what", "flag", "does", "{E}", "fly", "?"}, 1},
      {{"is", "guarded", "by"}, {"who", "guards", "{E}", "?"}, 2},
      {{"hunts"}, {"what", "does", "{E}", "hunt", "?"}, 7},
      {{"was", "sacked", "in"}, {"when", "was", "{E}", "sacked", "?"}, 3},
      {{"writes", "in"}, {"what", "script", "does", "{E}", "write", "in", "?"}, 4},
      {{"counts", "soldiers"}, {"how", "many", "soldiers", "does", "{E}", "count", "?"}, 8},
      {{"feasts", "on"}, {"what", "does", "{E}", "feast", "on", "?"}, 9},
      {{"paints", "walls"}, {"what", "color", "are", "the", "walls", "of", "{E}", "?"}, 1},
      {{"sends", "envoys", "to"}, {"where", "does", "{E}", "send", "envoys", "?"}, 0},
  };
  return rels;
}

inline const std::vector<std::vector<std::string>>& synonym_groups() {
  static const std::vector<std::vector<std::string>> groups = {
      {"beijing", "beijing city"},
      {"new york", "new york city"},
      {"deep blue", "blue"},
      {"dark violet red", "violet red", "dark violet"},
      {"king aldric", "aldric"},
      {"queen isolde", "isolde"},
      {"old tomas", "tomas"},
      {"sir edwin", "edwin"},
      {"year 900", "900"},
      {"early 1700", "1700"},
      {"old norse", "norse"},
      {"red wine", "wine"},
      {"copper wire", "copper"},
      {"the north", "north"},
      {"east coast", "coast"},
      {"sea serpents", "serpents"},
      {"sweet corn", "corn"},
      {"two million", "2000000"},
  };
  return groups;
}

}  // namespace synth

inline SynonymTable synthetic_synonyms() {
  SynonymTable table;
  for (const auto& g : synth::synonym_groups()) table.add_group(g);
  return table;
}

// Templated fact passages: one sentence "<entity> <relation> <value> ." that
// answers the question, mixed with distractor sentences that share either
// the entity or the relation. Deterministic in `seed`.
inline std::vector<Example> generate_synthetic_corpus(std::uint64_t seed, std::size_t n,
                                                      const GrammarParams& params = {}) {
  if (n < 1) throw UsageError("generate_synthetic_corpus: n must be >= 1");
  Rng rng(seed);
  const auto& ents = synth::entities();
  const auto& rels = synth::relations();
  const auto& pools = synth::value_pools();
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    struct Fact {
      std::size_t entity, relation, value;
    };
    // Cycle relations so every template appears in corpora of modest size.
    const std::size_t rel = (k + rng.index(rels.size())) % rels.size();
    Fact answer{rng.index(ents.size()), rel, rng.index(pools[rels[rel].pool].size())};
    const std::size_t n_distract =
        params.min_distractors + rng.index(params.max_distractors - params.min_distractors + 1);
    std::vector<Fact> facts{answer};
    while (facts.size() < 1 + n_distract) {
      Fact f{};
      if (rng.bernoulli(0.5)) {
        f.entity = answer.entity;
        f.relation = rng.index(rels.size());
      } else {
        f.entity = rng.index(ents.size());
        f.relation = answer.relation;
      }
      const bool clash = std::any_of(facts.begin(), facts.end(), [&](const Fact& o) {
        return o.entity == f.entity && o.relation == f.relation;
      });
      if (clash) continue;
      f.value = rng.index(pools[rels[f.relation].pool].size());
      facts.push_back(f);
    }
    rng.shuffle(facts);

    Example ex;
    ex.id = "syn-" + std::to_string(seed) + "-" + std::to_string(k);
    for (const Fact& f : facts) {
      const auto& r = rels[f.relation];
      const auto& value = pools[r.pool][f.value];
      ex.passage.push_back(ents[f.entity]);
      ex.passage.insert(ex.passage.end(), r.phrase.begin(), r.phrase.end());
      const bool is_answer = f.entity == answer.entity && f.relation == answer.relation;
      if (is_answer) ex.answer_start = ex.passage.size();
      ex.passage.insert(ex.passage.end(), value.begin(), value.end());
      if (is_answer) ex.answer_end = ex.passage.size() - 1;
      ex.passage.push_back(".");
    }
    for (const auto& w : rels[answer.relation].question) {
      ex.question.push_back(w == "{E}" ? ents[answer.entity] : w);
    }
    ex.answer_text = join_words(ex.passage, ex.answer_start, ex.answer_end);
    out.push_back(std::move(ex));
  }
  return out;
}

struct Splits {
  std::vector<Example> train;
  std::vector<Example> valid;
  std::vector<Example> test;
};

// 80/10/10 split in corpus order.
inline Splits split_corpus(const std::vector<Example>& corpus) {
  const std::size_t n = corpus.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_valid = n / 10;
  Splits s;
  s.train.assign(corpus.begin(), corpus.begin() + n_train);
  s.valid.assign(corpus.begin() + n_train, corpus.begin() + n_train + n_valid);
  s.test.assign(corpus.begin() + n_train + n_valid, corpus.end());
  return s;
}

}  // namespace a3net
