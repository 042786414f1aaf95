#include <gtest/gtest.h>

#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "a3net/data.hpp"
#include "a3net/error.hpp"
#include "a3net/hash.hpp"
#include "test_support.hpp"

using namespace a3net;

namespace {

std::string corpus_text(const std::vector<Example>& corpus) {
  std::ostringstream out;
  write_jsonl(out, corpus);
  return out.str();
}

}  // namespace

TEST(Vocab, ReservesPadAndUnkThenFirstOccurrence) {
  const std::vector<Example> corpus = {{"x", {"ab"}, {"ba", "a"}, 0, 0, "ba"}};
  const Vocab v = build_vocab(corpus);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id("a"), 2u);
  EXPECT_EQ(v.id("b"), 3u);
  EXPECT_EQ(v.symbol(Vocab::kPad), "<pad>");
  EXPECT_EQ(v.symbol(Vocab::kUnk), "<unk>");
  EXPECT_EQ(v.id("z"), Vocab::kUnk);
  EXPECT_EQ(v.encode_word("abz"), (std::vector<std::size_t>{2, 3, 1}));
  EXPECT_TRUE(v.encode_word("").empty());
}

TEST(Vocab, EmptyCorpusRejected) { EXPECT_THROW(build_vocab({}), DataError); }

TEST(Vocab, MultibyteCharactersAreSingleIds) {
  const std::vector<Example> corpus = {{"x", {"北京"}, {"北京市"}, 0, 0, "北京市"}};
  const Vocab v = build_vocab(corpus);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.encode_word("京北").size(), 2u);
}

TEST(Vocab, FromCharsRoundTrip) {
  const Vocab v = build_vocab(testing_support::tiny_examples());
  const Vocab w = Vocab::from_chars(v.chars());
  ASSERT_EQ(v.size(), w.size());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.symbol(i), w.symbol(i));
}

TEST(Batching, SingleExampleMaskAllTrue) {
  const std::vector<Example> ex = {{"x", {"q"}, {"a", "b", "c"}, 0, 0, "a"}};
  const Batch b = encode_and_batch(ex, build_vocab(ex), 8);
  EXPECT_EQ(b.passage_len, 3u);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(b.passage_mask[t], 1.0);
}

TEST(Batching, PadsToBatchMax) {
  const std::vector<Example> ex = {{"x", {"q"}, {"a", "b", "c"}, 0, 0, "a"},
                                   {"y", {"q", "r"}, {"a", "b", "c", "d", "e"}, 4, 4, "e"}};
  const Batch b = encode_and_batch(ex, build_vocab(ex), 8);
  EXPECT_EQ(b.passage_len, 5u);
  EXPECT_EQ(b.question_len, 2u);
  const std::vector<double> row0(b.passage_mask.data().begin(), b.passage_mask.data().begin() + 5);
  EXPECT_EQ(row0, (std::vector<double>{1, 1, 1, 0, 0}));
  EXPECT_EQ(b.question_mask[1], 0.0);
  EXPECT_EQ(b.question_mask[3], 1.0);
  EXPECT_EQ(b.gold_starts, (std::vector<std::size_t>{0, 4}));
}

TEST(Batching, TruncatesLongWords) {
  const std::vector<Example> ex = {{"x", {"q"}, {"abcdefghij"}, 0, 0, "abcdefghij"}};
  const Vocab v = build_vocab(ex);
  const Batch b = encode_and_batch(ex, v, 8);
  EXPECT_EQ(b.word_len, 8u);
  const auto words = unpad_passage(b, 0);
  ASSERT_EQ(words.size(), 1u);
  const auto full = v.encode_word("abcdefghij");
  EXPECT_EQ(words[0], std::vector<std::size_t>(full.begin(), full.begin() + 8));
}

TEST(Batching, RejectsEmptyPassageAndZeroWidth) {
  const std::vector<Example> ok = {{"x", {"q"}, {"a"}, 0, 0, "a"}};
  const std::vector<Example> bad = {{"x", {"q"}, {}, 0, 0, ""}};
  EXPECT_THROW(encode_and_batch(bad, build_vocab(ok), 8), DataError);
  EXPECT_THROW(encode_and_batch(ok, build_vocab(ok), 0), UsageError);
}

TEST(Batching, UnpadRecoversCharIds) {
  const auto corpus = generate_synthetic_corpus(3, 40);
  const Vocab v = build_vocab(corpus);
  for (const Batch& b : make_batches(corpus, v, 7, 8)) {
    for (std::size_t r = 0; r < b.size; ++r) {
      for (std::size_t t = 0; t < b.passage_len; ++t) {
        EXPECT_EQ(b.passage_mask[r * b.passage_len + t], t < b.passage_lengths[r] ? 1.0 : 0.0);
      }
      EXPECT_LE(b.gold_ends[r], b.passage_lengths[r] - 1);
      ASSERT_EQ(unpad_passage(b, r).size(), b.passage_lengths[r]);
    }
  }
  std::size_t row = 0;
  for (const Batch& b : make_batches(corpus, v, 7, 8)) {
    for (std::size_t r = 0; r < b.size; ++r, ++row) {
      const auto words = unpad_passage(b, r);
      const Example& ex = corpus[row];
      for (std::size_t t = 0; t < ex.passage.size(); ++t) {
        auto ids = v.encode_word(ex.passage[t]);
        if (ids.size() > 8) ids.resize(8);
        EXPECT_EQ(words[t], ids) << ex.id << " word " << t;
      }
    }
  }
  EXPECT_EQ(row, corpus.size());
}

TEST(Synthetic, SingleExampleSpanMatchesText) {
  const auto c = generate_synthetic_corpus(7, 1);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].answer_text, join_words(c[0].passage, c[0].answer_start, c[0].answer_end));
  EXPECT_NO_THROW(validate_example(c[0]));
}

TEST(Synthetic, DeterministicUnderSeed) {
  EXPECT_EQ(hash_hex(corpus_text(generate_synthetic_corpus(7, 50))),
            hash_hex(corpus_text(generate_synthetic_corpus(7, 50))));
  EXPECT_NE(corpus_text(generate_synthetic_corpus(7, 50)), corpus_text(generate_synthetic_corpus(8, 50)));
}

TEST(Synthetic, CoverageAtTwoHundred) {
  const auto c = generate_synthetic_corpus(7, 200);
  std::set<std::vector<std::string>> templates;
  std::set<std::size_t> widths;
  const SynonymTable syn = synthetic_synonyms();
  std::size_t with_synonym = 0;
  for (const auto& ex : c) {
    EXPECT_NO_THROW(validate_example(ex));
    // The question minus its entity slot identifies the relation template.
    std::vector<std::string> q;
    for (const auto& w : ex.question) {
      const auto& ents = synth::entities();
      q.push_back(std::find(ents.begin(), ents.end(), w) != ents.end() ? "{E}" : w);
    }
    templates.insert(q);
    widths.insert(ex.answer_end - ex.answer_start);
    EXPECT_LE(ex.answer_end - ex.answer_start, 10u);
    for (const auto& g : syn.groups()) {
      if (std::find(g.begin(), g.end(), ex.answer_text) != g.end()) {
        ++with_synonym;
        break;
      }
    }
  }
  EXPECT_GE(templates.size(), 20u);
  EXPECT_EQ(widths, (std::set<std::size_t>{0, 1, 2}));
  EXPECT_GT(with_synonym, 0u);
}

TEST(Synthetic, ZeroExamplesRejected) { EXPECT_THROW(generate_synthetic_corpus(7, 0), UsageError); }

TEST(Synthetic, SplitIsEightyTenTen) {
  const auto s = split_corpus(generate_synthetic_corpus(7, 200));
  EXPECT_EQ(s.train.size(), 160u);
  EXPECT_EQ(s.valid.size(), 20u);
  EXPECT_EQ(s.test.size(), 20u);
}

TEST(Jsonl, ParsesSchema) {
  std::istringstream in(
      "{\"id\":\"w1\",\"question\":[\"哪\",\"种\"],\"passage\":[\"黑色\",\"的\"],\"answer_start\":0,"
      "\"answer_end\":0,\"answer_text\":\"黑色\"}\n\n");
  const auto ex = parse_jsonl(in);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].question, (std::vector<std::string>{"哪", "种"}));
  EXPECT_EQ(ex[0].answer_text, "黑色");
}

TEST(Jsonl, RoundTrip) {
  const auto c = generate_synthetic_corpus(5, 10);
  std::istringstream in(corpus_text(c));
  EXPECT_EQ(parse_jsonl(in), c);
}

TEST(Jsonl, MalformedLineReportsLineNumber) {
  std::istringstream in(
      "{\"id\":\"a\",\"question\":[\"q\"],\"passage\":[\"p\"],\"answer_start\":0,\"answer_end\":0,"
      "\"answer_text\":\"p\"}\n{not json\n");
  try {
    parse_jsonl(in, "f.jsonl");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("f.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(Jsonl, BadSpansNameTheRecord) {
  auto line = [](int s, int e) {
    return "{\"id\":\"rec9\",\"question\":[\"q\"],\"passage\":[\"p\",\"r\"],\"answer_start\":" + std::to_string(s) +
           ",\"answer_end\":" + std::to_string(e) + ",\"answer_text\":\"p\"}\n";
  };
  for (const auto& text : {line(1, 0), line(0, 2), line(-1, 0)}) {
    std::istringstream in(text);
    try {
      parse_jsonl(in);
      FAIL() << text;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find("rec9"), std::string::npos) << e.what();
    }
  }
}

TEST(Jsonl, AnswerTextMustMatchSpan) {
  EXPECT_THROW(validate_example({"x", {"q"}, {"a", "b"}, 0, 1, "zz"}), DataError);
  EXPECT_NO_THROW(validate_example({"x", {"q"}, {"a", "b"}, 0, 1, "a b"}));
  EXPECT_NO_THROW(validate_example({"x", {"q"}, {"黑", "色"}, 0, 1, "黑色"}));
}

TEST(Synonyms, ParsesTabSeparatedGroups) {
  std::istringstream in("北京\t北京市\n\nred\tcrimson\tscarlet\r\n");
  const SynonymTable t = parse_synonyms(in);
  ASSERT_EQ(t.groups().size(), 2u);
  EXPECT_EQ(t.groups()[0], (std::vector<std::string>{"北京", "北京市"}));
  EXPECT_TRUE(t.same_group("北京", "北京市"));
  EXPECT_TRUE(t.same_group("北京市", "北京"));
  EXPECT_TRUE(t.same_group("red", "red"));
  EXPECT_TRUE(t.same_group("scarlet", "crimson"));
  EXPECT_FALSE(t.same_group("red", "北京"));
  EXPECT_FALSE(t.same_group("blue", "blue"));
}
