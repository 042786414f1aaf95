#include <gtest/gtest.h>

#include <cmath>
#include <optional>

#include "a3net/commands.hpp"
#include "a3net/model.hpp"
#include "test_support.hpp"
#include "tiny_oracle.hpp"

using namespace a3net;
using testing_support::tiny_examples;

namespace {

ModelDims tiny_dims(std::size_t vocab) {
  ModelDims d;
  d.vocab_size = vocab;
  d.embed_dim = 3;
  d.hidden = 2;
  d.encoder_layers = 2;
  d.fusion_layers = 2;
  d.max_word_len = 4;
  return d;
}

struct Tiny {
  Vocab vocab;
  ModelDims dims;
  Batch batch;
  ParamStore params;
};

Tiny make_tiny(std::uint64_t seed, bool spread) {
  Tiny t;
  t.vocab = build_vocab(tiny_examples());
  t.dims = tiny_dims(t.vocab.size());
  t.batch = encode_and_batch(tiny_examples(), t.vocab, t.dims.max_word_len);
  t.params = init_params(t.dims, seed);
  if (spread) {
    Rng rng(seed + 100);
    for (auto& e : t.params.entries()) {
      for (double& v : e.value.data()) v = rng.uniform(-1.0, 1.0);
    }
  }
  return t;
}

// Trace holding fixed distributions, for loss arithmetic.
ForwardTrace fixed_trace(const Tensor& p_s, const Tensor& p_e) {
  ForwardTrace t;
  t.graph = std::make_unique<Graph>();
  t.P_s = t.graph->constant(p_s);
  t.P_e = t.graph->constant(p_e);
  t.passage_mask = Tensor(p_s.shape(), 1.0);
  return t;
}

SpanPrediction brute_force_decode(const std::vector<double>& ps, const std::vector<double>& pe,
                                  const std::vector<double>& mask) {
  std::optional<SpanPrediction> best;
  for (std::size_t s = 0; s < ps.size(); ++s) {
    for (std::size_t e = 0; e < ps.size(); ++e) {
      if (e < s || e - s > 10 || mask[s] == 0.0 || mask[e] == 0.0) continue;
      const double score = ps[s] + pe[e];
      if (!best || score > best->score) best = SpanPrediction{s, e, score};
    }
  }
  return *best;
}

}  // namespace

TEST(CharPooling, HandExamples) {
  Graph g;
  Var emb = g.constant(Tensor::matrix({{0, 0}, {0, 0}, {1, 3}, {2, 0}}));
  const IndexTensor ids{{1, 3, 2}, {2, 0, 2, 3, 3, 2}};
  const Tensor char_mask({1, 3, 2}, {1, 0, 1, 1, 1, 1});
  const auto out = embed_words(emb, ids, char_mask, Tensor({1, 3}, 1.0));
  const Tensor& u = out.words.value();
  EXPECT_EQ(u, Tensor({1, 3, 2}, {1, 3, 2, 3, 2, 3}));
}

TEST(CharPooling, DuplicateCharsIdempotent) {
  Graph g;
  Var emb = g.constant(Tensor::matrix({{0, 0}, {0, 0}, {1.5, -3}}));
  const IndexTensor ids{{1, 2, 3}, {2, 0, 0, 2, 2, 2}};
  const Tensor char_mask({1, 2, 3}, {1, 0, 0, 1, 1, 1});
  const Tensor& u = embed_words(emb, ids, char_mask, Tensor({1, 2}, 1.0)).words.value();
  EXPECT_EQ(u, Tensor({1, 2, 2}, {1.5, -3, 1.5, -3}));
}

TEST(Forward, MatchesStraightLineOracle) {
  for (bool spread : {false, true}) {
    const Tiny t = make_tiny(17, spread);
    const ForwardTrace trace = forward(t.dims, t.params, t.batch);
    const Tensor& ps = trace.P_s.value();
    const Tensor& pe = trace.P_e.value();
    const std::size_t T = t.batch.passage_len;
    for (std::size_t row = 0; row < t.batch.size; ++row) {
      const oracle::Output want = oracle::forward_row(t.dims, t.params, t.batch, row);
      for (std::size_t i = 0; i < T; ++i) {
        const double ws = i < want.p_s.size() ? want.p_s[i] : 0.0;
        const double we = i < want.p_e.size() ? want.p_e[i] : 0.0;
        EXPECT_NEAR(ps[row * T + i], ws, 1e-10) << "row " << row << " pos " << i;
        EXPECT_NEAR(pe[row * T + i], we, 1e-10) << "row " << row << " pos " << i;
      }
    }
  }
}

TEST(Forward, DistributionsNormalisedWithExactMaskedZeros) {
  const auto corpus = generate_synthetic_corpus(11, 12);
  const Vocab vocab = build_vocab(corpus);
  ModelDims dims = ModelDims::desk(vocab.size());
  dims.hidden = 4;
  const Batch batch = encode_and_batch(corpus, vocab, dims.max_word_len);
  const ForwardTrace trace = forward(dims, init_params(dims, 3), batch);
  const std::size_t T = batch.passage_len;
  EXPECT_EQ(trace.P_s.shape(), (Shape{batch.size, T}));
  for (const Var& p : {trace.P_s, trace.P_e}) {
    for (std::size_t b = 0; b < batch.size; ++b) {
      double total = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const double v = p.value()[b * T + t];
        if (t >= batch.passage_lengths[b]) {
          EXPECT_EQ(v, 0.0);
        }
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Forward, ZeroInjectionLeavesTraceUnchanged) {
  const Tiny t = make_tiny(5, true);
  const ForwardTrace base = forward(t.dims, t.params, t.batch);
  for (const auto& name : bindable_variables()) {
    const Tensor zero(base.variable(name).shape());
    ForwardOptions opts;
    opts.injections.push_back({name, zero});
    const ForwardTrace inj = forward(t.dims, t.params, t.batch, opts);
    EXPECT_EQ(inj.P_s.value(), base.P_s.value()) << name;
    EXPECT_EQ(inj.P_e.value(), base.P_e.value()) << name;
  }
}

TEST(Forward, InjectionValidation) {
  const Tiny t = make_tiny(5, false);
  ForwardOptions unknown;
  unknown.injections.push_back({"nope", Tensor({1})});
  EXPECT_THROW(forward(t.dims, t.params, t.batch, unknown), UsageError);
  ForwardOptions wrong_shape;
  wrong_shape.injections.push_back({"v_P", Tensor({1})});
  EXPECT_THROW(forward(t.dims, t.params, t.batch, wrong_shape), ShapeError);
}

TEST(Forward, DimensionAuditPaperAndScaled) {
  const auto corpus = generate_synthetic_corpus(2, 2);
  const Vocab vocab = build_vocab(corpus);
  for (std::size_t d : {100, 4}) {
    ModelDims dims = ModelDims::paper(vocab.size());
    dims.hidden = d;
    const Batch batch = encode_and_batch(corpus, vocab, dims.max_word_len);
    const ForwardTrace trace = forward(dims, init_params(dims, 1), batch);
    const std::size_t B = batch.size, T = batch.passage_len, J = batch.question_len;
    EXPECT_EQ(trace.variable("u_P").shape(), (Shape{B, T, 64}));
    EXPECT_EQ(trace.variable("u_Q").shape(), (Shape{B, J, 64}));
    EXPECT_EQ(trace.variable("v_P").shape(), (Shape{B, T, 2 * d}));
    EXPECT_EQ(trace.variable("v_Q").shape(), (Shape{B, J, 2 * d}));
    EXPECT_EQ(trace.variable("v_hat_P").shape(), (Shape{B, T, 6 * d}));
    EXPECT_EQ(trace.variable("h_P").shape(), (Shape{B, T, 2 * d}));
    EXPECT_EQ(trace.variable("h_hat_P").shape(), (Shape{B, T, 2 * d}));
    ParamStore p = init_params(dims, 1);
    EXPECT_EQ(p["passage_encoder.0.fwd.W"].shape(), (Shape{d, 128}));
    EXPECT_EQ(p["question_encoder.0.fwd.W"].shape(), (Shape{d, 64}));
    EXPECT_EQ(p["W_Ps"].shape(), (Shape{4 * d}));
    EXPECT_EQ(p["W_Pe"].shape(), (Shape{4 * d + 1}));
  }
}

TEST(SpanLoss, OneHotGivesZero) {
  const ForwardTrace t = fixed_trace(Tensor({1, 3}, {0, 1, 0}), Tensor({1, 3}, {0, 0, 1}));
  EXPECT_EQ(span_loss(t, {1}, {2}).value().item(), 0.0);
}

TEST(SpanLoss, HandValue) {
  const ForwardTrace t = fixed_trace(Tensor({1, 2}, {0.6, 0.4}), Tensor({1, 2}, {0.3, 0.7}));
  const double loss = span_loss(t, {0}, {1}).value().item();
  EXPECT_NEAR(loss, -(std::log(0.6) + std::log(0.7)), 1e-15);
  EXPECT_NEAR(loss, 0.8675, 5e-5);
}

TEST(SpanLoss, MeanOverBatch) {
  const ForwardTrace t = fixed_trace(Tensor({2, 2}, {0.6, 0.4, 0.2, 0.8}), Tensor({2, 2}, {0.3, 0.7, 0.5, 0.5}));
  const double want = 0.5 * (-(std::log(0.6) + std::log(0.7)) - (std::log(0.8) + std::log(0.5)));
  EXPECT_NEAR(span_loss(t, {0, 1}, {1, 0}).value().item(), want, 1e-15);
}

TEST(SpanLoss, RejectsMaskedGold) {
  ForwardTrace t = fixed_trace(Tensor({1, 3}, {0.5, 0.5, 0}), Tensor({1, 3}, {0.5, 0.5, 0}));
  t.passage_mask = Tensor({1, 3}, {1, 1, 0});
  EXPECT_THROW(span_loss(t, {2}, {2}), DataError);
  EXPECT_THROW(span_loss(t, {0, 0}, {0}), ShapeError);
}

TEST(SpanLoss, NonNegativeOnModel) {
  const Tiny t = make_tiny(9, true);
  const ForwardTrace trace = forward(t.dims, t.params, t.batch);
  EXPECT_GT(span_loss(trace, t.batch).value().item(), 0.0);
}

TEST(Decode, HandExample) {
  const std::vector<double> ps{0.1, 0.6, 0.3}, pe{0.2, 0.1, 0.7}, mask{1, 1, 1};
  const SpanPrediction p = decode_span(ps, pe, mask);
  EXPECT_EQ(p.start, 1u);
  EXPECT_EQ(p.end, 2u);
  EXPECT_NEAR(p.score, 1.3, 1e-15);
}

TEST(Decode, SinglePosition) {
  const std::vector<double> one{1.0};
  EXPECT_EQ(decode_span(one, one, one), (SpanPrediction{0, 0, 2.0}));
}

TEST(Decode, PeaksOutsideWindow) {
  std::vector<double> ps(13, 0.01), pe(13, 0.01), mask(13, 1.0);
  ps[0] = 0.88;
  pe[12] = 0.88;
  pe[9] = 0.02;
  const SpanPrediction p = decode_span(ps, pe, mask);
  EXPECT_EQ(p, brute_force_decode(ps, pe, mask));
  EXPECT_LE(p.end - p.start, 10u);
}

TEST(Decode, RandomInstancesMatchBruteForce) {
  Rng rng(21);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t T = 1 + rng.index(40);
    std::vector<double> ps(T), pe(T), mask(T, 0.0);
    const std::size_t real = 1 + rng.index(T);
    for (std::size_t i = 0; i < real; ++i) mask[i] = 1.0;
    // Coarse values force ties.
    for (std::size_t i = 0; i < T; ++i) {
      ps[i] = static_cast<double>(rng.index(5)) / 4.0;
      pe[i] = static_cast<double>(rng.index(5)) / 4.0;
    }
    const SpanPrediction got = decode_span(ps, pe, mask);
    EXPECT_EQ(got, brute_force_decode(ps, pe, mask));
    EXPECT_LE(got.start, got.end);
    EXPECT_LE(got.end - got.start, 10u);
    EXPECT_EQ(mask[got.start], 1.0);
    EXPECT_EQ(mask[got.end], 1.0);
  }
}

TEST(Decode, AllMaskedRejected) {
  const std::vector<double> p{0.5, 0.5}, mask{0, 0};
  EXPECT_THROW(decode_span(p, p, mask), DataError);
}

TEST(ModelGradient, FullLossAgreesWithFiniteDifferences) {
  const GradCheckReport r = full_model_gradcheck(1, 2, 1e-3);
  EXPECT_LT(r.worst.max_rel_error, kGradCheckTolerance)
      << r.worst.worst_param << "[" << r.worst.worst_index << "] analytic " << r.worst.analytic << " numeric "
      << r.worst.numeric;
  EXPECT_GT(r.worst.entries, 100u);
}

TEST(ModelGradient, SmallStepAtFirstPoint) {
  const GradCheckReport r = full_model_gradcheck(1, 1, 1e-4);
  EXPECT_LT(r.worst.max_rel_error, kGradCheckTolerance);
}
