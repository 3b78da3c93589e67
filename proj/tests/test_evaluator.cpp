#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "qslm/evaluator.hpp"
#include "qslm/model/checkpoint.hpp"
#include "qslm/search.hpp"
#include "qslm/workbench/datasets.hpp"
#include "qslm/workbench/tokenizer.hpp"
#include "test_util.hpp"

using namespace qslm;
using qslm::testing::fixture;
using qslm::testing::random_model;
using qslm::testing::random_tokens;

namespace {

struct UniformLm {
    std::size_t vocab = 64;
    std::size_t context = 16;
    std::size_t context_len() const { return context; }
    Tensor logits(std::span<const Token> toks) const { return Tensor({toks.size(), vocab}); }
};

// Puts a huge logit on (previous token + 1) mod V.
struct SuccessorLm {
    std::size_t vocab = 10;
    std::size_t context = 8;
    std::size_t context_len() const { return context; }
    Tensor logits(std::span<const Token> toks) const {
        Tensor out({toks.size(), vocab});
        for (std::size_t t = 0; t < toks.size(); ++t) out[t * vocab + (toks[t] + 1) % vocab] = 200.0f;
        return out;
    }
};

struct ConstantClassifier {
    int cls = 0;
    std::size_t out_dim() const { return 2; }
    std::size_t context_len() const { return 8; }
    std::vector<float> class_logits(std::span<const Token>) const {
        std::vector<float> v(2, 0.0f);
        v[cls] = 1.0f;
        return v;
    }
};

// Predicts the class stored in the first token.
struct EchoClassifier {
    std::size_t out_dim() const { return 3; }
    std::size_t context_len() const { return 8; }
    std::vector<float> class_logits(std::span<const Token> toks) const {
        std::vector<float> v(3, 0.0f);
        v[toks[0] % 3] = 1.0f;
        return v;
    }
};

// Reference: each target is predicted from the prefix of its own window,
// with log-softmax in long double.
template <class M>
double token_by_token_ppl(const M& model, const std::vector<Token>& corpus) {
    const std::size_t L = std::max<std::size_t>(2, model.context_len());
    long double nll = 0.0L;
    for (std::size_t i = 1; i < corpus.size(); ++i) {
        const std::size_t start = ((i - 1) / (L - 1)) * (L - 1);
        const std::span<const Token> prefix(corpus.data() + start, i - start);
        const Tensor lg = model.logits(prefix);
        const std::size_t V = lg.dim(1);
        const float* row = lg.data() + (prefix.size() - 1) * V;
        long double mx = row[0];
        for (std::size_t j = 1; j < V; ++j) mx = std::max<long double>(mx, row[j]);
        long double z = 0.0L;
        for (std::size_t j = 0; j < V; ++j) z += std::exp(static_cast<long double>(row[j]) - mx);
        nll -= static_cast<long double>(row[corpus[i]]) - mx - std::log(z);
    }
    return static_cast<double>(std::exp(nll / static_cast<long double>(corpus.size() - 1)));
}

std::vector<LabeledSequence> balanced(std::size_t n) {
    std::vector<LabeledSequence> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({{static_cast<Token>(i % 2), 1, 2}, static_cast<int>(i % 2)});
    return out;
}

}  // namespace

TEST(Accuracy, ConstantClassOnBalancedSet) {
    const auto data = balanced(10);
    EXPECT_EQ(evaluate_accuracy(ConstantClassifier{0}, std::span<const LabeledSequence>(data)), 0.5);
    EXPECT_EQ(evaluate_accuracy(ConstantClassifier{1}, std::span<const LabeledSequence>(data)), 0.5);
}

TEST(Accuracy, AllCorrect) {
    const auto data = balanced(9);
    EXPECT_EQ(evaluate_accuracy(EchoClassifier{}, std::span<const LabeledSequence>(data)), 1.0);
}

TEST(Accuracy, Errors) {
    const std::vector<LabeledSequence> empty;
    EXPECT_THROW(evaluate_accuracy(EchoClassifier{}, std::span<const LabeledSequence>(empty)), InputError);
    const std::vector<LabeledSequence> bad{{{1, 2}, 3}};
    EXPECT_THROW(evaluate_accuracy(EchoClassifier{}, std::span<const LabeledSequence>(bad)), InputError);
}

TEST(Accuracy, MatchesRecountOnFixtureSplit) {
    const auto rows = read_classification_tsv(fixture("sentiment_test.tsv"));
    const Tokenizer tok = Tokenizer::fit(joined_text(read_classification_tsv(fixture("sentiment_train.tsv"))));
    const auto data = encode_examples(tok, rows);
    const Model m = random_model(tok.vocab_size(), 16, 2, 64, TaskHead::classification(2), 21);

    std::size_t hits = 0;
    for (const auto& ex : data) {
        const std::size_t n = std::min(ex.tokens.size(), m.context_len());
        const auto lg = classify_logits(m.params, m.config, std::span<const Token>(ex.tokens.data(), n));
        int best = 0;
        for (int c = 1; c < static_cast<int>(lg.size()); ++c) {
            if (lg[c] > lg[best]) best = c;
        }
        hits += best == ex.label;
    }
    const double expected = static_cast<double>(hits) / static_cast<double>(data.size());
    EXPECT_EQ(evaluate_accuracy(m, std::span<const LabeledSequence>(data)), expected);
    EXPECT_EQ(evaluate_accuracy(m, std::span<const LabeledSequence>(data), 4), expected);
}

TEST(Perplexity, UniformLogitsGiveVocabSize) {
    std::mt19937_64 rng(1);
    for (std::size_t V : {2u, 31u, 64u, 257u}) {
        const auto corpus = random_tokens(300, V, rng);
        EXPECT_NEAR(evaluate_perplexity(UniformLm{V, 16}, std::span<const Token>(corpus)), static_cast<double>(V), 1e-9);
    }
}

TEST(Perplexity, CertainModelGivesOne) {
    std::vector<Token> corpus(50);
    for (std::size_t i = 0; i < corpus.size(); ++i) corpus[i] = static_cast<Token>(i % 10);
    EXPECT_NEAR(evaluate_perplexity(SuccessorLm{}, std::span<const Token>(corpus)), 1.0, 1e-12);
}

TEST(Perplexity, WindowsPredictEveryTokenOnce) {
    for (std::size_t n : {2u, 3u, 17u, 64u, 65u, 100u, 257u}) {
        for (std::size_t ctx : {1u, 2u, 5u, 16u, 64u}) {
            std::vector<int> hits(n, 0);
            for (auto [s, len] : perplexity_windows(n, ctx)) {
                ASSERT_LE(s + len, n);
                ASSERT_LE(len, std::max<std::size_t>(2, ctx));
                for (std::size_t t = s + 1; t < s + len; ++t) ++hits[t];
            }
            EXPECT_EQ(hits[0], 0);
            for (std::size_t t = 1; t < n; ++t) EXPECT_EQ(hits[t], 1) << "n=" << n << " ctx=" << ctx << " t=" << t;
        }
    }
}

TEST(Perplexity, ToyCheckpointMatchesTokenOracle) {
    const Checkpoint ck = load_checkpoint(fixture("toy_ckpt"));
    const Tokenizer tok(ck.vocab);
    auto corpus = tok.encode(read_text_file(fixture("corpus_test.txt")));
    ASSERT_GE(corpus.size(), 256u);
    corpus.resize(256);
    const Model m{ck.config, ck.params};
    const double got = evaluate_perplexity(m, std::span<const Token>(corpus));
    const double want = token_by_token_ppl(m, corpus);
    EXPECT_NEAR(got / want, 1.0, 1e-9);
    EXPECT_EQ(evaluate_perplexity(m, std::span<const Token>(corpus), 3), got);
    EXPECT_GE(got, 1.0);
}

TEST(Perplexity, RandomModelsMatchTokenOracle) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t V = 5 + trial * 9;
        const Model m = random_model(V, 8, 1 + trial % 3, 4 + trial * 5, TaskHead::generation(), 100 + trial);
        const auto corpus = random_tokens(20 + trial * 23, V, rng);
        const double got = evaluate_perplexity(m, std::span<const Token>(corpus));
        EXPECT_NEAR(got / token_by_token_ppl(m, corpus), 1.0, 1e-9);
    }
}

TEST(Perplexity, Errors) {
    const std::vector<Token> one{3};
    EXPECT_THROW(evaluate_perplexity(UniformLm{}, std::span<const Token>(one)), InputError);

    struct NanLm {
        std::size_t context_len() const { return 4; }
        Tensor logits(std::span<const Token> toks) const {
            Tensor t({toks.size(), 3});
            t[0] = std::numeric_limits<float>::quiet_NaN();
            return t;
        }
    };
    const std::vector<Token> c{0, 1, 2};
    EXPECT_THROW(evaluate_perplexity(NanLm{}, std::span<const Token>(c)), NumericError);
}

TEST(Score, HandSubstitution) {
    const ScoreParams cls{0.5, 1000.0, 0.9};
    EXPECT_DOUBLE_EQ(compute_score(0.8, 500.0, cls, TaskKind::Classification), 0.55);

    const ScoreParams gen{1.0, 1000.0, 20.0};
    const double s = compute_score(24.0, 313.0, gen, TaskKind::Generation);
    EXPECT_DOUBLE_EQ(s, 24.313);
    EXPECT_DOUBLE_EQ(fitness_of(s, TaskKind::Generation), -24.313);
    EXPECT_EQ(fitness_of(0.55, TaskKind::Classification), 0.55);
}

TEST(Score, AlphaZeroIsRawPerformance) {
    const ScoreParams sp{0.0, 1000.0, 0.0};
    EXPECT_EQ(compute_score(0.71, 123.0, sp, TaskKind::Classification), 0.71);
    EXPECT_EQ(compute_score(31.5, 999.0, sp, TaskKind::Generation), 31.5);
}

TEST(Score, FitnessMonotonicity) {
    const ScoreParams sp{0.3, 1000.0, 0.0};
    for (TaskKind task : {TaskKind::Classification, TaskKind::Generation}) {
        double prev = std::numeric_limits<double>::infinity();
        for (double mem = 100.0; mem <= 1000.0; mem += 100.0) {
            const double f = fitness_of(compute_score(0.5, mem, sp, task), task);
            EXPECT_LT(f, prev);
            prev = f;
        }
    }
    EXPECT_LT(fitness_of(compute_score(0.7, 400.0, sp, TaskKind::Classification), TaskKind::Classification),
              fitness_of(compute_score(0.8, 400.0, sp, TaskKind::Classification), TaskKind::Classification));
    EXPECT_GT(fitness_of(compute_score(10.0, 400.0, sp, TaskKind::Generation), TaskKind::Generation),
              fitness_of(compute_score(11.0, 400.0, sp, TaskKind::Generation), TaskKind::Generation));
}

TEST(Constraints, HandCases) {
    const Constraints c{0.02, 1000.0};
    EXPECT_TRUE(check_constraints(0.85, 0.85, 1000.0, c, TaskKind::Classification));
    EXPECT_FALSE(check_constraints(0.85, 0.82, 10.0, c, TaskKind::Classification));
    EXPECT_TRUE(check_constraints(0.85, 0.83, 10.0, c, TaskKind::Classification));
    EXPECT_FALSE(check_constraints(0.85, 0.85, 1000.5, c, TaskKind::Classification));

    const Constraints g{1.0, 400e6};
    EXPECT_TRUE(check_constraints(26.5, 27.5, 400e6, g, TaskKind::Generation));
    EXPECT_FALSE(check_constraints(26.5, 27.6, 100e6, g, TaskKind::Generation));
    EXPECT_TRUE(check_constraints(26.5, 20.0, 100e6, g, TaskKind::Generation));

    EXPECT_THROW((Constraints{-0.1, 10.0}.validate()), InputError);
    EXPECT_THROW((Constraints{0.1, 0.0}.validate()), InputError);
}

TEST(Constraints, MonotoneAndAlphaInvariant) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        const TaskKind task = i % 2 ? TaskKind::Generation : TaskKind::Classification;
        const double base = u(rng), perf = u(rng), mem = 1000.0 * u(rng);
        const Constraints c{0.2 * u(rng), 1000.0 * u(rng)};
        const Constraints looser{c.perf_budget + 0.1 * u(rng), c.mem_budget_bytes + 100.0 * u(rng)};
        if (check_constraints(base, perf, mem, c, task)) {
            EXPECT_TRUE(check_constraints(base, perf, mem, looser, task));
        }
        const bool met = make_stats(perf, mem, c, {0.0, 1000.0, base}, task).met;
        for (double a : {0.1, 0.5, 1.0, 7.0}) EXPECT_EQ(make_stats(perf, mem, c, {a, 1000.0, base}, task).met, met);
    }
}

TEST(EvalCandidate, FullPrecisionCandidateMatchesBaseline) {
    const ScoreParams sp{0.5, 800.0, 0.9};
    const auto s = eval_candidate([] { return Measurement{0.9, 800.0}; }, Constraints{0.0, 800.0}, sp,
                                  TaskKind::Classification, 0);
    EXPECT_EQ(s.perf, 0.9);
    EXPECT_EQ(s.mem_bytes, 800.0);
    EXPECT_TRUE(s.met);
    EXPECT_DOUBLE_EQ(s.score, 0.4);
    EXPECT_FALSE(eval_candidate([] { return Measurement{0.9, 800.0}; }, Constraints{0.0, 799.0}, sp,
                                TaskKind::Classification, 0)
                     .met);
}

TEST(EvalCandidate, LowerMemoryWinsAtEqualPerf) {
    const ScoreParams sp{0.5, 800.0, 20.0};
    const Constraints c{1.0, 800.0};
    const auto a = eval_candidate([] { return Measurement{20.5, 400.0}; }, c, sp, TaskKind::Generation, 1);
    const auto b = eval_candidate([] { return Measurement{20.5, 300.0}; }, c, sp, TaskKind::Generation, 2);
    EXPECT_GT(b.fitness, a.fitness);
}

TEST(EvalCandidate, ErrorsTaggedWithIndex) {
    const ScoreParams sp{0.5, 800.0, 20.0};
    try {
        eval_candidate([]() -> Measurement { throw NumericError("overflow in block 2"); }, Constraints{1.0, 800.0}, sp,
                       TaskKind::Generation, 17);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("candidate 17"), std::string::npos) << msg;
        EXPECT_NE(msg.find("overflow in block 2"), std::string::npos) << msg;
    }
    EXPECT_THROW(eval_candidate([] { return Measurement{std::nan(""), 1.0}; }, Constraints{1.0, 800.0}, sp,
                                TaskKind::Generation, 3),
                 NumericError);
}

TEST(EvalCandidate, StatsRoundTripThroughTrace) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SearchTrace t;
    t.task = TaskKind::Generation;
    t.ladder = {8, 4};
    t.constraints = {0.3, 900.0};
    t.baseline = make_stats(12.0, 1000.0, t.constraints, {0.5, 1000.0, 12.0}, t.task);
    for (std::size_t i = 0; i < 20; ++i) {
        Candidate c;
        c.index = i;
        c.phase.kind = i == 0 ? PhaseKind::Init : PhaseKind::Global;
        if (i) c.level_index = static_cast<int>(i % 2);
        c.stats = make_stats(12.0 + u(rng) / 3.0, 1000.0 * u(rng), t.constraints, {0.5, 1000.0, 12.0}, t.task);
        t.candidates.push_back(c);
    }
    t.selected = select_final(t, t.score_params());
    std::stringstream ss;
    write_trace(t, ss);
    const SearchTrace back = read_trace(ss);
    ASSERT_EQ(back.candidates.size(), t.candidates.size());
    for (std::size_t i = 0; i < t.candidates.size(); ++i) EXPECT_EQ(back.candidates[i].stats, t.candidates[i].stats);
    EXPECT_EQ(back.baseline, t.baseline);
    EXPECT_EQ(back, t);
}
