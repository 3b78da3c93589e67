#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qslm/error.hpp"
#include "qslm/model/forward.hpp"
#include "qslm/model/trainer.hpp"
#include "qslm/parallel.hpp"

namespace qslm {

enum class TaskKind { Classification, Generation };

inline TaskKind task_of(const ModelConfig& c) {
    return c.head.kind == HeadKind::Classification ? TaskKind::Classification : TaskKind::Generation;
}

inline const char* task_name(TaskKind t) { return t == TaskKind::Classification ? "classification" : "generation"; }

/// Performance budget (accuracy drop as a fraction, or perplexity increase)
/// and memory budget in bytes.
struct Constraints {
    double perf_budget = 0.0;
    double mem_budget_bytes = 0.0;

    void validate() const {
        if (!(perf_budget >= 0.0)) throw InputError("performance budget must be >= 0");
        if (!(mem_budget_bytes > 0.0)) throw InputError("memory budget must be > 0 bytes");
    }

    friend bool operator==(const Constraints&, const Constraints&) = default;
};

struct ScoreParams {
    double alpha = 0.5;
    double baseline_mem_bytes = 0.0;
    double baseline_perf = 0.0;
};

struct CandidateStats {
    double perf = 0.0;
    double mem_bytes = 0.0;
    double score = 0.0;
    double fitness = 0.0;
    bool met = false;

    friend bool operator==(const CandidateStats&, const CandidateStats&) = default;
};

template <class M>
concept LanguageModel = requires(const M& m, std::span<const Token> toks) {
    { m.logits(toks) } -> std::convertible_to<Tensor>;
    { m.context_len() } -> std::convertible_to<std::size_t>;
};

template <class M>
concept Classifier = requires(const M& m, std::span<const Token> toks) {
    { m.class_logits(toks) } -> std::convertible_to<std::vector<float>>;
    { m.out_dim() } -> std::convertible_to<std::size_t>;
    { m.context_len() } -> std::convertible_to<std::size_t>;
};

/// Fraction of examples whose argmax class (lowest index on ties) equals the label.
/// Inputs longer than the context are truncated to their first context_len tokens.
template <Classifier M>
double evaluate_accuracy(const M& model, std::span<const LabeledSequence> data, unsigned threads = 1) {
    if (data.empty()) throw InputError("accuracy evaluation on an empty dataset");
    for (const auto& ex : data) {
        if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= model.out_dim()) {
            throw InputError("label " + std::to_string(ex.label) + " outside the model's classes");
        }
    }
    std::vector<unsigned char> correct(data.size(), 0);
    parallel_for(data.size(), threads, [&](std::size_t i) {
        const auto& toks = data[i].tokens;
        const std::size_t n = std::min(toks.size(), model.context_len());
        const auto logits = model.class_logits(std::span<const Token>(toks.data(), n));
        const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
        correct[i] = best == data[i].label ? 1 : 0;
    });
    std::size_t hits = 0;
    for (auto c : correct) hits += c;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Start offsets of evaluation windows over a corpus of n tokens. Consecutive
/// windows share one token so every token after the first is predicted exactly once.
inline std::vector<std::pair<std::size_t, std::size_t>> perplexity_windows(std::size_t n, std::size_t context) {
    std::vector<std::pair<std::size_t, std::size_t>> out;  // (start, length)
    if (n < 2) return out;
    const std::size_t len = std::max<std::size_t>(2, context);
    for (std::size_t s = 0; s + 1 < n; s += len - 1) out.emplace_back(s, std::min(len, n - s));
    return out;
}

/// Log-probability of `target` under softmax(logits row), computed in double.
inline double log_softmax_at(std::span<const float> row, std::size_t target) {
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : row) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (float v : row) z += std::exp(static_cast<double>(v) - mx);
    return static_cast<double>(row[target]) - mx - std::log(z);
}

/// exp(-(1/N) sum_i log P(w_i | w_<i)) over every token after the first.
template <LanguageModel M>
double evaluate_perplexity(const M& model, std::span<const Token> corpus, unsigned threads = 1) {
    if (corpus.size() < 2) throw InputError("perplexity needs a corpus of at least 2 tokens");
    if (model.context_len() < 2) throw InputError("perplexity needs a context of at least 2 tokens");
    const auto windows = perplexity_windows(corpus.size(), model.context_len());
    std::vector<double> nll(windows.size(), 0.0);
    parallel_for(windows.size(), threads, [&](std::size_t w) {
        const auto [start, len] = windows[w];
        const auto toks = corpus.subspan(start, len);
        const Tensor logits = model.logits(toks);
        const std::size_t V = logits.dim(1);
        double sum = 0.0;
        for (std::size_t t = 0; t + 1 < len; ++t) {
            const std::span<const float> row(logits.data() + t * V, V);
            const double lp = log_softmax_at(row, static_cast<std::size_t>(toks[t + 1]));
            if (!std::isfinite(lp)) throw NumericError("non-finite log-probability at corpus position " +
                                                       std::to_string(start + t + 1));
            sum -= lp;
        }
        nll[w] = sum;
    });
    double total = 0.0;
    for (double v : nll) total += v;
    return std::exp(total / static_cast<double>(corpus.size() - 1));
}

/// Trade-off score. Classification: S = acc - alpha * Mq/M (maximized).
/// Generation: S = ppl + alpha * Mq/M (minimized).
inline double compute_score(double perf, double mem_bytes, const ScoreParams& sp, TaskKind task) {
    const double ratio = mem_bytes / sp.baseline_mem_bytes;
    return task == TaskKind::Classification ? perf - sp.alpha * ratio : perf + sp.alpha * ratio;
}

/// Larger is always better: S for classification, -S for generation.
inline double fitness_of(double score, TaskKind task) { return task == TaskKind::Classification ? score : -score; }

// Absorbs rounding in differences such as 0.85 - 0.83 against a 0.02 budget.
inline constexpr double kConstraintSlack = 1e-12;

inline bool check_constraints(double baseline_perf, double perf, double mem_bytes, const Constraints& c,
                              TaskKind task) {
    const double degradation = task == TaskKind::Classification ? baseline_perf - perf : perf - baseline_perf;
    return degradation <= c.perf_budget + kConstraintSlack && mem_bytes <= c.mem_budget_bytes;
}

inline CandidateStats make_stats(double perf, double mem_bytes, const Constraints& c, const ScoreParams& sp,
                                 TaskKind task) {
    CandidateStats s;
    s.perf = perf;
    s.mem_bytes = mem_bytes;
    s.score = compute_score(perf, mem_bytes, sp, task);
    s.fitness = fitness_of(s.score, task);
    s.met = check_constraints(sp.baseline_perf, perf, mem_bytes, c, task);
    return s;
}

/// Measured performance and memory of one quantized candidate.
struct Measurement {
    double perf = 0.0;
    double mem_bytes = 0.0;
};

/// Candidate evaluation: measure (perf, mem), score it, check the constraints.
/// `test()` returns a Measurement; its errors are re-raised tagged with `index`.
template <class TestFn>
    requires std::invocable<TestFn&> && std::convertible_to<std::invoke_result_t<TestFn&>, Measurement>
CandidateStats eval_candidate(TestFn&& test, const Constraints& c, const ScoreParams& sp, TaskKind task,
                              std::size_t index) {
    Measurement m;
    try {
        m = test();
    } catch (const Error&) {
        rethrow_with_context("candidate " + std::to_string(index));
    }
    if (!std::isfinite(m.perf)) throw NumericError("candidate " + std::to_string(index) + ": non-finite performance");
    return make_stats(m.perf, m.mem_bytes, c, sp, task);
}

}  // namespace qslm
