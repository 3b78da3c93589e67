#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qslm/analyzer/hierarchy.hpp"
#include "qslm/error.hpp"
#include "qslm/evaluator.hpp"
#include "qslm/quantizer.hpp"

namespace qslm {

inline constexpr const char* kTraceSchema = "qslm-trace-1";

/// Bit-widths tried by the search, strictly decreasing.
class PrecisionLadder {
public:
    PrecisionLadder() : PrecisionLadder(std::vector<int>{16, 14, 12, 10, 8, 6, 4}) {}

    explicit PrecisionLadder(std::vector<int> levels) : levels_(std::move(levels)) {
        if (levels_.empty()) throw InputError("precision ladder is empty");
        for (std::size_t i = 0; i < levels_.size(); ++i) {
            (void)PrecisionLevel(levels_[i]);
            if (i && levels_[i] >= levels_[i - 1]) throw InputError("precision ladder must be strictly decreasing");
        }
    }

    static PrecisionLadder parse(const std::string& csv) {
        std::vector<int> levels;
        std::stringstream ss(csv);
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                std::size_t used = 0;
                levels.push_back(std::stoi(item, &used));
                if (used != item.size()) throw std::invalid_argument(item);
            } catch (const std::exception&) {
                throw InputError("bad precision level '" + item + "' in ladder");
            }
        }
        return PrecisionLadder(std::move(levels));
    }

    const std::vector<int>& levels() const noexcept { return levels_; }
    std::size_t size() const noexcept { return levels_.size(); }
    int operator[](std::size_t i) const { return levels_.at(i); }

    // Position of `bits` in the ladder, if present.
    std::optional<std::size_t> find(int bits) const {
        auto it = std::find(levels_.begin(), levels_.end(), bits);
        if (it == levels_.end()) return std::nullopt;
        return static_cast<std::size_t>(it - levels_.begin());
    }

private:
    std::vector<int> levels_;
};

enum class PhaseKind { Init, Global, Block, Module };

struct Phase {
    PhaseKind kind = PhaseKind::Init;
    BlockId block;       // Block, Module
    std::string module;  // Module

    std::string name() const {
        switch (kind) {
            case PhaseKind::Init: return "init";
            case PhaseKind::Global: return "global";
            case PhaseKind::Block: return "block";
            case PhaseKind::Module: return "module";
        }
        return "?";
    }

    friend bool operator==(const Phase&, const Phase&) = default;
};

struct Candidate {
    std::size_t index = 0;
    Phase phase;
    std::optional<int> level_index;  // ladder position tried; none for the init candidate
    Assignment assignment;
    CandidateStats stats;
    std::optional<std::size_t> duplicate_of;  // set when this trial repeated an earlier assignment

    friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Last-accepted and resume indices per scope. Unset means "before the ladder".
struct PhaseMarkers {
    std::optional<int> i_last;
    std::optional<int> i_tmp;
    std::map<BlockId, int> i_last2;
    std::map<BlockId, int> i_tmp2;
    std::map<ModuleId, int> i_last3;

    friend bool operator==(const PhaseMarkers&, const PhaseMarkers&) = default;
};

/// Ordered ledger of every evaluated candidate plus the final selection.
struct SearchTrace {
    TaskKind task = TaskKind::Classification;
    std::vector<int> ladder;
    Constraints constraints;
    double alpha = 0.5;
    CandidateStats baseline;
    std::vector<Candidate> candidates;
    PhaseMarkers markers;
    Assignment best;  // running accepted configuration at the end of the module phase
    std::optional<std::size_t> selected;

    ScoreParams score_params() const { return {alpha, baseline.mem_bytes, baseline.perf}; }

    friend bool operator==(const SearchTrace&, const SearchTrace&) = default;
};

/// Raised when no candidate, baseline included, meets the constraints.
class InfeasibleSearch : public Error {
public:
    explicit InfeasibleSearch(SearchTrace trace)
        : Error("no candidate meets the constraints (" + std::to_string(trace.candidates.size()) +
                " candidates evaluated)"),
          trace_(std::move(trace)) {}

    const SearchTrace& trace() const noexcept { return trace_; }

private:
    SearchTrace trace_;
};

struct SearchOptions {
    bool greedy_stop = false;  // stop a scope's ladder scan at its first failure
};

/// Performance of the network quantized with an assignment.
using PerfOracle = std::function<double(const Assignment&)>;

/// The met candidate with maximal fitness under `sp`; ties go to smaller memory,
/// then to the earlier index.
inline std::optional<std::size_t> select_final(const std::vector<Candidate>& candidates, const ScoreParams& sp,
                                               TaskKind task) {
    std::optional<std::size_t> best;
    double best_fit = 0.0;
    double best_mem = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto& s = candidates[i].stats;
        if (!s.met) continue;
        const double fit = fitness_of(compute_score(s.perf, s.mem_bytes, sp, task), task);
        if (!best || fit > best_fit || (fit == best_fit && s.mem_bytes < best_mem)) {
            best = i;
            best_fit = fit;
            best_mem = s.mem_bytes;
        }
    }
    return best;
}

inline std::optional<std::size_t> select_final(const SearchTrace& trace, const ScoreParams& sp) {
    return select_final(trace.candidates, sp, trace.task);
}

namespace detail {

class TieredSearch {
public:
    TieredSearch(const Hierarchy& h, TaskKind task, const PrecisionLadder& ladder, const Constraints& c,
                 double alpha, const PerfOracle& oracle, const SearchOptions& opt)
        : h_(h), ladder_(ladder), oracle_(oracle), opt_(opt) {
        c.validate();
        if (alpha < 0.0) throw InputError("alpha must be >= 0");
        trace_.task = task;
        trace_.ladder = ladder.levels();
        trace_.constraints = c;
        trace_.alpha = alpha;
    }

    SearchTrace run() {
        init();
        global_phase();
        block_phase();
        module_phase();
        trace_.best = best_;
        trace_.selected = select_final(trace_, sp_);
        if (!trace_.selected) throw InfeasibleSearch(std::move(trace_));
        return std::move(trace_);
    }

private:
    void init() {
        const Assignment full = Assignment::full_precision();
        const double perf = oracle_(full);
        const double mem = memory_footprint(h_, full).bytes();
        sp_ = ScoreParams{trace_.alpha, mem, perf};
        Candidate c0;
        c0.index = 0;
        c0.phase = Phase{PhaseKind::Init, {}, {}};
        c0.assignment = full;
        c0.stats = make_stats(perf, mem, trace_.constraints, sp_, trace_.task);
        trace_.baseline = c0.stats;
        seen_[full.resolved(h_)] = 0;
        trace_.candidates.push_back(std::move(c0));
        best_ = full;
        // Resume index for the block phase when the global phase never fails.
        trace_.markers.i_tmp = 0;
    }

    const Candidate& evaluate(const Assignment& trial, const Phase& phase, int level) {
        Candidate c;
        c.index = trace_.candidates.size();
        c.phase = phase;
        c.level_index = level;
        c.assignment = trial;
        const auto key = trial.resolved(h_);
        if (auto it = seen_.find(key); it != seen_.end()) {
            c.duplicate_of = it->second;
            c.stats = trace_.candidates[it->second].stats;
        } else {
            c.stats = eval_candidate(
                [&] { return Measurement{oracle_(trial), memory_footprint(h_, trial).bytes()}; },
                trace_.constraints, sp_, trace_.task, c.index);
            seen_[key] = c.index;
        }
        trace_.candidates.push_back(std::move(c));
        return trace_.candidates.back();
    }

    void global_phase() {
        auto& mk = trace_.markers;
        for (std::size_t i = 0; i < ladder_.size(); ++i) {
            const Assignment trial = Assignment::uniform(ladder_[i]);
            if (evaluate(trial, Phase{PhaseKind::Global, {}, {}}, static_cast<int>(i)).stats.met) {
                mk.i_last = static_cast<int>(i);
                best_ = trial;
            } else {
                mk.i_tmp = mk.i_last;  // unset when nothing has been accepted yet
                if (opt_.greedy_stop) break;
            }
        }
    }

    void block_phase() {
        auto& mk = trace_.markers;
        const std::size_t start = mk.i_tmp ? static_cast<std::size_t>(*mk.i_tmp) : 0;
        for (const BlockId& k : h_.blocks()) {
            for (std::size_t i = start; i < ladder_.size(); ++i) {
                Assignment trial = best_;
                trial.set_block(k, ladder_[i]);
                if (evaluate(trial, Phase{PhaseKind::Block, k, {}}, static_cast<int>(i)).stats.met) {
                    mk.i_last2[k] = static_cast<int>(i);
                    best_ = trial;
                } else {
                    if (auto it = mk.i_last2.find(k); it != mk.i_last2.end()) {
                        mk.i_tmp2[k] = it->second;
                    } else {
                        mk.i_tmp2.erase(k);
                    }
                    if (opt_.greedy_stop) break;
                }
            }
        }
    }

    // Modules of attention blocks only. Each scan starts one rung below the
    // block's accepted precision so the first trial is never a no-op.
    void module_phase() {
        auto& mk = trace_.markers;
        for (const BlockId& k : h_.attention_blocks()) {
            const auto modules = h_.modules_of(k);
            const int block_bits = best_.resolve(modules.front()).bits();
            const auto pos = ladder_.find(block_bits);
            const std::size_t start = pos ? *pos + 1 : 0;
            for (const ModuleId& m : modules) {
                for (std::size_t i = start; i < ladder_.size(); ++i) {
                    Assignment trial = best_;
                    trial.set_module(m, ladder_[i]);
                    if (evaluate(trial, Phase{PhaseKind::Module, k, m.module}, static_cast<int>(i)).stats.met) {
                        mk.i_last3[m] = static_cast<int>(i);
                        best_ = trial;
                    } else if (opt_.greedy_stop) {
                        break;
                    }
                }
            }
        }
    }

    const Hierarchy& h_;
    const PrecisionLadder& ladder_;
    const PerfOracle& oracle_;
    SearchOptions opt_;
    SearchTrace trace_;
    ScoreParams sp_;
    Assignment best_;
    std::map<std::vector<int>, std::size_t> seen_;
};

}  // namespace detail

/// Global -> block -> module search. Candidate 0 is the full-precision model;
/// every trial is scored and constraint-checked, and the met candidate with
/// the best fitness is selected. Throws InfeasibleSearch (carrying the full
/// trace) when nothing meets the constraints.
inline SearchTrace run_tiered_search(const Hierarchy& h, TaskKind task, const PrecisionLadder& ladder,
                                     const Constraints& constraints, double alpha, const PerfOracle& oracle,
                                     const SearchOptions& opt = {}) {
    return detail::TieredSearch(h, task, ladder, constraints, alpha, oracle, opt).run();
}

struct AlphaSelection {
    double alpha = 0.0;
    std::optional<std::size_t> selected;
    double score = 0.0;
    double fitness = 0.0;
};

/// Re-selects over a finished trace for each alpha. Feasibility does not depend
/// on alpha, so the explored candidates are shared.
inline std::vector<AlphaSelection> alpha_sweep(const SearchTrace& trace, const std::vector<double>& alphas) {
    std::vector<AlphaSelection> out;
    for (double a : alphas) {
        ScoreParams sp = trace.score_params();
        sp.alpha = a;
        AlphaSelection sel{a, select_final(trace, sp), 0.0, 0.0};
        if (sel.selected) {
            const auto& s = trace.candidates[*sel.selected].stats;
            sel.score = compute_score(s.perf, s.mem_bytes, sp, trace.task);
            sel.fitness = fitness_of(sel.score, trace.task);
        }
        out.push_back(sel);
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON-lines serialization: one candidate record per line, then a summary.

inline nlohmann::ordered_json candidate_to_json(const Candidate& c) {
    nlohmann::ordered_json j;
    j["record"] = "candidate";
    j["c"] = c.index;
    j["phase"] = c.phase.name();
    if (c.phase.kind == PhaseKind::Block || c.phase.kind == PhaseKind::Module) j["block"] = c.phase.block.name();
    if (c.phase.kind == PhaseKind::Module) j["module"] = c.phase.module;
    j["level_index"] = c.level_index ? nlohmann::ordered_json(*c.level_index) : nlohmann::ordered_json(nullptr);
    j["assignment"] = assignment_to_json(c.assignment);
    j["perf"] = c.stats.perf;
    j["mem_bytes"] = c.stats.mem_bytes;
    j["score"] = c.stats.score;
    j["fitness"] = c.stats.fitness;
    j["met"] = c.stats.met;
    j["duplicate_of"] = c.duplicate_of ? nlohmann::ordered_json(*c.duplicate_of) : nlohmann::ordered_json(nullptr);
    return j;
}

inline Candidate candidate_from_json(const nlohmann::ordered_json& j) {
    Candidate c;
    c.index = j.at("c").get<std::size_t>();
    const std::string phase = j.at("phase").get<std::string>();
    if (phase == "init") {
        c.phase.kind = PhaseKind::Init;
    } else if (phase == "global") {
        c.phase.kind = PhaseKind::Global;
    } else if (phase == "block") {
        c.phase = Phase{PhaseKind::Block, BlockId::parse(j.at("block").get<std::string>()), {}};
    } else if (phase == "module") {
        c.phase = Phase{PhaseKind::Module, BlockId::parse(j.at("block").get<std::string>()),
                        j.at("module").get<std::string>()};
    } else {
        throw InputError("unknown phase '" + phase + "' in trace");
    }
    if (!j.at("level_index").is_null()) c.level_index = j.at("level_index").get<int>();
    c.assignment = assignment_from_json(j.at("assignment"));
    c.stats.perf = j.at("perf").get<double>();
    c.stats.mem_bytes = j.at("mem_bytes").get<double>();
    c.stats.score = j.at("score").get<double>();
    c.stats.fitness = j.at("fitness").get<double>();
    c.stats.met = j.at("met").get<bool>();
    if (j.contains("duplicate_of") && !j.at("duplicate_of").is_null()) {
        c.duplicate_of = j.at("duplicate_of").get<std::size_t>();
    }
    return c;
}

namespace detail {

inline nlohmann::ordered_json stats_to_json(const CandidateStats& s) {
    return {{"perf", s.perf}, {"mem_bytes", s.mem_bytes}, {"score", s.score}, {"fitness", s.fitness}, {"met", s.met}};
}

inline CandidateStats stats_from_json(const nlohmann::ordered_json& j) {
    return {j.at("perf").get<double>(), j.at("mem_bytes").get<double>(), j.at("score").get<double>(),
            j.at("fitness").get<double>(), j.at("met").get<bool>()};
}

inline nlohmann::ordered_json opt_int(const std::optional<int>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

inline nlohmann::ordered_json trace_summary_json(const SearchTrace& t) {
    using nlohmann::ordered_json;
    ordered_json j;
    j["record"] = "summary";
    j["schema"] = kTraceSchema;
    j["task"] = task_name(t.task);
    j["ladder"] = t.ladder;
    j["const_a"] = t.constraints.perf_budget;
    j["const_m_bytes"] = t.constraints.mem_budget_bytes;
    j["alpha"] = t.alpha;
    j["baseline"] = detail::stats_to_json(t.baseline);
    j["selected"] = t.selected ? ordered_json(*t.selected) : ordered_json(nullptr);
    j["best"] = assignment_to_json(t.best);
    ordered_json m;
    m["I_last"] = detail::opt_int(t.markers.i_last);
    m["I_tmp"] = detail::opt_int(t.markers.i_tmp);
    m["I_last2"] = ordered_json::object();
    for (const auto& [b, i] : t.markers.i_last2) m["I_last2"][b.name()] = i;
    m["I_tmp2"] = ordered_json::object();
    for (const auto& [b, i] : t.markers.i_tmp2) m["I_tmp2"][b.name()] = i;
    m["I_last3"] = ordered_json::object();
    for (const auto& [id, i] : t.markers.i_last3) m["I_last3"][id.block.name() + "/" + id.module] = i;
    j["markers"] = std::move(m);
    return j;
}

inline void write_trace(const SearchTrace& t, std::ostream& os) {
    for (const auto& c : t.candidates) os << candidate_to_json(c).dump() << "\n";
    os << trace_summary_json(t).dump() << "\n";
}

inline SearchTrace read_trace(std::istream& is) {
    SearchTrace t;
    bool have_summary = false;
    std::string line;
    try {
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::ordered_json::parse(line);
            const std::string record = j.at("record").get<std::string>();
            if (record == "candidate") {
                t.candidates.push_back(candidate_from_json(j));
            } else if (record == "summary") {
                if (j.at("schema").get<std::string>() != kTraceSchema) throw InputError("unsupported trace schema");
                t.task = j.at("task").get<std::string>() == "classification" ? TaskKind::Classification
                                                                             : TaskKind::Generation;
                t.ladder = j.at("ladder").get<std::vector<int>>();
                t.constraints.perf_budget = j.at("const_a").get<double>();
                t.constraints.mem_budget_bytes = j.at("const_m_bytes").get<double>();
                t.alpha = j.at("alpha").get<double>();
                t.baseline = detail::stats_from_json(j.at("baseline"));
                if (!j.at("selected").is_null()) t.selected = j.at("selected").get<std::size_t>();
                t.best = assignment_from_json(j.at("best"));
                const auto& m = j.at("markers");
                if (!m.at("I_last").is_null()) t.markers.i_last = m.at("I_last").get<int>();
                if (!m.at("I_tmp").is_null()) t.markers.i_tmp = m.at("I_tmp").get<int>();
                for (const auto& [k, v] : m.at("I_last2").items()) t.markers.i_last2[BlockId::parse(k)] = v.get<int>();
                for (const auto& [k, v] : m.at("I_tmp2").items()) t.markers.i_tmp2[BlockId::parse(k)] = v.get<int>();
                for (const auto& [k, v] : m.at("I_last3").items()) {
                    const auto slash = k.find('/');
                    t.markers.i_last3[ModuleId{BlockId::parse(k.substr(0, slash)), k.substr(slash + 1)}] = v.get<int>();
                }
                have_summary = true;
            } else {
                throw InputError("unknown trace record '" + record + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed trace: ") + e.what());
    }
    if (!have_summary) throw InputError("trace has no summary record");
    return t;
}

}  // namespace qslm
