#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qslm/analyzer/hierarchy.hpp"
#include "qslm/analyzer/sensitivity.hpp"
#include "qslm/search.hpp"
#include "qslm/workbench/datasets.hpp"
#include "qslm/workbench/run_config.hpp"
#include "qslm/workbench/runner.hpp"

namespace qslm {

inline constexpr const char* kReportSchema = "qslm-report-1";

/// Re-measurement of the selected candidate from the reloaded quantized checkpoint.
struct PostHocCheck {
    double perf = 0.0;
    double mem_bytes = 0.0;
    bool met = false;
    bool matches_trace = false;
};

inline double memory_reduction_pct(double mem_bytes, double baseline_mem_bytes) {
    return (1.0 - mem_bytes / baseline_mem_bytes) * 100.0;
}

inline nlohmann::ordered_json shape_to_json(const SensitivityShape& s) {
    return {{"bits", s.bits},
            {"input_degradation", s.input_delta},
            {"output_degradation", s.output_delta},
            {"median_attention_degradation", s.median_attention_delta},
            {"io_more_sensitive", s.io_more_sensitive}};
}

// Level used for the shape check: 4 bits when swept, else the lowest level.
inline int shape_check_bits(const std::vector<int>& levels) {
    for (int b : levels) {
        if (b == 4) return 4;
    }
    return *std::min_element(levels.begin(), levels.end());
}

inline nlohmann::ordered_json case_row(const SearchTrace& t, const AlphaSelection& sel) {
    nlohmann::ordered_json row;
    row["alpha"] = sel.alpha;
    if (!sel.selected) {
        row["candidate"] = nullptr;
        return row;
    }
    const auto& c = t.candidates[*sel.selected];
    row["candidate"] = c.index;
    row["phase"] = c.phase.name();
    row["perf"] = c.stats.perf;
    row["mem_bytes"] = c.stats.mem_bytes;
    row["score"] = sel.score;
    row["memory_reduction_pct"] = memory_reduction_pct(c.stats.mem_bytes, t.baseline.mem_bytes);
    row["assignment"] = assignment_to_json(c.assignment);
    return row;
}

/// Search report. Every number in it can be recomputed from the trace.
inline nlohmann::ordered_json build_report(const SearchTrace& t, const RunConfig& cfg, const Hierarchy* h,
                                           const std::optional<SensitivityProfile>& profile,
                                           const std::optional<PostHocCheck>& post_hoc) {
    using nlohmann::ordered_json;
    ordered_json r;
    r["schema"] = kReportSchema;
    r["task"] = task_name(t.task);
    r["metric"] = metric_name(t.task);
    r["run"] = {{"ladder", t.ladder},
                {"const_a", t.constraints.perf_budget},
                {"const_m_bytes", t.constraints.mem_budget_bytes},
                {"alpha", t.alpha},
                {"greedy_stop", cfg.greedy_stop},
                {"seed", cfg.seed}};
    r["baseline"] = {{"perf", t.baseline.perf}, {"mem_bytes", t.baseline.mem_bytes}};

    if (profile) {
        ordered_json s = profile_to_json(*profile);
        s["shape"] = shape_to_json(sensitivity_shape(*profile, shape_check_bits(profile->levels)));
        r["sensitivity"] = std::move(s);
    } else {
        r["sensitivity"] = nullptr;
    }

    ordered_json summary;
    summary["candidates"] = t.candidates.size();
    std::size_t distinct = 0, met = 0;
    ordered_json per_phase = {{"init", 0}, {"global", 0}, {"block", 0}, {"module", 0}};
    for (const auto& c : t.candidates) {
        if (!c.duplicate_of) ++distinct;
        if (c.stats.met) ++met;
        per_phase[c.phase.name()] = per_phase[c.phase.name()].get<std::size_t>() + 1;
    }
    summary["distinct_evaluations"] = distinct;
    summary["met"] = met;
    summary["per_phase"] = std::move(per_phase);
    ordered_json markers = trace_summary_json(t).at("markers");
    summary["markers"] = std::move(markers);
    r["trace_summary"] = std::move(summary);

    if (t.selected) {
        const auto& c = t.candidates[*t.selected];
        ordered_json sel;
        sel["candidate"] = c.index;
        sel["phase"] = c.phase.name();
        sel["perf"] = c.stats.perf;
        sel["mem_bytes"] = c.stats.mem_bytes;
        sel["score"] = c.stats.score;
        sel["met"] = c.stats.met;
        sel["assignment"] = assignment_to_json(c.assignment);
        if (h) {
            ordered_json bits = ordered_json::object();
            const auto resolved = c.assignment.resolved(*h);
            for (std::size_t i = 0; i < h->size(); ++i) bits[h->entries()[i].id.name()] = resolved[i];
            sel["resolved_bits"] = std::move(bits);
        }
        r["selected"] = std::move(sel);
        r["memory_reduction_pct"] = memory_reduction_pct(c.stats.mem_bytes, t.baseline.mem_bytes);
    } else {
        r["selected"] = nullptr;
        r["memory_reduction_pct"] = nullptr;
    }

    std::vector<double> alphas = cfg.alpha_sweep.empty() ? std::vector<double>{t.alpha} : cfg.alpha_sweep;
    ordered_json cases = ordered_json::array();
    for (const auto& sel : alpha_sweep(t, alphas)) cases.push_back(case_row(t, sel));
    r["cases"] = std::move(cases);

    if (post_hoc) {
        r["post_hoc"] = {{"perf", post_hoc->perf},
                         {"mem_bytes", post_hoc->mem_bytes},
                         {"met", post_hoc->met},
                         {"matches_trace", post_hoc->matches_trace}};
    } else {
        r["post_hoc"] = nullptr;
    }
    r["power"] = "not measured";
    return r;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

}  // namespace qslm
