#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qslm/analyzer/hierarchy.hpp"
#include "qslm/error.hpp"
#include "qslm/evaluator.hpp"
#include "qslm/quantizer.hpp"
#include "qslm/search.hpp"

namespace qslm {

/// Share of the total parameter count held by each block, in hierarchy order.
inline std::vector<std::pair<BlockId, double>> memory_proportions(const Hierarchy& h) {
    const std::size_t total = h.total_params();
    if (total == 0) throw InputError("memory proportions of an empty hierarchy");
    std::vector<std::pair<BlockId, double>> out;
    for (const auto& b : h.blocks()) {
        out.emplace_back(b, static_cast<double>(h.block_param_count(b)) / static_cast<double>(total));
    }
    return out;
}

struct SensitivityCell {
    BlockId block;
    int bits = 32;
    double metric = 0.0;

    friend bool operator==(const SensitivityCell&, const SensitivityCell&) = default;
};

/// Task metric with one block quantized at a time (others at full precision).
struct SensitivityProfile {
    TaskKind task = TaskKind::Classification;
    std::vector<int> levels;  // 32 first, then the ladder
    std::vector<SensitivityCell> cells;  // ordered by block, then by levels

    std::optional<double> metric(const BlockId& b, int bits) const {
        for (const auto& c : cells) {
            if (c.block == b && c.bits == bits) return c.metric;
        }
        return std::nullopt;
    }

    friend bool operator==(const SensitivityProfile&, const SensitivityProfile&) = default;
};

namespace detail {

inline std::vector<int> sweep_levels(const PrecisionLadder& ladder) {
    std::vector<int> levels{32};
    for (int b : ladder.levels()) {
        if (b != 32) levels.push_back(b);
    }
    return levels;
}

}  // namespace detail

inline SensitivityProfile block_sensitivity_sweep(const Hierarchy& h, TaskKind task, const PrecisionLadder& ladder,
                                                  const PerfOracle& oracle) {
    SensitivityProfile p;
    p.task = task;
    p.levels = detail::sweep_levels(ladder);
    for (const auto& b : h.blocks()) {
        for (int bits : p.levels) {
            Assignment a = Assignment::full_precision();
            a.set_block(b, bits);
            try {
                p.cells.push_back({b, bits, oracle(a)});
            } catch (const Error&) {
                rethrow_with_context("sensitivity cell (" + b.name() + ", " + std::to_string(bits) + " bits)");
            }
        }
    }
    return p;
}

struct UniformSweepRow {
    int bits = 32;
    double metric = 0.0;
    double mem_bytes = 0.0;
};

/// All attention blocks quantized jointly at each level; input/output stay at 32 bits.
inline std::vector<UniformSweepRow> uniform_attention_sweep(const Hierarchy& h, TaskKind, const PrecisionLadder& ladder,
                                                            const PerfOracle& oracle) {
    std::vector<UniformSweepRow> out;
    for (int bits : detail::sweep_levels(ladder)) {
        Assignment a = Assignment::full_precision();
        for (const auto& b : h.attention_blocks()) a.set_block(b, bits);
        try {
            out.push_back({bits, oracle(a), memory_footprint(h, a).bytes()});
        } catch (const Error&) {
            rethrow_with_context("uniform attention sweep at " + std::to_string(bits) + " bits");
        }
    }
    return out;
}

/// Degradation of the input/output blocks versus the median attention block at one level.
struct SensitivityShape {
    int bits = 0;
    double input_delta = 0.0;
    double output_delta = 0.0;
    double median_attention_delta = 0.0;
    bool io_more_sensitive = false;
};

inline double degradation(TaskKind task, double baseline, double metric) {
    return task == TaskKind::Classification ? baseline - metric : metric - baseline;
}

inline SensitivityShape sensitivity_shape(const SensitivityProfile& p, int bits) {
    SensitivityShape s;
    s.bits = bits;
    std::vector<double> att;
    bool have_in = false, have_out = false;
    for (const auto& c : p.cells) {
        if (c.bits != bits) continue;
        const auto base = p.metric(c.block, 32);
        if (!base) throw InputError("profile has no 32-bit baseline for " + c.block.name());
        const double d = degradation(p.task, *base, c.metric);
        switch (c.block.kind) {
            case BlockKind::Input: s.input_delta = d; have_in = true; break;
            case BlockKind::Output: s.output_delta = d; have_out = true; break;
            case BlockKind::Attention: att.push_back(d); break;
        }
    }
    if (!have_in || !have_out || att.empty()) throw InputError("profile lacks cells at " + std::to_string(bits) + " bits");
    std::sort(att.begin(), att.end());
    const std::size_t n = att.size();
    s.median_attention_delta = n % 2 ? att[n / 2] : 0.5 * (att[n / 2 - 1] + att[n / 2]);
    s.io_more_sensitive = std::max(s.input_delta, s.output_delta) > s.median_attention_delta;
    return s;
}

// ---------------------------------------------------------------------------
// Report formats.

inline std::string profile_to_csv(const SensitivityProfile& p) {
    std::ostringstream os;
    os.precision(17);
    os << "block,bits,metric\n";
    for (const auto& c : p.cells) os << c.block.name() << "," << c.bits << "," << c.metric << "\n";
    return os.str();
}

inline SensitivityProfile profile_from_csv(const std::string& csv, TaskKind task) {
    SensitivityProfile p;
    p.task = task;
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    if (line != "block,bits,metric") throw InputError("sensitivity CSV has an unexpected header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string block, bits, metric;
        if (!std::getline(ls, block, ',') || !std::getline(ls, bits, ',') || !std::getline(ls, metric)) {
            throw InputError("bad sensitivity CSV row '" + line + "'");
        }
        SensitivityCell c{BlockId::parse(block), std::stoi(bits), std::stod(metric)};
        if (std::find(p.levels.begin(), p.levels.end(), c.bits) == p.levels.end()) p.levels.push_back(c.bits);
        p.cells.push_back(c);
    }
    return p;
}

inline nlohmann::ordered_json profile_to_json(const SensitivityProfile& p) {
    nlohmann::ordered_json j;
    j["task"] = task_name(p.task);
    j["levels"] = p.levels;
    auto cells = nlohmann::ordered_json::array();
    for (const auto& c : p.cells) cells.push_back({{"block", c.block.name()}, {"bits", c.bits}, {"metric", c.metric}});
    j["cells"] = std::move(cells);
    return j;
}

inline SensitivityProfile profile_from_json(const nlohmann::ordered_json& j) {
    SensitivityProfile p;
    p.task = j.at("task").get<std::string>() == "classification" ? TaskKind::Classification : TaskKind::Generation;
    p.levels = j.at("levels").get<std::vector<int>>();
    for (const auto& c : j.at("cells")) {
        p.cells.push_back({BlockId::parse(c.at("block").get<std::string>()), c.at("bits").get<int>(),
                           c.at("metric").get<double>()});
    }
    return p;
}

/// Plot data: one series per block, points are [bits, metric].
inline nlohmann::ordered_json profile_plot_series(const SensitivityProfile& p) {
    auto series = nlohmann::ordered_json::array();
    for (const auto& c : p.cells) {
        if (series.empty() || series.back()["block"] != c.block.name()) {
            series.push_back({{"block", c.block.name()}, {"points", nlohmann::ordered_json::array()}});
        }
        series.back()["points"].push_back({c.bits, c.metric});
    }
    return {{"task", task_name(p.task)}, {"series", std::move(series)}};
}

}  // namespace qslm
