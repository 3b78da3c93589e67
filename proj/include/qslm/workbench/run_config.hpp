#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qslm/error.hpp"
#include "qslm/evaluator.hpp"
#include "qslm/search.hpp"
#include "qslm/workbench/datasets.hpp"

namespace qslm {

struct ModelShape {
    std::size_t embed_dim = 32;
    std::size_t num_blocks = 3;
    std::size_t context_len = 64;
    std::size_t ffn_hidden_dim = 0;  // 0 means 4 x embed_dim
};

/// Everything one CLI invocation needs. Loaded from a JSON file, then
/// overridden field by field by command-line flags.
struct RunConfig {
    std::optional<TaskKind> task;
    std::string checkpoint;
    std::string descriptor;  // counts-only model, e.g. "spikegpt-216m"
    std::string train_data;
    std::string eval_data;
    std::string assignment;  // JSON assignment file for `eval`
    std::string from_trace;  // re-select over an existing trace instead of searching
    std::vector<int> ladder = PrecisionLadder().levels();
    // Accuracy points (classification) or perplexity points (generation).
    std::optional<double> const_a;
    std::optional<double> const_m_bytes;
    std::optional<double> const_m_frac;  // memory budget as a fraction of the baseline bytes
    double alpha = 0.5;
    std::vector<double> alpha_sweep;
    std::uint64_t seed = 0;
    std::string output_dir;
    unsigned threads = 0;  // 0: QSLM_THREADS or every core
    bool greedy_stop = false;
    bool uniform_attention = false;
    ModelShape model;
    int epochs = 20;
    double learning_rate = 5e-3;
    std::size_t batch_size = 8;

    unsigned thread_count() const { return threads ? threads : default_threads(); }
};

inline TaskKind parse_task(const std::string& s) {
    if (s == "classify" || s == "classification") return TaskKind::Classification;
    if (s == "generate" || s == "generation") return TaskKind::Generation;
    throw InputError("unknown task '" + s + "' (expected classify or generate)");
}

inline std::string task_flag(TaskKind t) { return t == TaskKind::Classification ? "classify" : "generate"; }

inline std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= csv.size()) {
        const auto comma = csv.find(',', pos);
        const std::string item = csv.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw InputError("bad number '" + item + "' in list");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

inline nlohmann::ordered_json run_config_to_json(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["task"] = c.task ? nlohmann::ordered_json(task_flag(*c.task)) : nlohmann::ordered_json(nullptr);
    j["checkpoint"] = c.checkpoint;
    j["descriptor"] = c.descriptor;
    j["train_data"] = c.train_data;
    j["eval_data"] = c.eval_data;
    j["assignment"] = c.assignment;
    j["from_trace"] = c.from_trace;
    j["ladder"] = c.ladder;
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    j["const_a"] = opt(c.const_a);
    j["const_m_bytes"] = opt(c.const_m_bytes);
    j["const_m_frac"] = opt(c.const_m_frac);
    j["alpha"] = c.alpha;
    j["alpha_sweep"] = c.alpha_sweep;
    j["seed"] = c.seed;
    j["out"] = c.output_dir;
    j["greedy_stop"] = c.greedy_stop;
    j["uniform_attention"] = c.uniform_attention;
    j["model"] = {{"embed_dim", c.model.embed_dim},
                  {"num_blocks", c.model.num_blocks},
                  {"context_len", c.model.context_len},
                  {"ffn_hidden_dim", c.model.ffn_hidden_dim}};
    j["train"] = {{"epochs", c.epochs}, {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}};
    return j;
}

/// Unknown keys are rejected so that typos do not silently fall back to defaults.
/// `threads` is accepted but never echoed: it does not change any result.
inline RunConfig run_config_from_json(const nlohmann::ordered_json& j) {
    RunConfig c;
    try {
        if (!j.is_object()) throw InputError("run config must be a JSON object");
        for (const auto& [key, v] : j.items()) {
            if (key == "task") {
                if (!v.is_null()) c.task = parse_task(v.get<std::string>());
            } else if (key == "checkpoint") {
                c.checkpoint = v.get<std::string>();
            } else if (key == "descriptor") {
                c.descriptor = v.get<std::string>();
            } else if (key == "train_data") {
                c.train_data = v.get<std::string>();
            } else if (key == "eval_data") {
                c.eval_data = v.get<std::string>();
            } else if (key == "assignment") {
                c.assignment = v.get<std::string>();
            } else if (key == "from_trace") {
                c.from_trace = v.get<std::string>();
            } else if (key == "ladder") {
                c.ladder = v.is_string() ? PrecisionLadder::parse(v.get<std::string>()).levels()
                                         : v.get<std::vector<int>>();
            } else if (key == "const_a") {
                if (!v.is_null()) c.const_a = v.get<double>();
            } else if (key == "const_m_bytes") {
                if (!v.is_null()) c.const_m_bytes = v.get<double>();
            } else if (key == "const_m_frac") {
                if (!v.is_null()) c.const_m_frac = v.get<double>();
            } else if (key == "alpha") {
                c.alpha = v.get<double>();
            } else if (key == "alpha_sweep") {
                c.alpha_sweep = v.is_string() ? parse_double_list(v.get<std::string>()) : v.get<std::vector<double>>();
            } else if (key == "seed") {
                c.seed = v.get<std::uint64_t>();
            } else if (key == "out") {
                c.output_dir = v.get<std::string>();
            } else if (key == "threads") {
                c.threads = v.get<unsigned>();
            } else if (key == "greedy_stop") {
                c.greedy_stop = v.get<bool>();
            } else if (key == "uniform_attention") {
                c.uniform_attention = v.get<bool>();
            } else if (key == "model") {
                for (const auto& [mk, mv] : v.items()) {
                    if (mk == "embed_dim") c.model.embed_dim = mv.get<std::size_t>();
                    else if (mk == "num_blocks") c.model.num_blocks = mv.get<std::size_t>();
                    else if (mk == "context_len") c.model.context_len = mv.get<std::size_t>();
                    else if (mk == "ffn_hidden_dim") c.model.ffn_hidden_dim = mv.get<std::size_t>();
                    else throw InputError("unknown run config key 'model." + mk + "'");
                }
            } else if (key == "train") {
                for (const auto& [tk, tv] : v.items()) {
                    if (tk == "epochs") c.epochs = tv.get<int>();
                    else if (tk == "learning_rate") c.learning_rate = tv.get<double>();
                    else if (tk == "batch_size") c.batch_size = tv.get<std::size_t>();
                    else throw InputError("unknown run config key 'train." + tk + "'");
                }
            } else {
                throw InputError("unknown run config key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("malformed run config: ") + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    try {
        return run_config_from_json(nlohmann::ordered_json::parse(read_text_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

/// Fails early when a path the command depends on does not exist.
inline void require_path(const std::string& path, const char* what) {
    if (path.empty()) throw InputError(std::string("missing ") + what);
    if (!std::filesystem::exists(path)) throw IoError(std::string(what) + " not found: " + path);
}

}  // namespace qslm
