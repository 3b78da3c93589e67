#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qslm/analyzer/hierarchy.hpp"
#include "qslm/analyzer/sensitivity.hpp"
#include "qslm/model/checkpoint.hpp"
#include "qslm/model/trainer.hpp"
#include "qslm/quantizer.hpp"
#include "qslm/search.hpp"
#include "qslm/workbench/datasets.hpp"
#include "qslm/workbench/report.hpp"
#include "qslm/workbench/run_config.hpp"
#include "qslm/workbench/runner.hpp"
#include "qslm/workbench/tokenizer.hpp"

namespace qslm::cli {

enum ExitCode : int { kOk = 0, kInfeasible = 1, kUsage = 2, kNumeric = 3 };

using nlohmann::ordered_json;
namespace fs = std::filesystem;

// Largest |perf difference| tolerated between the trace and the reloaded checkpoint.
inline constexpr double kPostHocTolerance = 1e-6;

struct LoadedModel {
    Model model;
    Tokenizer tokenizer;
    Hierarchy hierarchy;
    std::optional<Assignment> stored;  // set on checkpoints written by search
};

inline LoadedModel load_model(const RunConfig& cfg) {
    require_path(cfg.checkpoint, "checkpoint (--ckpt)");
    Checkpoint ckpt = load_checkpoint(cfg.checkpoint);
    Tokenizer tok(ckpt.vocab);
    if (tok.vocab_size() != ckpt.config.vocab_size) {
        throw ModelIntegrityError("checkpoint vocab has " + std::to_string(tok.vocab_size()) +
                                  " entries but the model expects " + std::to_string(ckpt.config.vocab_size));
    }
    if (cfg.task && *cfg.task != task_of(ckpt.config)) {
        throw InputError(std::string("--task ") + task_flag(*cfg.task) + " does not match the checkpoint's " +
                         task_name(task_of(ckpt.config)) + " head");
    }
    Hierarchy h = extract_hierarchy(ckpt.params, ckpt.config);
    std::optional<Assignment> stored;
    if (ckpt.metadata.contains("quantized")) stored = assignment_from_json(ckpt.metadata["quantized"].at("assignment"));
    return {Model{ckpt.config, std::move(ckpt.params)}, std::move(tok), std::move(h), std::move(stored)};
}

inline TaskData load_eval_data(const RunConfig& cfg, const LoadedModel& lm) {
    require_path(cfg.eval_data, "evaluation data (--eval-data)");
    return load_task_data(task_of(lm.model.config), cfg.eval_data, lm.tokenizer);
}

inline void emit(std::ostream& out, const ordered_json& j) { out << j.dump(2) << "\n"; }

// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& cfg, std::ostream& out) {
    if (!cfg.task) throw InputError("train needs --task");
    require_path(cfg.train_data, "training data (--data)");
    if (cfg.output_dir.empty()) throw InputError("train needs --out");
    if (cfg.epochs < 1) throw InputError("--epochs must be >= 1");
    if (cfg.batch_size < 1) throw InputError("--batch-size must be >= 1");

    TrainingData data;
    Tokenizer tok;
    TaskHead head = TaskHead::generation();
    if (*cfg.task == TaskKind::Classification) {
        const auto rows = read_classification_tsv(cfg.train_data);
        tok = Tokenizer::fit(joined_text(rows));
        data.examples = encode_examples(tok, rows);
        head = TaskHead::classification(std::max<std::size_t>(2, class_count(rows)));
    } else {
        const std::string text = read_text_file(cfg.train_data);
        tok = Tokenizer::fit(text);
        data.corpus = tok.encode(text);
    }
    const ModelConfig mc = make_config(tok.vocab_size(), cfg.model.embed_dim, cfg.model.num_blocks,
                                       cfg.model.context_len, head, cfg.model.ffn_hidden_dim);
    TrainOptions opt;
    opt.epochs = cfg.epochs;
    opt.learning_rate = cfg.learning_rate;
    opt.batch_size = cfg.batch_size;
    opt.seed = cfg.seed;
    double last_loss = 0.0;
    opt.on_epoch = [&](int, double loss) { last_loss = loss; };

    Checkpoint ckpt;
    ckpt.config = mc;
    ckpt.params = train_toy_checkpoint(mc, data, opt);
    ckpt.vocab = tok.bytes();
    ckpt.metadata = {{"trained",
                      {{"task", task_flag(*cfg.task)},
                       {"seed", cfg.seed},
                       {"epochs", cfg.epochs},
                       {"learning_rate", cfg.learning_rate},
                       {"batch_size", cfg.batch_size}}}};
    save_checkpoint(ckpt, cfg.output_dir);

    ordered_json j;
    j["checkpoint"] = cfg.output_dir;
    j["task"] = task_name(*cfg.task);
    j["vocab_size"] = tok.vocab_size();
    j["params"] = total_param_count(ckpt.params);
    j["final_loss"] = last_loss;
    if (!cfg.eval_data.empty()) {
        require_path(cfg.eval_data, "evaluation data (--eval-data)");
        const TaskData ev = load_task_data(*cfg.task, cfg.eval_data, tok);
        j[metric_name(*cfg.task)] = measure(Model{mc, ckpt.params}, ev, cfg.thread_count());
    }
    emit(out, j);
    return kOk;
}

// ---------------------------------------------------------------------------

inline ordered_json analysis_json(const Hierarchy& h, const ModelConfig& mc, const std::string& source) {
    ordered_json j;
    j["schema"] = "qslm-analysis-1";
    j["source"] = source;
    j["config"] = config_to_json(mc);
    j["total_params"] = h.total_params();
    j["full_precision_bytes"] = memory_footprint(h, Assignment::full_precision()).bytes();
    double attention = 0.0;
    ordered_json blocks = ordered_json::array();
    for (const auto& [b, share] : memory_proportions(h)) {
        ordered_json bj;
        bj["block"] = b.name();
        bj["params"] = h.block_param_count(b);
        bj["proportion"] = share;
        ordered_json mods = ordered_json::array();
        for (const auto& m : h.modules_of(b)) {
            const auto& e = h.entries()[h.index_of(m)];
            mods.push_back({{"module", m.module}, {"params", e.param_count}, {"tensors", e.tensor_names}});
        }
        bj["modules"] = std::move(mods);
        blocks.push_back(std::move(bj));
        if (b.kind == BlockKind::Attention) attention += share;
    }
    j["attention_share"] = attention;
    j["blocks"] = std::move(blocks);
    return j;
}

inline int cmd_analyze(const RunConfig& cfg, std::ostream& out) {
    ordered_json j;
    if (!cfg.descriptor.empty()) {
        if (cfg.descriptor != "spikegpt-216m") {
            throw InputError("unknown descriptor '" + cfg.descriptor + "' (known: spikegpt-216m)");
        }
        const ModelConfig mc = spikegpt_216m_descriptor();
        j = analysis_json(describe_hierarchy(mc), mc, "descriptor:" + cfg.descriptor);
    } else {
        const LoadedModel lm = load_model(cfg);
        j = analysis_json(lm.hierarchy, lm.model.config, "checkpoint");
    }
    if (!cfg.output_dir.empty()) write_json_file(fs::path(cfg.output_dir) / "analysis.json", j);
    emit(out, j);
    return kOk;
}

// ---------------------------------------------------------------------------

inline int cmd_sensitivity(const RunConfig& cfg, std::ostream& out) {
    const LoadedModel lm = load_model(cfg);
    const TaskData data = load_eval_data(cfg, lm);
    const TaskKind task = data.task;
    const PrecisionLadder ladder(cfg.ladder);
    const PerfOracle oracle = model_oracle(lm.model, lm.hierarchy, data, cfg.thread_count());

    const SensitivityProfile profile = block_sensitivity_sweep(lm.hierarchy, task, ladder, oracle);
    ordered_json j{{"schema", "qslm-sensitivity-1"}, {"metric", metric_name(task)}};
    j.update(profile_to_json(profile));
    j["baseline"] = *profile.metric(BlockId::input(), 32);
    j["shape"] = shape_to_json(sensitivity_shape(profile, shape_check_bits(profile.levels)));
    if (cfg.uniform_attention) {
        ordered_json rows = ordered_json::array();
        for (const auto& r : uniform_attention_sweep(lm.hierarchy, task, ladder, oracle)) {
            rows.push_back({{"bits", r.bits}, {"metric", r.metric}, {"mem_bytes", r.mem_bytes}});
        }
        j["uniform_attention"] = std::move(rows);
    }
    if (!cfg.output_dir.empty()) {
        const fs::path dir(cfg.output_dir);
        write_text_file(dir / "sensitivity.csv", profile_to_csv(profile));
        write_json_file(dir / "sensitivity.json", j);
        write_json_file(dir / "sensitivity_plot.json", profile_plot_series(profile));
    }
    emit(out, j);
    return kOk;
}

// ---------------------------------------------------------------------------

inline Constraints constraints_for(const RunConfig& cfg, TaskKind task, double baseline_bytes) {
    if (!cfg.const_a) throw InputError("search needs --const-a");
    if (cfg.const_m_bytes && cfg.const_m_frac) throw InputError("give only one of --const-m-bytes and --const-m-frac");
    if (!cfg.const_m_bytes && !cfg.const_m_frac) throw InputError("search needs --const-m-bytes or --const-m-frac");
    Constraints c;
    // Accuracy is tracked as a fraction; the flag is in points.
    c.perf_budget = task == TaskKind::Classification ? *cfg.const_a / 100.0 : *cfg.const_a;
    c.mem_budget_bytes = cfg.const_m_bytes ? *cfg.const_m_bytes : *cfg.const_m_frac * baseline_bytes;
    c.validate();
    return c;
}

inline void write_trace_file(const fs::path& path, const SearchTrace& t) {
    fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    write_trace(t, os);
}

inline ordered_json search_summary(const SearchTrace& t, const ordered_json& report) {
    ordered_json j;
    j["candidates"] = t.candidates.size();
    j["selected"] = report.at("selected").is_null() ? ordered_json(nullptr) : report["selected"]["candidate"];
    j["baseline_perf"] = t.baseline.perf;
    j["memory_reduction_pct"] = report.at("memory_reduction_pct");
    j["cases"] = report.at("cases");
    return j;
}

inline int cmd_reselect(const RunConfig& cfg, std::ostream& out) {
    require_path(cfg.from_trace, "trace (--from-trace)");
    std::ifstream is(cfg.from_trace, std::ios::binary);
    if (!is) throw IoError("cannot open " + cfg.from_trace);
    const SearchTrace t = read_trace(is);
    const ordered_json report = build_report(t, cfg, nullptr, std::nullopt, std::nullopt);
    if (!cfg.output_dir.empty()) write_json_file(fs::path(cfg.output_dir) / "report.json", report);
    emit(out, search_summary(t, report));
    return t.selected ? kOk : kInfeasible;
}

inline int cmd_search(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    if (!cfg.from_trace.empty()) return cmd_reselect(cfg, out);
    if (cfg.output_dir.empty()) throw InputError("search needs --out");
    const LoadedModel lm = load_model(cfg);
    const TaskData data = load_eval_data(cfg, lm);
    const TaskKind task = data.task;
    const PrecisionLadder ladder(cfg.ladder);
    const double full_bytes = memory_footprint(lm.hierarchy, Assignment::full_precision()).bytes();
    const Constraints constraints = constraints_for(cfg, task, full_bytes);
    if (cfg.alpha < 0.0) throw InputError("--alpha must be >= 0");
    for (double a : cfg.alpha_sweep) {
        if (a < 0.0) throw InputError("--alpha-sweep values must be >= 0");
    }
    const PerfOracle oracle = model_oracle(lm.model, lm.hierarchy, data, cfg.thread_count());
    const fs::path dir(cfg.output_dir);

    const SensitivityProfile profile = block_sensitivity_sweep(lm.hierarchy, task, ladder, oracle);
    SearchTrace trace;
    try {
        trace = run_tiered_search(lm.hierarchy, task, ladder, constraints, cfg.alpha, oracle,
                                  SearchOptions{cfg.greedy_stop});
    } catch (const InfeasibleSearch& e) {
        write_trace_file(dir / "trace.jsonl", e.trace());
        const ordered_json report = build_report(e.trace(), cfg, &lm.hierarchy, profile, std::nullopt);
        write_json_file(dir / "report.json", report);
        emit(out, search_summary(e.trace(), report));
        err << "search: " << e.what() << "\n";
        return kInfeasible;
    }
    write_trace_file(dir / "trace.jsonl", trace);

    // Persist the selected model, reload it and measure it again.
    const Candidate& sel = trace.candidates[*trace.selected];
    Checkpoint q;
    q.config = lm.model.config;
    q.params = apply_assignment(lm.model.params, lm.hierarchy, sel.assignment);
    q.vocab = lm.tokenizer.bytes();
    q.metadata = {{"quantized", {{"candidate", sel.index}, {"assignment", assignment_to_json(sel.assignment)}}}};
    save_checkpoint(q, dir / "quantized");
    const Checkpoint reloaded = load_checkpoint(dir / "quantized");
    PostHocCheck check;
    check.perf = measure(Model{reloaded.config, reloaded.params}, data, cfg.thread_count());
    check.mem_bytes = memory_footprint(lm.hierarchy, assignment_from_json(reloaded.metadata["quantized"]["assignment"]))
                          .bytes();
    check.met = check_constraints(trace.baseline.perf, check.perf, check.mem_bytes, constraints, task);
    check.matches_trace = std::fabs(check.perf - sel.stats.perf) <= kPostHocTolerance &&
                          check.mem_bytes == sel.stats.mem_bytes;

    const ordered_json report = build_report(trace, cfg, &lm.hierarchy, profile, check);
    write_json_file(dir / "report.json", report);
    emit(out, search_summary(trace, report));
    if (!check.matches_trace || !check.met) {
        err << "search: reloaded checkpoint does not reproduce the selected candidate\n";
        return kNumeric;
    }
    return kOk;
}

// ---------------------------------------------------------------------------

inline int cmd_eval(const RunConfig& cfg, std::ostream& out) {
    const LoadedModel lm = load_model(cfg);
    const TaskData data = load_eval_data(cfg, lm);
    // Quantizing again is a no-op, so a stored assignment only fixes the reported bytes.
    Assignment a = lm.stored.value_or(Assignment::full_precision());
    if (!cfg.assignment.empty()) {
        require_path(cfg.assignment, "assignment file (--assignment)");
        try {
            a = assignment_from_json(ordered_json::parse(read_text_file(cfg.assignment)));
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError(cfg.assignment + ": " + e.what());
        }
    }
    const Model q{lm.model.config, apply_assignment(lm.model.params, lm.hierarchy, a)};
    ordered_json j;
    j["task"] = task_name(data.task);
    j["metric"] = metric_name(data.task);
    j["perf"] = measure(q, data, cfg.thread_count());
    j["mem_bytes"] = memory_footprint(lm.hierarchy, a).bytes();
    j["assignment"] = assignment_to_json(a);
    if (!cfg.output_dir.empty()) write_json_file(fs::path(cfg.output_dir) / "eval.json", j);
    emit(out, j);
    return kOk;
}

// ---------------------------------------------------------------------------

/// Flag values parsed by CLI11. Each one is applied over the config file only
/// when it was given on the command line.
class FlagSet {
public:
    explicit FlagSet(CLI::App* app) : app_(app) {}

    template <class T, class Apply>
    FlagSet& option(const std::string& name, T& store, Apply apply, const std::string& help) {
        CLI::Option* o = app_->add_option(name, store, help);
        appliers_.push_back([o, &store, apply](RunConfig& c) {
            if (o->count()) apply(c, store);
        });
        return *this;
    }

    template <class Apply>
    FlagSet& flag(const std::string& name, bool& store, Apply apply, const std::string& help) {
        CLI::Option* o = app_->add_flag(name, store, help);
        appliers_.push_back([o, &store, apply](RunConfig& c) {
            if (o->count()) apply(c, store);
        });
        return *this;
    }

    void apply(RunConfig& c) const {
        for (const auto& f : appliers_) f(c);
    }

private:
    CLI::App* app_;
    std::vector<std::function<void(RunConfig&)>> appliers_;
};

struct RawFlags {
    std::string config, task, ckpt, descriptor, data, eval_data, assignment, from_trace, ladder, alpha_sweep, out;
    double const_a = 0, const_m_bytes = 0, const_m_frac = 0, alpha = 0, lr = 0;
    std::uint64_t seed = 0;
    unsigned threads = 0;
    std::size_t embed_dim = 0, blocks = 0, context = 0, ffn_dim = 0, batch_size = 0;
    int epochs = 0;
    bool greedy_stop = false, uniform_attention = false;
};

inline void add_common(FlagSet& fs, RawFlags& r) {
    fs.option("--task", r.task, [](RunConfig& c, const std::string& v) { c.task = parse_task(v); },
              "classify or generate")
        .option("--seed", r.seed, [](RunConfig& c, std::uint64_t v) { c.seed = v; }, "random seed")
        .option("--out", r.out, [](RunConfig& c, const std::string& v) { c.output_dir = v; }, "output directory")
        .option("--threads", r.threads, [](RunConfig& c, unsigned v) { c.threads = v; },
                "worker threads (default: QSLM_THREADS or all cores)");
}

inline void add_model_input(FlagSet& fs, RawFlags& r) {
    fs.option("--ckpt", r.ckpt, [](RunConfig& c, const std::string& v) { c.checkpoint = v; }, "checkpoint directory")
        .option("--eval-data", r.eval_data, [](RunConfig& c, const std::string& v) { c.eval_data = v; },
                "evaluation data (TSV for classify, text for generate)");
}

inline void add_ladder(FlagSet& fs, RawFlags& r) {
    fs.option("--ladder", r.ladder,
              [](RunConfig& c, const std::string& v) { c.ladder = PrecisionLadder::parse(v).levels(); },
              "bit-widths, strictly decreasing (default 16,14,12,10,8,6,4)");
}

/// Entry point shared by the qslm executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Mixed-precision post-training quantization for spiking language models"};
    app.require_subcommand(1);
    RawFlags r;

    CLI::App* train = app.add_subcommand("train", "train a toy checkpoint");
    CLI::App* analyze = app.add_subcommand("analyze", "hierarchy and memory proportions");
    CLI::App* sens = app.add_subcommand("sensitivity", "per-block quantization sensitivity");
    CLI::App* search = app.add_subcommand("search", "tiered mixed-precision search");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint, optionally quantized");

    std::vector<std::pair<CLI::App*, FlagSet>> sets;
    sets.reserve(5);
    for (CLI::App* sub : {train, analyze, sens, search, eval}) {
        sets.emplace_back(sub, FlagSet(sub));
        FlagSet& fs = sets.back().second;
        sub->add_option("--config", r.config, "JSON run config; flags override its fields");
        add_common(fs, r);
    }
    auto set_of = [&](CLI::App* a) -> FlagSet& {
        for (auto& [app_ptr, fs] : sets) {
            if (app_ptr == a) return fs;
        }
        throw std::logic_error("unknown subcommand");
    };

    set_of(train)
        .option("--data", r.data, [](RunConfig& c, const std::string& v) { c.train_data = v; }, "training data")
        .option("--eval-data", r.eval_data, [](RunConfig& c, const std::string& v) { c.eval_data = v; },
                "optional held-out data to score after training")
        .option("--embed-dim", r.embed_dim, [](RunConfig& c, std::size_t v) { c.model.embed_dim = v; }, "width")
        .option("--blocks", r.blocks, [](RunConfig& c, std::size_t v) { c.model.num_blocks = v; },
                "attention blocks")
        .option("--context", r.context, [](RunConfig& c, std::size_t v) { c.model.context_len = v; },
                "context length")
        .option("--ffn-dim", r.ffn_dim, [](RunConfig& c, std::size_t v) { c.model.ffn_hidden_dim = v; },
                "feed-forward width (default 4 x embed-dim)")
        .option("--epochs", r.epochs, [](RunConfig& c, int v) { c.epochs = v; }, "training epochs")
        .option("--lr", r.lr, [](RunConfig& c, double v) { c.learning_rate = v; }, "learning rate")
        .option("--batch-size", r.batch_size, [](RunConfig& c, std::size_t v) { c.batch_size = v; }, "batch size");

    set_of(analyze)
        .option("--ckpt", r.ckpt, [](RunConfig& c, const std::string& v) { c.checkpoint = v; }, "checkpoint directory")
        .option("--descriptor", r.descriptor, [](RunConfig& c, const std::string& v) { c.descriptor = v; },
                "counts-only model instead of a checkpoint (spikegpt-216m)");

    add_model_input(set_of(sens), r);
    add_ladder(set_of(sens), r);
    set_of(sens).flag("--uniform-attention", r.uniform_attention,
                      [](RunConfig& c, bool v) { c.uniform_attention = v; },
                      "also sweep all attention blocks jointly");

    add_model_input(set_of(search), r);
    add_ladder(set_of(search), r);
    set_of(search)
        .option("--const-a", r.const_a, [](RunConfig& c, double v) { c.const_a = v; },
                "max degradation: accuracy points or perplexity points")
        .option("--const-m-bytes", r.const_m_bytes, [](RunConfig& c, double v) { c.const_m_bytes = v; },
                "memory budget in bytes")
        .option("--const-m-frac", r.const_m_frac, [](RunConfig& c, double v) { c.const_m_frac = v; },
                "memory budget as a fraction of the full-precision bytes")
        .option("--alpha", r.alpha, [](RunConfig& c, double v) { c.alpha = v; }, "memory weight in the score")
        .option("--alpha-sweep", r.alpha_sweep,
                [](RunConfig& c, const std::string& v) { c.alpha_sweep = parse_double_list(v); },
                "comma-separated alphas; one selection per value")
        .option("--from-trace", r.from_trace, [](RunConfig& c, const std::string& v) { c.from_trace = v; },
                "re-select over an existing trace.jsonl")
        .flag("--greedy-stop", r.greedy_stop, [](RunConfig& c, bool v) { c.greedy_stop = v; },
              "stop each ladder scan at its first failure");

    add_model_input(set_of(eval), r);
    set_of(eval).option("--assignment", r.assignment, [](RunConfig& c, const std::string& v) { c.assignment = v; },
                        "assignment JSON to apply before evaluating");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        RunConfig cfg = r.config.empty() ? RunConfig{} : load_run_config(r.config);
        set_of(sub).apply(cfg);
        if (sub == train) return cmd_train(cfg, out);
        if (sub == analyze) return cmd_analyze(cfg, out);
        if (sub == sens) return cmd_sensitivity(cfg, out);
        if (sub == search) return cmd_search(cfg, out, err);
        return cmd_eval(cfg, out);
    } catch (const InfeasibleSearch& e) {
        err << "error: " << e.what() << "\n";
        return kInfeasible;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n";
        return kNumeric;
    } catch (const TrainingError& e) {
        err << "training error: " << e.what() << "\n";
        return kNumeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kNumeric;
    }
}

}  // namespace qslm::cli
