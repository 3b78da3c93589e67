#pragma once

#include <span>
#include <string>
#include <vector>

#include "qslm/analyzer/hierarchy.hpp"
#include "qslm/evaluator.hpp"
#include "qslm/model/checkpoint.hpp"
#include "qslm/quantizer.hpp"
#include "qslm/search.hpp"
#include "qslm/workbench/datasets.hpp"
#include "qslm/workbench/tokenizer.hpp"

namespace qslm {

/// Evaluation material in token form for one task.
struct TaskData {
    TaskKind task = TaskKind::Classification;
    std::vector<LabeledSequence> examples;
    std::vector<Token> corpus;
};

inline TaskData load_task_data(TaskKind task, const std::string& path, const Tokenizer& tok) {
    TaskData d;
    d.task = task;
    if (task == TaskKind::Classification) {
        d.examples = encode_examples(tok, read_classification_tsv(path));
    } else {
        d.corpus = tok.encode(read_text_file(path));
        if (d.corpus.size() < 2) throw InputError(path + ": corpus needs at least 2 tokens");
    }
    return d;
}

/// Accuracy (fraction) or perplexity of `model` on `data`.
inline double measure(const Model& model, const TaskData& data, unsigned threads) {
    if (data.task != task_of(model.config)) throw InputError("evaluation data does not match the model's task head");
    return data.task == TaskKind::Classification
               ? evaluate_accuracy(model, std::span<const LabeledSequence>(data.examples), threads)
               : evaluate_perplexity(model, std::span<const Token>(data.corpus), threads);
}

/// Search/sensitivity oracle backed by simulated quantization of a real model.
/// The returned callable holds references; keep `model`, `h` and `data` alive.
inline PerfOracle model_oracle(const Model& model, const Hierarchy& h, const TaskData& data, unsigned threads) {
    return [&model, &h, &data, threads](const Assignment& a) {
        const Model q{model.config, apply_assignment(model.params, h, a)};
        return measure(q, data, threads);
    };
}

inline const char* metric_name(TaskKind t) { return t == TaskKind::Classification ? "accuracy" : "perplexity"; }

}  // namespace qslm
