#pragma once

#include <cstddef>
#include <string>

#include "qslm/error.hpp"

namespace qslm {

enum class HeadKind { Classification, Generation };

struct TaskHead {
    HeadKind kind = HeadKind::Generation;
    std::size_t num_classes = 0;  // Classification only

    static TaskHead classification(std::size_t classes) { return {HeadKind::Classification, classes}; }
    static TaskHead generation() { return {HeadKind::Generation, 0}; }

    friend bool operator==(const TaskHead&, const TaskHead&) = default;
};

/// Shape of a spike-driven RWKV-style language model.
struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 0;
    std::size_t num_blocks = 0;
    std::size_t ffn_hidden_dim = 0;  // 0 means 4 x embed_dim
    std::size_t context_len = 0;
    double spike_threshold = 1.0;
    TaskHead head;

    std::size_t ffn_dim() const noexcept { return ffn_hidden_dim ? ffn_hidden_dim : 4 * embed_dim; }

    // Generation ties the output width to the vocabulary.
    std::size_t out_dim() const noexcept {
        return head.kind == HeadKind::Generation ? vocab_size : head.num_classes;
    }

    void validate() const {
        if (num_blocks < 1) throw InputError("model config: num_blocks must be >= 1");
        if (embed_dim < 1) throw InputError("model config: embed_dim must be >= 1");
        if (vocab_size < 2) throw InputError("model config: vocab_size must be >= 2");
        if (context_len < 1) throw InputError("model config: context_len must be >= 1");
        if (!(spike_threshold > 0.0)) throw InputError("model config: spike_threshold must be > 0");
        if (head.kind == HeadKind::Classification && head.num_classes < 2) {
            throw InputError("model config: classification head needs >= 2 classes");
        }
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Checked factory; throws on any invariant violation.
inline ModelConfig make_config(std::size_t vocab, std::size_t dim, std::size_t blocks, std::size_t context,
                               TaskHead head = TaskHead::generation(), std::size_t ffn = 0,
                               double threshold = 1.0) {
    ModelConfig c{vocab, dim, blocks, ffn, context, threshold, head};
    c.validate();
    return c;
}

// Counts-only description of the 216M-parameter, 18-block published model
// (50277-token vocabulary, 768-wide). Used for footprint analysis without weights.
inline ModelConfig spikegpt_216m_descriptor() {
    return make_config(50277, 768, 18, 1024, TaskHead::generation(), 3072);
}

}  // namespace qslm
