#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "qslm/model/config.hpp"
#include "qslm/module_id.hpp"
#include "qslm/tensor.hpp"

namespace qslm {

struct LayerNormParams {
    Tensor gain;
    Tensor bias;
};

// Spiking receptance-weighted key-value mixer. Matrices are [in x out] and act
// on row vectors.
struct SrwkvParams {
    Tensor time_decay;  // per-channel decay rate is exp(time_decay)
    Tensor time_first;  // bonus for the current token
    Tensor time_mix_k;
    Tensor time_mix_v;
    Tensor time_mix_r;
    Tensor key;
    Tensor value;
    Tensor receptance;
    Tensor output;
};

// Spiking receptance-gated feed-forward network.
struct SrffnParams {
    Tensor time_mix_k;
    Tensor time_mix_r;
    Tensor w_in;        // [d x ffn]
    Tensor receptance;  // [d x d]
    Tensor w_out;       // [ffn x d]
};

struct AttentionBlockParams {
    LayerNormParams ln1;
    LayerNormParams ln2;
    SrwkvParams srwkv;
    SrffnParams srffn;
};

struct InputBlockParams {
    Tensor embedding;  // [vocab x d]
    LayerNormParams layer_norm;
};

struct OutputBlockParams {
    LayerNormParams layer_norm;
    Tensor head;  // [d x out_dim]
};

struct ModelParams {
    InputBlockParams input;
    std::vector<AttentionBlockParams> blocks;
    OutputBlockParams output;

    friend bool operator==(const ModelParams& a, const ModelParams& b);
};

/// Name, owning module and expected shape of one parameter tensor.
struct TensorSpec {
    std::string name;
    ModuleId module;
    std::vector<std::size_t> shape;

    std::size_t count() const { return Tensor::element_count(shape); }
};

/// Visits every parameter tensor in canonical order (the checkpoint order).
/// `fn(const std::string& name, const ModuleId&, T& tensor)` where T is Tensor
/// or const Tensor depending on the constness of `params`.
template <class Params, class Fn>
    requires std::is_same_v<std::remove_const_t<Params>, ModelParams>
void for_each_tensor(Params& params, Fn&& fn) {
    using namespace modules;
    const BlockId in = BlockId::input();
    fn("input.embedding", ModuleId{in, kEmbedding}, params.input.embedding);
    fn("input.layer_norm.gain", ModuleId{in, kLayerNorm}, params.input.layer_norm.gain);
    fn("input.layer_norm.bias", ModuleId{in, kLayerNorm}, params.input.layer_norm.bias);
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        auto& blk = params.blocks[b];
        const BlockId id = BlockId::attention(static_cast<int>(b));
        const std::string p = id.name() + ".";
        const ModuleId ln{id, kLayerNorm};
        const ModuleId att{id, kSrwkv};
        const ModuleId ffn{id, kSrffn};
        fn(p + "ln1.gain", ln, blk.ln1.gain);
        fn(p + "ln1.bias", ln, blk.ln1.bias);
        fn(p + "ln2.gain", ln, blk.ln2.gain);
        fn(p + "ln2.bias", ln, blk.ln2.bias);
        fn(p + "srwkv.time_decay", att, blk.srwkv.time_decay);
        fn(p + "srwkv.time_first", att, blk.srwkv.time_first);
        fn(p + "srwkv.time_mix_k", att, blk.srwkv.time_mix_k);
        fn(p + "srwkv.time_mix_v", att, blk.srwkv.time_mix_v);
        fn(p + "srwkv.time_mix_r", att, blk.srwkv.time_mix_r);
        fn(p + "srwkv.key", att, blk.srwkv.key);
        fn(p + "srwkv.value", att, blk.srwkv.value);
        fn(p + "srwkv.receptance", att, blk.srwkv.receptance);
        fn(p + "srwkv.output", att, blk.srwkv.output);
        fn(p + "srffn.time_mix_k", ffn, blk.srffn.time_mix_k);
        fn(p + "srffn.time_mix_r", ffn, blk.srffn.time_mix_r);
        fn(p + "srffn.w_in", ffn, blk.srffn.w_in);
        fn(p + "srffn.receptance", ffn, blk.srffn.receptance);
        fn(p + "srffn.w_out", ffn, blk.srffn.w_out);
    }
    const BlockId out = BlockId::output();
    fn("output.layer_norm.gain", ModuleId{out, kLayerNorm}, params.output.layer_norm.gain);
    fn("output.layer_norm.bias", ModuleId{out, kLayerNorm}, params.output.layer_norm.bias);
    fn("output.head", ModuleId{out, kHead}, params.output.head);
}

inline bool operator==(const ModelParams& a, const ModelParams& b) {
    std::vector<const Tensor*> ta, tb;
    for_each_tensor(a, [&](const std::string&, const ModuleId&, const Tensor& t) { ta.push_back(&t); });
    for_each_tensor(b, [&](const std::string&, const ModuleId&, const Tensor& t) { tb.push_back(&t); });
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (!(*ta[i] == *tb[i])) return false;
    }
    return true;
}

/// All-zero parameters with the shapes implied by `config`.
inline ModelParams zero_params(const ModelConfig& config) {
    config.validate();
    const std::size_t d = config.embed_dim;
    const std::size_t f = config.ffn_dim();
    auto vec = [](std::size_t n) { return Tensor({n}); };
    auto mat = [](std::size_t r, std::size_t c) { return Tensor({r, c}); };

    ModelParams p;
    p.input.embedding = mat(config.vocab_size, d);
    p.input.layer_norm = {vec(d), vec(d)};
    p.blocks.resize(config.num_blocks);
    for (auto& b : p.blocks) {
        b.ln1 = {vec(d), vec(d)};
        b.ln2 = {vec(d), vec(d)};
        b.srwkv = {vec(d), vec(d), vec(d), vec(d), vec(d), mat(d, d), mat(d, d), mat(d, d), mat(d, d)};
        b.srffn = {vec(d), vec(d), mat(d, f), mat(d, d), mat(f, d)};
    }
    p.output.layer_norm = {vec(d), vec(d)};
    p.output.head = mat(d, config.out_dim());
    return p;
}

/// Canonical tensor table for a config, computed from shapes alone.
inline std::vector<TensorSpec> tensor_layout(const ModelConfig& config) {
    // Building a zero model for large descriptors would allocate gigabytes, so
    // derive the table from a one-block, tiny-vocab stand-in and rescale.
    config.validate();
    ModelConfig small = config;
    small.num_blocks = 1;
    small.vocab_size = 2;
    if (small.head.kind == HeadKind::Classification) small.head.num_classes = 2;
    const ModelParams proto = zero_params(small);

    std::vector<TensorSpec> attention_specs;
    std::vector<TensorSpec> out;
    for_each_tensor(proto, [&](const std::string& name, const ModuleId& id, const Tensor& t) {
        TensorSpec s{name, id, t.shape()};
        if (name == "input.embedding") s.shape[0] = config.vocab_size;
        if (name == "output.head") s.shape[1] = config.out_dim();
        if (id.block.is_attention()) {
            attention_specs.push_back(s);
        } else if (id.block.kind == BlockKind::Input) {
            out.push_back(s);
        } else {
            // Output block: emit attention blocks first.
            if (!attention_specs.empty()) {
                const std::string proto_prefix = BlockId::attention(0).name();
                for (std::size_t b = 0; b < config.num_blocks; ++b) {
                    const BlockId bid = BlockId::attention(static_cast<int>(b));
                    for (const auto& a : attention_specs) {
                        TensorSpec copy = a;
                        copy.module.block = bid;
                        copy.name = bid.name() + a.name.substr(proto_prefix.size());
                        out.push_back(std::move(copy));
                    }
                }
                attention_specs.clear();
            }
            out.push_back(s);
        }
    });
    return out;
}

inline std::size_t total_param_count(const ModelParams& p) {
    std::size_t n = 0;
    for_each_tensor(p, [&](const std::string&, const ModuleId&, const Tensor& t) { n += t.size(); });
    return n;
}

/// Random initialization used by the trainer. Deterministic for a given engine state.
inline ModelParams init_params(const ModelConfig& config, std::mt19937_64& rng) {
    ModelParams p = zero_params(config);
    const std::size_t d = config.embed_dim;
    std::normal_distribution<float> normal(0.0f, 1.0f);

    auto fill_normal = [&](Tensor& t, float stddev) {
        for (float& v : t.values()) v = stddev * normal(rng);
    };
    auto fill_value = [](Tensor& t, float v) { t.fill(v); };
    const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));

    fill_normal(p.input.embedding, 1.0f);
    fill_value(p.input.layer_norm.gain, 1.0f);
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        auto& blk = p.blocks[b];
        fill_value(blk.ln1.gain, 1.0f);
        fill_value(blk.ln2.gain, 1.0f);
        // Time-mix ratios sweep (0, 1] across channels; decays span fast to slow.
        for (std::size_t i = 0; i < d; ++i) {
            const float frac = static_cast<float>(i + 1) / static_cast<float>(d);
            blk.srwkv.time_mix_k[i] = frac;
            blk.srwkv.time_mix_v[i] = frac;
            blk.srwkv.time_mix_r[i] = 0.5f * (1.0f + frac);
            blk.srffn.time_mix_k[i] = frac;
            blk.srffn.time_mix_r[i] = frac;
            blk.srwkv.time_decay[i] = -2.0f + 3.0f * frac;
            blk.srwkv.time_first[i] = 0.5f;
        }
        fill_normal(blk.srwkv.key, inv_sqrt_d);
        fill_normal(blk.srwkv.value, 2.0f * inv_sqrt_d);
        fill_normal(blk.srwkv.receptance, inv_sqrt_d);
        fill_normal(blk.srwkv.output, 0.5f * inv_sqrt_d);
        fill_normal(blk.srffn.w_in, 2.0f * inv_sqrt_d);
        fill_normal(blk.srffn.receptance, inv_sqrt_d);
        fill_normal(blk.srffn.w_out, 0.5f / std::sqrt(static_cast<float>(config.ffn_dim())));
    }
    fill_value(p.output.layer_norm.gain, 1.0f);
    fill_normal(p.output.head, inv_sqrt_d);
    return p;
}

}  // namespace qslm
