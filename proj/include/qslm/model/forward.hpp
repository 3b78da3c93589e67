#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "qslm/error.hpp"
#include "qslm/model/config.hpp"
#include "qslm/model/params.hpp"
#include "qslm/model/spike.hpp"
#include "qslm/tensor.hpp"

namespace qslm {

using Token = std::int32_t;

inline constexpr double kLayerNormEps = 1e-6;

struct ForwardOptions {
    // Replace the Heaviside step by its arctan surrogate. Only used to check
    // gradients against finite differences; inference never sets it.
    bool smooth_spikes = false;
};

struct LayerNormCache {
    Mat xhat;
    std::vector<double> inv_std;
};

struct SrwkvCache {
    Mat input, mix_k, mix_v, mix_r;
    Mat k, v, r_pre, wkv, fired, gated;
};

struct SrffnCache {
    Mat input, mix_k, mix_r;
    Mat pre, fired, value, r_pre;
};

struct BlockCache {
    LayerNormCache ln1, ln2;
    SrwkvCache att;
    SrffnCache ffn;
};

// Activations retained by a forward pass for the trainer's backward pass.
struct ForwardCache {
    std::vector<Token> tokens;
    LayerNormCache ln_in;
    std::vector<BlockCache> blocks;
    LayerNormCache ln_out;
    Mat hidden;  // output-block LayerNorm output, seq x d
};

namespace detail {

inline double fire(double x, double threshold, const ForwardOptions& opt) {
    return opt.smooth_spikes ? spike_surrogate(x, threshold) : spike(x, threshold);
}

}  // namespace detail

/// Per-position LayerNorm with gain and bias.
inline Mat layer_norm(const Mat& x, const LayerNormParams& ln, LayerNormCache* cache = nullptr) {
    Mat out(x.rows, x.cols);
    if (cache) {
        cache->xhat = Mat(x.rows, x.cols);
        cache->inv_std.assign(x.rows, 0.0);
    }
    const double n = static_cast<double>(x.cols);
    for (std::size_t t = 0; t < x.rows; ++t) {
        const double* xr = x.row(t);
        double mean = 0.0;
        for (std::size_t i = 0; i < x.cols; ++i) mean += xr[i];
        mean /= n;
        double var = 0.0;
        for (std::size_t i = 0; i < x.cols; ++i) var += (xr[i] - mean) * (xr[i] - mean);
        var /= n;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        double* o = out.row(t);
        for (std::size_t i = 0; i < x.cols; ++i) {
            const double xh = (xr[i] - mean) * inv;
            if (cache) cache->xhat(t, i) = xh;
            o[i] = xh * ln.gain[i] + ln.bias[i];
        }
        if (cache) cache->inv_std[t] = inv;
    }
    return out;
}

/// Token shift: mix[t] = mu * x[t] + (1 - mu) * x[t-1], with x[-1] = 0.
inline Mat time_mix(const Mat& x, const Tensor& mu) {
    Mat out(x.rows, x.cols);
    for (std::size_t t = 0; t < x.rows; ++t) {
        const double* cur = x.row(t);
        const double* prev = t ? x.row(t - 1) : nullptr;
        double* o = out.row(t);
        for (std::size_t i = 0; i < x.cols; ++i) {
            const double m = mu[i];
            o[i] = m * cur[i] + (prev ? (1.0 - m) * prev[i] : 0.0);
        }
    }
    return out;
}

/// Causal weighted key-value average, evaluated as a log-domain recurrence:
///   wkv[t] = (sum_{i<t} e^{-(t-1-i)w + k_i} v_i + e^{u + k_t} v_t)
///          / (sum_{i<t} e^{-(t-1-i)w + k_i}     + e^{u + k_t})
/// with per-channel decay w = exp(time_decay) and bonus u = time_first.
inline Mat wkv_recurrence(const Mat& k, const Mat& v, const Tensor& time_decay, const Tensor& time_first) {
    const std::size_t T = k.rows;
    const std::size_t d = k.cols;
    Mat out(T, d);
    for (std::size_t c = 0; c < d; ++c) {
        const double w = std::exp(static_cast<double>(time_decay[c]));
        const double u = time_first[c];
        double num = 0.0;  // scaled by exp(-max_exp)
        double den = 0.0;
        double max_exp = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < T; ++t) {
            const double kt = k(t, c);
            const double vt = v(t, c);
            const double cur = u + kt;
            if (t == 0) {
                out(t, c) = vt;
            } else {
                const double p = std::max(max_exp, cur);
                const double e1 = std::exp(max_exp - p);
                const double e2 = std::exp(cur - p);
                out(t, c) = (e1 * num + e2 * vt) / (e1 * den + e2);
            }
            const double decayed = max_exp - w;
            const double p = std::max(decayed, kt);
            const double e1 = (t == 0) ? 0.0 : std::exp(decayed - p);
            const double e2 = std::exp(kt - p);
            num = e1 * num + e2 * vt;
            den = e1 * den + e2;
            max_exp = p;
        }
    }
    return out;
}

/// Spiking RWKV mixer for one attention block. Input is the LayerNorm output.
/// out = (sigmoid(r) * spike(wkv)) W_out.
inline Mat srwkv_forward(const SrwkvParams& p, const Mat& x, double threshold, int block_index,
                         const ForwardOptions& opt = {}, SrwkvCache* cache = nullptr) {
    Mat mk = time_mix(x, p.time_mix_k);
    Mat mv = time_mix(x, p.time_mix_v);
    Mat mr = time_mix(x, p.time_mix_r);
    Mat k = matmul(mk, p.key);
    Mat v = matmul(mv, p.value);
    Mat r = matmul(mr, p.receptance);
    Mat wkv = wkv_recurrence(k, v, p.time_decay, p.time_first);
    if (!wkv.all_finite()) {
        throw NumericError("attention block " + std::to_string(block_index) + ": non-finite wkv state");
    }
    Mat fired(x.rows, x.cols);
    Mat gated(x.rows, x.cols);
    for (std::size_t i = 0; i < wkv.data.size(); ++i) {
        fired.data[i] = detail::fire(wkv.data[i], threshold, opt);
        gated.data[i] = sigmoid(r.data[i]) * fired.data[i];
    }
    Mat out = matmul(gated, p.output);
    if (cache) {
        *cache = SrwkvCache{x, std::move(mk), std::move(mv), std::move(mr), std::move(k),
                            std::move(v), std::move(r), std::move(wkv), std::move(fired), std::move(gated)};
    }
    return out;
}

/// Spiking receptance-gated FFN: out = sigmoid(r) * (spike(mix_k W_in) W_out).
inline Mat srffn_forward(const SrffnParams& p, const Mat& x, double threshold, const ForwardOptions& opt = {},
                         SrffnCache* cache = nullptr) {
    Mat mk = time_mix(x, p.time_mix_k);
    Mat mr = time_mix(x, p.time_mix_r);
    Mat pre = matmul(mk, p.w_in);
    Mat fired(pre.rows, pre.cols);
    for (std::size_t i = 0; i < pre.data.size(); ++i) fired.data[i] = detail::fire(pre.data[i], threshold, opt);
    Mat value = opt.smooth_spikes ? matmul(fired, p.w_out) : matmul_binary(fired, p.w_out);
    Mat r = matmul(mr, p.receptance);
    Mat out(x.rows, x.cols);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = sigmoid(r.data[i]) * value.data[i];
    if (cache) {
        *cache = SrffnCache{x, std::move(mk), std::move(mr), std::move(pre), std::move(fired), std::move(value),
                            std::move(r)};
    }
    return out;
}

inline void check_tokens(const ModelConfig& config, std::span<const Token> tokens) {
    if (tokens.empty()) throw InputError("empty token sequence");
    if (tokens.size() > config.context_len) {
        throw InputError("sequence length " + std::to_string(tokens.size()) + " exceeds context_len " +
                         std::to_string(config.context_len));
    }
    for (Token t : tokens) {
        if (t < 0 || static_cast<std::size_t>(t) >= config.vocab_size) {
            throw InputError("token id " + std::to_string(t) + " out of range for vocab " +
                             std::to_string(config.vocab_size));
        }
    }
}

/// Runs the network up to (and including) the output LayerNorm: seq x d.
inline Mat forward_hidden(const ModelParams& params, const ModelConfig& config, std::span<const Token> tokens,
                          const ForwardOptions& opt = {}, ForwardCache* cache = nullptr) {
    check_tokens(config, tokens);
    const std::size_t d = config.embed_dim;
    Mat x(tokens.size(), d);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const float* e = params.input.embedding.data() + static_cast<std::size_t>(tokens[t]) * d;
        for (std::size_t i = 0; i < d; ++i) x(t, i) = e[i];
    }
    if (cache) {
        cache->tokens.assign(tokens.begin(), tokens.end());
        cache->blocks.assign(params.blocks.size(), {});
    }
    x = layer_norm(x, params.input.layer_norm, cache ? &cache->ln_in : nullptr);

    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        const auto& blk = params.blocks[b];
        BlockCache* bc = cache ? &cache->blocks[b] : nullptr;
        const int bi = static_cast<int>(b);
        Mat a = srwkv_forward(blk.srwkv, layer_norm(x, blk.ln1, bc ? &bc->ln1 : nullptr), config.spike_threshold,
                              bi, opt, bc ? &bc->att : nullptr);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += a.data[i];
        Mat f = srffn_forward(blk.srffn, layer_norm(x, blk.ln2, bc ? &bc->ln2 : nullptr), config.spike_threshold,
                              opt, bc ? &bc->ffn : nullptr);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += f.data[i];
        if (!x.all_finite()) {
            throw NumericError("attention block " + std::to_string(b) + ": non-finite activations");
        }
    }
    Mat h = layer_norm(x, params.output.layer_norm, cache ? &cache->ln_out : nullptr);
    if (cache) cache->hidden = h;
    return h;
}

/// Per-position head outputs in double precision (seq x out_dim).
inline Mat forward_head(const ModelParams& params, const ModelConfig& config, std::span<const Token> tokens,
                        const ForwardOptions& opt = {}, ForwardCache* cache = nullptr) {
    Mat logits = matmul(forward_hidden(params, config, tokens, opt, cache), params.output.head);
    if (!logits.all_finite()) throw NumericError("non-finite logits");
    return logits;
}

/// Per-position logits, shape seq_len x out_dim.
inline Tensor forward_logits(const ModelParams& params, const ModelConfig& config, std::span<const Token> tokens) {
    const Mat m = forward_head(params, config, tokens);
    Tensor out({m.rows, m.cols});
    for (std::size_t i = 0; i < m.data.size(); ++i) out[i] = static_cast<float>(m.data[i]);
    if (!out.all_finite()) throw NumericError("logits overflow float range");
    return out;
}

/// Classification readout: the head applied to the mean-pooled hidden state,
/// which equals the mean of the per-position logits since the head is linear.
inline std::vector<float> classify_logits(const ModelParams& params, const ModelConfig& config,
                                          std::span<const Token> tokens) {
    const Tensor per_pos = forward_logits(params, config, tokens);
    const std::size_t T = per_pos.dim(0);
    const std::size_t C = per_pos.dim(1);
    std::vector<double> acc(C, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t c = 0; c < C; ++c) acc[c] += per_pos.at(t, c);
    }
    std::vector<float> out(C);
    for (std::size_t c = 0; c < C; ++c) out[c] = static_cast<float>(acc[c] / static_cast<double>(T));
    return out;
}

/// A config plus its parameters; the object evaluators and the search consume.
struct Model {
    ModelConfig config;
    ModelParams params;

    std::size_t out_dim() const noexcept { return config.out_dim(); }
    std::size_t context_len() const noexcept { return config.context_len; }
    Tensor logits(std::span<const Token> tokens) const { return forward_logits(params, config, tokens); }
    std::vector<float> class_logits(std::span<const Token> tokens) const {
        return classify_logits(params, config, tokens);
    }
};

}  // namespace qslm
