#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "qslm/error.hpp"
#include "qslm/model/forward.hpp"

namespace qslm {

/// Double-precision gradient accumulators, one per parameter tensor.
class GradBuffer {
public:
    explicit GradBuffer(const ModelParams& params) {
        for_each_tensor(params, [&](const std::string&, const ModuleId&, const Tensor& t) {
            index_[&t] = bufs_.size();
            bufs_.emplace_back(t.size(), 0.0);
        });
    }

    std::vector<double>& operator()(const Tensor& t) { return bufs_[index_.at(&t)]; }
    std::vector<std::vector<double>>& buffers() noexcept { return bufs_; }
    const std::vector<std::vector<double>>& buffers() const noexcept { return bufs_; }

    void zero() {
        for (auto& b : bufs_) std::fill(b.begin(), b.end(), 0.0);
    }

private:
    std::unordered_map<const Tensor*, std::size_t> index_;
    std::vector<std::vector<double>> bufs_;
};

namespace detail {

// dx = dy * W^T ; dW += x^T * dy
inline Mat matmul_backward(const Mat& x, const Tensor& w, const Mat& dy, std::vector<double>& dw) {
    const std::size_t k = w.dim(0);
    const std::size_t n = w.dim(1);
    Mat dx(x.rows, k);
    const float* wd = w.data();
    for (std::size_t r = 0; r < x.rows; ++r) {
        const double* g = dy.row(r);
        const double* xr = x.row(r);
        double* dxr = dx.row(r);
        for (std::size_t i = 0; i < k; ++i) {
            const float* wr = wd + i * n;
            double* dwr = dw.data() + i * n;
            double acc = 0.0;
            const double xi = xr[i];
            for (std::size_t j = 0; j < n; ++j) {
                acc += g[j] * wr[j];
                dwr[j] += xi * g[j];
            }
            dxr[i] = acc;
        }
    }
    return dx;
}

inline Mat layer_norm_backward(const LayerNormCache& c, const LayerNormParams& ln, const Mat& dy, GradBuffer& g) {
    auto& dgain = g(ln.gain);
    auto& dbias = g(ln.bias);
    const std::size_t n = dy.cols;
    Mat dx(dy.rows, n);
    std::vector<double> dxhat(n);
    for (std::size_t t = 0; t < dy.rows; ++t) {
        double sum = 0.0, dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double gy = dy(t, i);
            dgain[i] += gy * c.xhat(t, i);
            dbias[i] += gy;
            dxhat[i] = gy * ln.gain[i];
            sum += dxhat[i];
            dot += dxhat[i] * c.xhat(t, i);
        }
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            dx(t, i) = c.inv_std[t] * (dxhat[i] - sum * inv_n - c.xhat(t, i) * dot * inv_n);
        }
    }
    return dx;
}

// Accumulates the gradient of time_mix(x, mu) into dx and dmu.
inline void time_mix_backward(const Mat& x, const Tensor& mu, const Mat& dmix, Mat& dx, std::vector<double>& dmu) {
    for (std::size_t t = 0; t < x.rows; ++t) {
        for (std::size_t i = 0; i < x.cols; ++i) {
            const double g = dmix(t, i);
            const double m = mu[i];
            const double prev = t ? x(t - 1, i) : 0.0;
            dmu[i] += g * (x(t, i) - prev);
            dx(t, i) += m * g;
            if (t) dx(t - 1, i) += (1.0 - m) * g;
        }
    }
}

inline double fire_grad(double x, double threshold) { return spike_surrogate_grad(x, threshold); }

// Gradient of the causal weighted key-value average, using its direct
// softmax form: wkv[t] = sum_i a[t,i] v[i], a[t,.] = softmax(s[t,.]).
inline void wkv_backward(const Mat& k, const Mat& v, const Tensor& time_decay, const Tensor& time_first,
                         const Mat& dwkv, Mat& dk, Mat& dv, std::vector<double>& ddecay,
                         std::vector<double>& dfirst) {
    const std::size_t T = k.rows;
    const std::size_t d = k.cols;
    std::vector<double> s(T), a(T);
    for (std::size_t c = 0; c < d; ++c) {
        const double w = std::exp(static_cast<double>(time_decay[c]));
        const double u = time_first[c];
        double dw = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const double g = dwkv(t, c);
            if (g == 0.0) continue;
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i <= t; ++i) {
                s[i] = (i < t) ? -static_cast<double>(t - 1 - i) * w + k(i, c) : u + k(t, c);
                mx = std::max(mx, s[i]);
            }
            double z = 0.0;
            for (std::size_t i = 0; i <= t; ++i) {
                a[i] = std::exp(s[i] - mx);
                z += a[i];
            }
            double out = 0.0;
            for (std::size_t i = 0; i <= t; ++i) {
                a[i] /= z;
                out += a[i] * v(i, c);
            }
            for (std::size_t i = 0; i <= t; ++i) {
                dv(i, c) += a[i] * g;
                const double ds = a[i] * (v(i, c) - out) * g;
                dk(i, c) += ds;
                if (i < t) {
                    dw -= ds * static_cast<double>(t - 1 - i);
                } else {
                    dfirst[c] += ds;
                }
            }
        }
        ddecay[c] += dw * w;
    }
}

inline Mat srwkv_backward(const SrwkvParams& p, const SrwkvCache& c, double threshold, const Mat& dout,
                          GradBuffer& g) {
    Mat dgated = matmul_backward(c.gated, p.output, dout, g(p.output));
    Mat dr(dgated.rows, dgated.cols);
    Mat dwkv(dgated.rows, dgated.cols);
    for (std::size_t i = 0; i < dgated.data.size(); ++i) {
        const double sg = sigmoid(c.r_pre.data[i]);
        dr.data[i] = dgated.data[i] * c.fired.data[i] * sg * (1.0 - sg);
        dwkv.data[i] = dgated.data[i] * sg * fire_grad(c.wkv.data[i], threshold);
    }
    Mat dk(c.k.rows, c.k.cols);
    Mat dv(c.v.rows, c.v.cols);
    wkv_backward(c.k, c.v, p.time_decay, p.time_first, dwkv, dk, dv, g(p.time_decay), g(p.time_first));

    Mat dx(c.input.rows, c.input.cols);
    time_mix_backward(c.input, p.time_mix_k, matmul_backward(c.mix_k, p.key, dk, g(p.key)), dx, g(p.time_mix_k));
    time_mix_backward(c.input, p.time_mix_v, matmul_backward(c.mix_v, p.value, dv, g(p.value)), dx,
                      g(p.time_mix_v));
    time_mix_backward(c.input, p.time_mix_r, matmul_backward(c.mix_r, p.receptance, dr, g(p.receptance)), dx,
                      g(p.time_mix_r));
    return dx;
}

inline Mat srffn_backward(const SrffnParams& p, const SrffnCache& c, double threshold, const Mat& dout,
                          GradBuffer& g) {
    Mat dvalue(dout.rows, dout.cols);
    Mat dr(dout.rows, dout.cols);
    for (std::size_t i = 0; i < dout.data.size(); ++i) {
        const double sg = sigmoid(c.r_pre.data[i]);
        dvalue.data[i] = dout.data[i] * sg;
        dr.data[i] = dout.data[i] * c.value.data[i] * sg * (1.0 - sg);
    }
    Mat dfired = matmul_backward(c.fired, p.w_out, dvalue, g(p.w_out));
    for (std::size_t i = 0; i < dfired.data.size(); ++i) dfired.data[i] *= fire_grad(c.pre.data[i], threshold);

    Mat dx(c.input.rows, c.input.cols);
    time_mix_backward(c.input, p.time_mix_k, matmul_backward(c.mix_k, p.w_in, dfired, g(p.w_in)), dx,
                      g(p.time_mix_k));
    time_mix_backward(c.input, p.time_mix_r, matmul_backward(c.mix_r, p.receptance, dr, g(p.receptance)), dx,
                      g(p.time_mix_r));
    return dx;
}

}  // namespace detail

/// Backpropagates d(loss)/d(head outputs) (seq x out_dim) through a cached
/// forward pass, accumulating parameter gradients.
inline void backward(const ModelParams& params, const ModelConfig& config, const ForwardCache& cache,
                     const Mat& dlogits, GradBuffer& grads) {
    using namespace detail;
    Mat dx = matmul_backward(cache.hidden, params.output.head, dlogits, grads(params.output.head));
    dx = layer_norm_backward(cache.ln_out, params.output.layer_norm, dx, grads);
    for (std::size_t b = params.blocks.size(); b-- > 0;) {
        const auto& blk = params.blocks[b];
        const auto& bc = cache.blocks[b];
        Mat df = srffn_backward(blk.srffn, bc.ffn, config.spike_threshold, dx, grads);
        Mat dmid = layer_norm_backward(bc.ln2, blk.ln2, df, grads);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dmid.data[i];
        Mat da = srwkv_backward(blk.srwkv, bc.att, config.spike_threshold, dx, grads);
        Mat din = layer_norm_backward(bc.ln1, blk.ln1, da, grads);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += din.data[i];
    }
    dx = layer_norm_backward(cache.ln_in, params.input.layer_norm, dx, grads);
    auto& demb = grads(params.input.embedding);
    const std::size_t d = config.embed_dim;
    for (std::size_t t = 0; t < cache.tokens.size(); ++t) {
        double* row = demb.data() + static_cast<std::size_t>(cache.tokens[t]) * d;
        for (std::size_t i = 0; i < d; ++i) row[i] += dx(t, i);
    }
}

/// One labelled sequence for classification training and evaluation.
struct LabeledSequence {
    std::vector<Token> tokens;
    int label = 0;
};

/// Next-token cross-entropy averaged over the sequence's predicted positions.
/// Fills dlogits (if given) with the gradient of that mean.
inline double next_token_loss(const Mat& logits, std::span<const Token> tokens, Mat* dlogits) {
    const std::size_t n = tokens.size() - 1;
    if (dlogits) *dlogits = Mat(logits.rows, logits.cols);
    double loss = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double* row = logits.row(t);
        const double mx = *std::max_element(row, row + logits.cols);
        double z = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        const auto target = static_cast<std::size_t>(tokens[t + 1]);
        loss += lse - row[target];
        if (dlogits) {
            for (std::size_t j = 0; j < logits.cols; ++j) {
                (*dlogits)(t, j) = std::exp(row[j] - lse) / static_cast<double>(n);
            }
            (*dlogits)(t, target) -= 1.0 / static_cast<double>(n);
        }
    }
    return loss / static_cast<double>(n);
}

/// Cross-entropy of the mean-pooled logits against `label`.
inline double pooled_class_loss(const Mat& logits, int label, Mat* dlogits) {
    const std::size_t T = logits.rows;
    const std::size_t C = logits.cols;
    std::vector<double> pooled(C, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < C; ++j) pooled[j] += logits(t, j) / static_cast<double>(T);
    }
    const double mx = *std::max_element(pooled.begin(), pooled.end());
    double z = 0.0;
    for (double v : pooled) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    if (dlogits) {
        *dlogits = Mat(T, C);
        for (std::size_t j = 0; j < C; ++j) {
            const double gj = std::exp(pooled[j] - lse) - (static_cast<int>(j) == label ? 1.0 : 0.0);
            for (std::size_t t = 0; t < T; ++t) (*dlogits)(t, j) = gj / static_cast<double>(T);
        }
    }
    return lse - pooled[static_cast<std::size_t>(label)];
}

struct TrainOptions {
    int epochs = 30;
    double learning_rate = 5e-3;
    std::size_t batch_size = 8;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
    // Called after each epoch with (epoch, mean training loss).
    std::function<void(int, double)> on_epoch;
};

/// Training material: either labelled sequences or a token stream.
struct TrainingData {
    std::vector<LabeledSequence> examples;  // classification
    std::vector<Token> corpus;              // generation

    bool empty() const noexcept { return examples.empty() && corpus.size() < 2; }
};

namespace detail {

class Adam {
public:
    explicit Adam(const GradBuffer& proto_sizes, double lr) : lr_(lr) {
        for (const auto& b : proto_sizes.buffers()) {
            m_.emplace_back(b.size(), 0.0);
            v_.emplace_back(b.size(), 0.0);
        }
    }

    void step(ModelParams& params, GradBuffer& grads, double lr_scale) {
        ++t_;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, t_);
        const double c2 = 1.0 - std::pow(b2, t_);
        std::size_t idx = 0;
        auto& bufs = grads.buffers();
        for_each_tensor(params, [&](const std::string&, const ModuleId&, Tensor& t) {
            auto& g = bufs[idx];
            auto& m = m_[idx];
            auto& v = v_[idx];
            for (std::size_t i = 0; i < t.size(); ++i) {
                m[i] = b1 * m[i] + (1 - b1) * g[i];
                v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
                const double upd = lr_ * lr_scale * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
                t[i] = static_cast<float>(t[i] - upd);
            }
            ++idx;
        });
    }

private:
    double lr_;
    int t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

inline void clip_gradients(GradBuffer& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& b : grads.buffers()) {
        for (double g : b) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& b : grads.buffers()) {
            for (double& g : b) g *= s;
        }
    }
}

}  // namespace detail

/// Trains a small model from scratch. Single-threaded; a fixed seed gives
/// bit-identical parameters.
inline ModelParams train_toy_checkpoint(const ModelConfig& config, const TrainingData& data,
                                        const TrainOptions& opt) {
    config.validate();
    if (data.empty()) throw InputError("training data is empty");
    const bool classify = config.head.kind == HeadKind::Classification;
    if (classify && data.examples.empty()) throw InputError("classification training needs labelled examples");
    if (!classify && data.corpus.size() < 2) throw InputError("generation training needs a corpus of >= 2 tokens");

    std::mt19937_64 rng(opt.seed);
    ModelParams params = init_params(config, rng);
    GradBuffer grads(params);
    detail::Adam adam(grads, opt.learning_rate);

    // One epoch is one pass worth of sequences over the training material.
    std::vector<std::vector<Token>> seqs;
    std::vector<int> labels;
    const std::size_t L = config.context_len;
    auto build_epoch = [&] {
        seqs.clear();
        labels.clear();
        if (classify) {
            std::vector<std::size_t> order(data.examples.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t i : order) {
                const auto& ex = data.examples[i];
                if (ex.tokens.empty()) continue;
                const std::size_t n = std::min(ex.tokens.size(), L);
                seqs.emplace_back(ex.tokens.begin(), ex.tokens.begin() + static_cast<std::ptrdiff_t>(n));
                labels.push_back(ex.label);
            }
        } else {
            const std::size_t len = std::min(L, data.corpus.size());
            const std::size_t count = std::max<std::size_t>(1, (data.corpus.size() - 1) / std::max<std::size_t>(1, len - 1));
            std::uniform_int_distribution<std::size_t> start(0, data.corpus.size() - len);
            for (std::size_t i = 0; i < count; ++i) {
                const std::size_t s = start(rng);
                seqs.emplace_back(data.corpus.begin() + static_cast<std::ptrdiff_t>(s),
                                  data.corpus.begin() + static_cast<std::ptrdiff_t>(s + len));
            }
        }
    };

    build_epoch();
    const std::size_t steps_per_epoch = (seqs.size() + opt.batch_size - 1) / opt.batch_size;
    const double total_steps = static_cast<double>(steps_per_epoch) * opt.epochs;
    std::size_t step = 0;
    ForwardCache cache;
    Mat dlogits;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        if (epoch > 0) build_epoch();
        double epoch_loss = 0.0;
        for (std::size_t lo = 0; lo < seqs.size(); lo += opt.batch_size) {
            const std::size_t hi = std::min(seqs.size(), lo + opt.batch_size);
            grads.zero();
            double batch_loss = 0.0;
            for (std::size_t s = lo; s < hi; ++s) {
                if (!classify && seqs[s].size() < 2) continue;
                Mat logits;
                try {
                    logits = forward_head(params, config, seqs[s], {}, &cache);
                } catch (const NumericError& e) {
                    throw TrainingError(e.what(), epoch);
                }
                const double loss = classify ? pooled_class_loss(logits, labels[s], &dlogits)
                                             : next_token_loss(logits, seqs[s], &dlogits);
                if (!std::isfinite(loss)) throw TrainingError("loss is not finite", epoch);
                batch_loss += loss;
                const double scale = 1.0 / static_cast<double>(hi - lo);
                for (double& g : dlogits.data) g *= scale;
                backward(params, config, cache, dlogits, grads);
            }
            detail::clip_gradients(grads, opt.grad_clip);
            // Cosine decay to 10% of the base rate.
            const double progress = static_cast<double>(step) / std::max(1.0, total_steps);
            const double lr_scale = 0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
            adam.step(params, grads, lr_scale);
            ++step;
            epoch_loss += batch_loss;
        }
        epoch_loss /= static_cast<double>(std::max<std::size_t>(1, seqs.size()));
        if (!std::isfinite(epoch_loss)) throw TrainingError("loss diverged", epoch);
        bool finite = true;
        for_each_tensor(params, [&](const std::string&, const ModuleId&, const Tensor& t) {
            finite = finite && t.all_finite();
        });
        if (!finite) throw TrainingError("parameters diverged", epoch);
        if (opt.on_epoch) opt.on_epoch(epoch, epoch_loss);
    }
    return params;
}

}  // namespace qslm
