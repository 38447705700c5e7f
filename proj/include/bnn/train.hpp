#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bnn/errors.hpp"
#include "bnn/nn.hpp"
#include "bnn/parallel.hpp"
#include "bnn/rng.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

template <typename T>
struct LossResult {
    double loss;
    TensorT<T> grad;  // dLoss/dLogits, [B, classes]
};

/// Mean softmax cross-entropy over the batch.
/// grad[b] = (softmax(logits[b]) - onehot(label[b])) / B
template <typename T>
LossResult<T> cross_entropy(const TensorT<T>& logits,
                            const std::vector<int>& labels) {
    const std::size_t B = logits.shape()[0];
    const std::size_t K = logits.shape()[1];
    if (labels.size() != B)
        throw invalid_shape("cross_entropy: label count != batch size");
    LossResult<T> out{0.0, TensorT<T>(logits.shape())};
    for (std::size_t b = 0; b < B; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= K)
            throw invalid_label("cross_entropy: label out of range: " +
                                std::to_string(y));
        TensorT<T> row({K});
        for (std::size_t k = 0; k < K; ++k) row[k] = logits[b * K + k];
        const TensorT<T> p = softmax(row);
        out.loss -= std::log(static_cast<double>(p[static_cast<std::size_t>(y)]));
        for (std::size_t k = 0; k < K; ++k) {
            T g = p[k];
            if (k == static_cast<std::size_t>(y)) g -= T(1);
            out.grad[b * K + k] = g / static_cast<T>(B);
        }
    }
    out.loss /= static_cast<double>(B);
    return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamHyper {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamStateT {
    AdamHyper hyper;
    std::vector<TensorT<T>> m;
    std::vector<TensorT<T>> v;
    std::uint64_t step = 0;

    static AdamStateT make(const ModelParamsT<T>& params, AdamHyper hyper = {}) {
        AdamStateT s;
        s.hyper = hyper;
        for (const auto& p : params.items) {
            s.m.emplace_back(p.value.shape());
            s.v.emplace_back(p.value.shape());
        }
        return s;
    }
};

using AdamState = AdamStateT<float>;

/// Standard bias-corrected Adam update, in place.
template <typename T>
void adam_step(ModelParamsT<T>& params, const ModelParamsT<T>& grads,
               AdamStateT<T>& state) {
    if (grads.items.size() != params.items.size() ||
        state.m.size() != params.items.size())
        throw invalid_state("adam_step: state/grads do not match params");
    state.step += 1;
    const double b1 = state.hyper.beta1;
    const double b2 = state.hyper.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.items.size(); ++i) {
        auto& p = params.items[i].value;
        const auto& g = grads.items[i].value;
        if (!p.same_shape(g))
            throw invalid_state("adam_step: gradient shape mismatch for " +
                                params.items[i].name);
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const double gj = static_cast<double>(g[j]);
            if (!std::isfinite(gj))
                throw invalid_state("adam_step: non-finite gradient in parameter " +
                                    params.items[i].name);
            const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
            const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            const double mhat = mj / bc1;
            const double vhat = vj / bc2;
            p[j] = static_cast<T>(static_cast<double>(p[j]) -
                                  state.hyper.lr * mhat /
                                      (std::sqrt(vhat) + state.hyper.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    ModelSpec spec;
    std::size_t epochs = 5;
    std::size_t batch_size = 8;
    std::uint64_t seed = 1;
    AdamHyper adam;

    void validate() const {
        if (epochs < 1) throw config_error("train: epochs must be >= 1");
        if (batch_size < 1) throw config_error("train: batch size must be >= 1");
        spec.validate();
    }
};

struct EpochLog {
    std::size_t epoch;
    double loss;
    double accuracy;
};

struct FitResult {
    ModelParams params;
    std::vector<EpochLog> log;
};

namespace detail {

/// Assemble [B,1,S,S,S] batch from sample tensors at the given indices.
inline Tensor gather_batch(const std::vector<Tensor>& xs,
                           const std::vector<std::size_t>& order,
                           std::size_t lo, std::size_t hi) {
    const auto& sh = xs[order[lo]].shape();
    std::vector<std::size_t> bshape = sh;
    bshape.insert(bshape.begin(), hi - lo);
    Tensor batch(bshape);
    const std::size_t n = xs[order[lo]].numel();
    for (std::size_t i = lo; i < hi; ++i) {
        const Tensor& x = xs[order[i]];
        if (x.numel() != n) throw invalid_shape("fit: ragged sample shapes");
        std::copy(x.data(), x.data() + n, batch.data() + (i - lo) * n);
    }
    return batch;
}

}  // namespace detail

/// Supervised training: shuffled mini-batches, cross-entropy, Adam.
/// Bit-reproducible for a fixed seed; per-sample forward/backward within a
/// batch may run on `threads` workers, gradients reduced in index order.
inline FitResult fit(const TrainConfig& cfg, const std::vector<Tensor>& xs,
                     const std::vector<int>& labels, int threads = 1) {
    cfg.validate();
    if (xs.empty() || xs.size() != labels.size())
        throw config_error("fit: empty or inconsistent dataset");

    FitResult out;
    out.params = init_params<float>(cfg.spec, Rng(cfg.seed, streams::init));
    AdamState adam = AdamState::make(out.params, cfg.adam);
    Rng shuffle_rng(cfg.seed, streams::shuffle);

    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // Fisher-Yates reshuffle each epoch
        for (std::size_t i = n - 1; i > 0; --i) {
            const std::size_t j = shuffle_rng.next_below(i + 1);
            std::swap(order[i], order[j]);
        }

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
            const std::size_t hi = std::min(n, lo + cfg.batch_size);
            const std::size_t bsz = hi - lo;
            const Tensor batch = detail::gather_batch(xs, order, lo, hi);
            std::vector<int> ys(bsz);
            for (std::size_t i = 0; i < bsz; ++i) ys[i] = labels[order[lo + i]];

            // Per-sample forward/backward into private slots, reduced in
            // index order so any thread count matches threads = 1.
            std::vector<ForwardResult<float>> fwd(bsz);
            parallel_for(bsz, threads, [&](std::size_t i) {
                Tensor one({1, batch.shape()[1], batch.shape()[2],
                            batch.shape()[3], batch.shape()[4]});
                const std::size_t stride = one.numel();
                std::copy(batch.data() + i * stride, batch.data() + (i + 1) * stride,
                          one.data());
                fwd[i] = forward(cfg.spec, out.params, one);
            });

            Tensor logits({bsz, cfg.spec.classes});
            for (std::size_t i = 0; i < bsz; ++i)
                for (std::size_t k = 0; k < cfg.spec.classes; ++k)
                    logits[i * cfg.spec.classes + k] = fwd[i].logits[k];
            const LossResult<float> loss = cross_entropy(logits, ys);
            loss_sum += loss.loss * static_cast<double>(bsz);
            for (std::size_t i = 0; i < bsz; ++i) {
                std::size_t best = 0;
                for (std::size_t k = 1; k < cfg.spec.classes; ++k)
                    if (logits[i * cfg.spec.classes + k] >
                        logits[i * cfg.spec.classes + best])
                        best = k;
                if (best == static_cast<std::size_t>(ys[i])) ++correct;
            }

            std::vector<ModelParams> sample_grads(bsz);
            parallel_for(bsz, threads, [&](std::size_t i) {
                TensorT<float> up({1, cfg.spec.classes});
                for (std::size_t k = 0; k < cfg.spec.classes; ++k)
                    up[k] = loss.grad[i * cfg.spec.classes + k];
                sample_grads[i] =
                    backward(cfg.spec, out.params, fwd[i].trace, up).grads;
            });
            ModelParams total = std::move(sample_grads[0]);
            for (std::size_t i = 1; i < bsz; ++i)
                for (std::size_t pi = 0; pi < total.items.size(); ++pi) {
                    auto& dst = total.items[pi].value;
                    const auto& src = sample_grads[i].items[pi].value;
                    for (std::size_t j = 0; j < dst.numel(); ++j) dst[j] += src[j];
                }
            adam_step(out.params, total, adam);
        }
        out.log.push_back({epoch, loss_sum / static_cast<double>(n),
                           static_cast<double>(correct) / static_cast<double>(n)});
    }
    return out;
}

}  // namespace bnn
