#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bnn/errors.hpp"
#include "bnn/nn.hpp"
#include "bnn/rng.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

// ---------------------------------------------------------------------------
// Gaussian head
// ---------------------------------------------------------------------------

/// Gaussian family over the classifier head: every weight and bias is
/// N(trained value, s^2) with one shared scale s. The means are frozen
/// copies; converting never touches the source parameters.
template <typename T>
struct BayesianHeadT {
    TensorT<T> mean_weight;  // [classes, F]
    TensorT<T> mean_bias;    // [classes]
    double scale = 0.01;
};

using BayesianHead = BayesianHeadT<float>;

template <typename T>
BayesianHeadT<T> to_bayesian(const ModelParamsT<T>& params, double s) {
    if (s < 0.0 || !std::isfinite(s))
        throw invalid_parameter("to_bayesian: scale s must be finite and >= 0");
    return {params.tensor("head.weight"), params.tensor("head.bias"), s};
}

template <typename T>
struct HeadSample {
    TensorT<T> weight;
    TensorT<T> bias;
};

/// Draw a concrete head; weight entries use counters [0, Nw), bias entries
/// follow, so the draw is independent of evaluation order.
template <typename T>
HeadSample<T> sample_head(const BayesianHeadT<T>& bh, const Rng& rng) {
    HeadSample<T> out{TensorT<T>(bh.mean_weight.shape()),
                      TensorT<T>(bh.mean_bias.shape())};
    const std::size_t nw = bh.mean_weight.numel();
    for (std::size_t i = 0; i < nw; ++i)
        out.weight[i] = static_cast<T>(static_cast<double>(bh.mean_weight[i]) +
                                       bh.scale * rng.normal_at(i));
    for (std::size_t i = 0; i < bh.mean_bias.numel(); ++i)
        out.bias[i] = static_cast<T>(static_cast<double>(bh.mean_bias[i]) +
                                     bh.scale * rng.normal_at(nw + i));
    return out;
}

/// Copy of `params` with the head replaced by a concrete sample.
template <typename T>
ModelParamsT<T> splice_head(const ModelParamsT<T>& params,
                            const HeadSample<T>& head) {
    ModelParamsT<T> out = params;
    out.find("head.weight").value = head.weight;
    out.find("head.bias").value = head.bias;
    return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo inference
// ---------------------------------------------------------------------------

/// Per-sample ensemble summary: mean class probabilities and their
/// population standard deviation over the N sampled heads.
struct McPrediction {
    Tensor p_mean;  // [classes]
    Tensor p_std;   // [classes]
    std::size_t n_samples = 0;
};

/// Convolutional trunk output for one input volume, the part shared by all
/// head samples.
template <typename T>
TensorT<T> trunk_features(const ModelSpec& spec, const ModelParamsT<T>& params,
                          const TensorT<T>& x) {
    return forward(spec, params, as_batch1(x)).trace.features;
}

/// Head logits for a single feature row.
template <typename T>
TensorT<T> head_logits(const HeadSample<T>& head, const TensorT<T>& features) {
    return linear(features, head.weight, head.bias);
}

namespace detail {

/// Mean and population std over rows of probs [N, K]. The mean is computed
/// as p_0 + avg(p_i - p_0): algebraically (1/N)*sum(p_i), but identical rows
/// collapse to p_0 bitwise, so a zero-variance ensemble reproduces the
/// deterministic output exactly.
inline McPrediction aggregate_probs(const std::vector<Tensor>& probs) {
    const std::size_t n = probs.size();
    const std::size_t k = probs[0].numel();
    McPrediction out;
    out.n_samples = n;
    out.p_mean = Tensor({k});
    out.p_std = Tensor({k});
    for (std::size_t j = 0; j < k; ++j) {
        float dev_sum = 0.0f;
        for (std::size_t i = 0; i < n; ++i) dev_sum += probs[i][j] - probs[0][j];
        out.p_mean[j] = probs[0][j] + dev_sum / static_cast<float>(n);
        float sq_sum = 0.0f;
        for (std::size_t i = 0; i < n; ++i) {
            const float d = probs[i][j] - out.p_mean[j];
            sq_sum += d * d;
        }
        out.p_std[j] = std::sqrt(sq_sum / static_cast<float>(n));
    }
    return out;
}

}  // namespace detail

/// Monte-Carlo ensemble inference for one volume: the trunk runs once, then
/// N heads sampled from streams 0..N-1 of `seed` are applied; probabilities
/// are softmaxed per sample and then averaged.
inline McPrediction mc_infer(const ModelSpec& spec, const ModelParams& params,
                             const BayesianHead& bh, const Tensor& x,
                             std::size_t n_samples, std::uint64_t seed) {
    if (n_samples < 1) throw invalid_parameter("mc_infer: N must be >= 1");
    const Tensor features = trunk_features(spec, params, x);
    std::vector<Tensor> probs(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const HeadSample<float> head = sample_head(bh, Rng(seed, i));
        const Tensor logits = head_logits(head, features);
        probs[i] = softmax(logits.reshaped({logits.numel()}));
    }
    return detail::aggregate_probs(probs);
}

/// Deterministic class probabilities of the unconverted model.
inline Tensor deterministic_predict(const ModelSpec& spec,
                                    const ModelParams& params, const Tensor& x) {
    const Tensor logits = forward(spec, params, as_batch1(x)).logits;
    return softmax(logits.reshaped({logits.numel()}));
}

// ---------------------------------------------------------------------------
// Predictions CSV
// ---------------------------------------------------------------------------

struct PredictionRow {
    std::string id;
    McPrediction pred;
    int label;
};

inline void write_predictions_csv(const std::string& path,
                                  const std::vector<PredictionRow>& rows) {
    std::ofstream os(path);
    if (!os) throw io_error("predictions: cannot open for write: " + path);
    os << "id,p_mean_0,p_mean_1,p_std_0,p_std_1,label\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g,%d\n",
                      r.id.c_str(), r.pred.p_mean[0], r.pred.p_mean[1],
                      r.pred.p_std[0], r.pred.p_std[1], r.label);
        os << buf;
    }
    if (!os) throw io_error("predictions: write failed: " + path);
}

inline std::vector<PredictionRow> read_predictions_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("predictions: cannot open: " + path);
    std::string line;
    if (!std::getline(is, line) ||
        line != "id,p_mean_0,p_mean_1,p_std_0,p_std_1,label")
        throw io_error("predictions: unexpected header in " + path);
    std::vector<PredictionRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tok;
        PredictionRow r;
        r.pred.p_mean = Tensor({2});
        r.pred.p_std = Tensor({2});
        if (!std::getline(ls, r.id, ',')) throw io_error("predictions: bad row");
        auto next_f = [&]() {
            if (!std::getline(ls, tok, ','))
                throw io_error("predictions: bad row in " + path);
            return std::stof(tok);
        };
        r.pred.p_mean[0] = next_f();
        r.pred.p_mean[1] = next_f();
        r.pred.p_std[0] = next_f();
        r.pred.p_std[1] = next_f();
        if (!std::getline(ls, tok, ','))
            throw io_error("predictions: bad row in " + path);
        r.label = std::stoi(tok);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace bnn
