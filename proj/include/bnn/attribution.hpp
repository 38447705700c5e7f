#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "bnn/bayes.hpp"
#include "bnn/errors.hpp"
#include "bnn/nn.hpp"
#include "bnn/parallel.hpp"
#include "bnn/smoothing.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

struct AttributionConfig {
    std::size_t steps = 64;      // interpolation points M
    std::size_t target = 0;      // class id the attribution explains
    double sigma = 4.0;          // smoothing kernel width, voxels
    double mask_percentile = 95.0;
    std::size_t repeats = 10;    // sampled networks R
    std::uint64_t seed = 1;

    void validate() const {
        if (steps < 2) throw invalid_parameter("attribution: steps must be >= 2");
        if (!(mask_percentile > 0.0 && mask_percentile < 100.0))
            throw invalid_parameter("attribution: percentile must be in (0, 100)");
        if (repeats < 1) throw invalid_parameter("attribution: repeats must be >= 1");
        if (sigma < 0.0) throw invalid_parameter("attribution: sigma must be >= 0");
    }
};

template <typename T>
struct IgOutput {
    TensorT<T> attribution;
    double completeness_gap;  // |sum(attr) - (F(x) - F(x0))| / |F(x) - F(x0)|
    double f_x;
    double f_x0;
};

/// Path-integral attribution of a scalar-valued differentiable function.
///
/// `grad_fn(point)` returns (value, d value / d point). The integral is a
/// right-endpoint average over the M interpolants x0 + (i/M)(x - x0),
/// i = 1..M, scaled elementwise by (x - x0).
template <typename T, typename GradFn>
IgOutput<T> integrated_gradients(GradFn&& grad_fn, const TensorT<T>& x,
                                 const TensorT<T>& x0, std::size_t steps) {
    if (!x.same_shape(x0))
        throw invalid_shape("integrated_gradients: baseline shape mismatch");
    if (steps < 2) throw invalid_parameter("integrated_gradients: steps < 2");

    const std::size_t n = x.numel();
    std::vector<double> grad_sum(n, 0.0);
    double f_x = 0.0;
    for (std::size_t i = 1; i <= steps; ++i) {
        const double alpha = static_cast<double>(i) / static_cast<double>(steps);
        TensorT<T> point(x.shape());
        for (std::size_t j = 0; j < n; ++j)
            point[j] = static_cast<T>(static_cast<double>(x0[j]) +
                                      alpha * (static_cast<double>(x[j]) -
                                               static_cast<double>(x0[j])));
        auto [value, grad] = grad_fn(point);
        for (std::size_t j = 0; j < n; ++j)
            grad_sum[j] += static_cast<double>(grad[j]);
        if (i == steps) f_x = value;
    }
    const double f_x0 = grad_fn(x0).first;

    IgOutput<T> out{TensorT<T>(x.shape()), 0.0, f_x, f_x0};
    double attr_sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double a = (static_cast<double>(x[j]) - static_cast<double>(x0[j])) *
                         (grad_sum[j] / static_cast<double>(steps));
        out.attribution[j] = static_cast<T>(a);
        attr_sum += a;
    }
    const double delta = f_x - f_x0;
    out.completeness_gap =
        std::abs(attr_sum - delta) / std::max(std::abs(delta), 1e-12);
    return out;
}

/// Softmax probability of `target` and its gradient w.r.t. the input volume,
/// for a fixed (deterministic) parameter set.
template <typename T>
std::pair<double, TensorT<T>> target_prob_grad(const ModelSpec& spec,
                                               const ModelParamsT<T>& params,
                                               const TensorT<T>& x,
                                               std::size_t target) {
    if (target >= spec.classes)
        throw invalid_parameter("attribution: target class out of range");
    ForwardResult<T> fr = forward(spec, params, as_batch1(x));
    const TensorT<T> probs = softmax(fr.logits.reshaped({spec.classes}));
    TensorT<T> upstream({std::size_t(1), spec.classes});
    for (std::size_t j = 0; j < spec.classes; ++j) {
        const T indicator = (j == target) ? T(1) : T(0);
        upstream[j] = probs[target] * (indicator - probs[j]);
    }
    BackwardResult<T> bwd = backward(spec, params, fr.trace, upstream);
    return {static_cast<double>(probs[target]),
            bwd.input_grad.reshaped(x.shape())};
}

/// Integrated gradients of the model's target-class probability against the
/// all-zeros baseline.
template <typename T>
IgOutput<T> integrated_gradients(const ModelSpec& spec,
                                 const ModelParamsT<T>& params,
                                 const TensorT<T>& x,
                                 const AttributionConfig& cfg) {
    cfg.validate();
    const TensorT<T> baseline(x.shape());
    return integrated_gradients(
        [&](const TensorT<T>& point) {
            return target_prob_grad(spec, params, point, cfg.target);
        },
        x, baseline, cfg.steps);
}

/// Binary mask of the voxels strictly above the q-th percentile.
template <typename T>
TensorT<T> percentile_mask(const TensorT<T>& vol, double q) {
    if (!(q > 0.0 && q < 100.0))
        throw invalid_parameter("percentile_mask: q must be in (0, 100)");
    const T thr = percentile(vol, q);
    TensorT<T> mask(vol.shape());
    for (std::size_t i = 0; i < vol.numel(); ++i)
        mask[i] = vol[i] > thr ? T(1) : T(0);
    return mask;
}

/// Attribution maps from one pipeline run.
struct AttributionResult {
    Tensor raw;              // mean raw integrated gradients over the R repeats
    Tensor smoothed;         // mean Gaussian-smoothed attribution
    Tensor fractional_mask;  // voxelwise mean of the R binary masks
    Tensor binary_mask;      // fractional mask > 0.5 (strict majority)
    double completeness_gap; // mean relative completeness gap over repeats
    std::size_t target;
};

namespace detail {

/// Mean of equal-shaped volumes, centered on the first so that identical
/// inputs collapse to the first bitwise.
inline Tensor centered_mean(const std::vector<Tensor>& vols) {
    const std::size_t r = vols.size();
    Tensor out(vols[0].shape());
    for (std::size_t j = 0; j < out.numel(); ++j) {
        float dev = 0.0f;
        for (std::size_t i = 0; i < r; ++i) dev += vols[i][j] - vols[0][j];
        out[j] = vols[0][j] + dev / static_cast<float>(r);
    }
    return out;
}

}  // namespace detail

/// The full explanation procedure: R times, sample a head (stream r), run
/// integrated gradients, smooth, mask at the percentile; then average, with
/// the averaged mask re-binarized by strict majority.
inline AttributionResult bayes_attribution(const ModelSpec& spec,
                                           const ModelParams& params,
                                           const BayesianHead& bh, const Tensor& x,
                                           const AttributionConfig& cfg,
                                           int threads = 1) {
    cfg.validate();
    const std::size_t r_count = cfg.repeats;
    std::vector<Tensor> raws(r_count), smooths(r_count), masks(r_count);
    std::vector<double> gaps(r_count);

    parallel_for(r_count, threads, [&](std::size_t idx) {
        const std::size_t r = idx + 1;  // streams 1..R
        const HeadSample<float> head = sample_head(bh, Rng(cfg.seed, r));
        const ModelParams spliced = splice_head(params, head);
        IgOutput<float> ig = integrated_gradients(spec, spliced, x, cfg);
        smooths[idx] = smooth_gaussian_3d(ig.attribution, cfg.sigma);
        masks[idx] = percentile_mask(smooths[idx], cfg.mask_percentile);
        raws[idx] = std::move(ig.attribution);
        gaps[idx] = ig.completeness_gap;
    });

    AttributionResult out;
    out.target = cfg.target;
    out.raw = detail::centered_mean(raws);
    out.smoothed = detail::centered_mean(smooths);
    out.fractional_mask = Tensor(x.shape());
    for (std::size_t j = 0; j < out.fractional_mask.numel(); ++j) {
        float sum = 0.0f;
        for (std::size_t i = 0; i < r_count; ++i) sum += masks[i][j];
        out.fractional_mask[j] = sum / static_cast<float>(r_count);
    }
    out.binary_mask = Tensor(x.shape());
    for (std::size_t j = 0; j < out.binary_mask.numel(); ++j)
        out.binary_mask[j] = out.fractional_mask[j] > 0.5f ? 1.0f : 0.0f;
    double gap_sum = 0.0;
    for (double g : gaps) gap_sum += g;
    out.completeness_gap = gap_sum / static_cast<double>(r_count);
    return out;
}

}  // namespace bnn
