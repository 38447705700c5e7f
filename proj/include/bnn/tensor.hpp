#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "bnn/errors.hpp"
#include "bnn/rng.hpp"

namespace bnn {

/// Dense n-dimensional array, row-major, contiguous storage.
///
/// Float by default; the double instantiation is used by the gradient-check
/// suite. Tensors are plain values: copyable, movable, safe to share
/// read-only across threads.
template <typename T>
class TensorT {
public:
    using value_type = T;

    TensorT() = default;

    explicit TensorT(std::vector<std::size_t> shape, T fill = T(0))
        : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

    TensorT(std::vector<std::size_t> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != checked_numel(shape_))
            throw invalid_shape("tensor data length does not match shape");
    }

    static TensorT zeros(std::vector<std::size_t> shape) {
        return TensorT(std::move(shape), T(0));
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_[axis]; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }

    T& operator[](std::size_t i) {
        assert(i < data_.size());
        return data_[i];
    }
    const T& operator[](std::size_t i) const {
        assert(i < data_.size());
        return data_[i];
    }

    /// Row-major multi-index access; bounds-checked in debug builds.
    T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
    const T& at(std::initializer_list<std::size_t> idx) const {
        return data_[offset(idx)];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    TensorT reshaped(std::vector<std::size_t> new_shape) const {
        if (checked_numel(new_shape) != numel())
            throw invalid_shape("reshape changes element count");
        return TensorT(std::move(new_shape), data_);
    }

    bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i)
            out[i] = static_cast<U>(data_[i]);
        return TensorT<U>(shape_, std::move(out));
    }

private:
    static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t e : shape) {
            if (e < 1) throw invalid_shape("tensor extent must be >= 1");
            n *= e;
        }
        return n;
    }

    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        assert(idx.size() == shape_.size());
        std::size_t off = 0;
        std::size_t axis = 0;
        for (std::size_t i : idx) {
            assert(i < shape_[axis]);
            off = off * shape_[axis] + i;
            ++axis;
        }
        return off;
    }

    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) throw invalid_shape("add: shape mismatch");
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) throw invalid_shape("sub: shape mismatch");
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
    return out;
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
    return out;
}

// ---------------------------------------------------------------------------
// Reductions (accumulated in double regardless of T)
// ---------------------------------------------------------------------------

template <typename T>
T mean(const TensorT<T>& t) {
    if (t.empty()) throw invalid_shape("mean: empty tensor");
    double acc = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) acc += static_cast<double>(t[i]);
    return static_cast<T>(acc / static_cast<double>(t.numel()));
}

/// Population standard deviation (divide by N).
template <typename T>
T stddev(const TensorT<T>& t) {
    if (t.empty()) throw invalid_shape("stddev: empty tensor");
    double mu = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) mu += static_cast<double>(t[i]);
    mu /= static_cast<double>(t.numel());
    double acc = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const double d = static_cast<double>(t[i]) - mu;
        acc += d * d;
    }
    return static_cast<T>(std::sqrt(acc / static_cast<double>(t.numel())));
}

/// Percentile with linear interpolation between order statistics.
template <typename T>
T percentile(const TensorT<T>& t, double q) {
    if (t.empty()) throw invalid_shape("percentile: empty tensor");
    if (!(q >= 0.0 && q <= 100.0))
        throw invalid_parameter("percentile: q must be in [0, 100]");
    std::vector<T> sorted(t.values());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.size() == 1) return sorted[0];
    const double pos = q / 100.0 * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return static_cast<T>(static_cast<double>(sorted[lo]) +
                          frac * (static_cast<double>(sorted[hi]) -
                                  static_cast<double>(sorted[lo])));
}

/// Index of the largest entry; first occurrence wins on ties.
template <typename T>
std::size_t argmax(const TensorT<T>& t) {
    if (t.empty()) throw invalid_shape("argmax: empty tensor");
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.numel(); ++i)
        if (t[i] > t[best]) best = i;
    return best;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

/// Numerically stable softmax of a rank-1 tensor (max subtraction).
template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
    if (logits.rank() != 1 || logits.empty())
        throw invalid_shape("softmax: expects a nonempty rank-1 tensor");
    T hi = logits[0];
    for (std::size_t i = 1; i < logits.numel(); ++i) hi = std::max(hi, logits[i]);
    TensorT<T> out(logits.shape());
    T sum = T(0);
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        out[i] = std::exp(logits[i] - hi);
        sum += out[i];
    }
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= sum;
    return out;
}

// ---------------------------------------------------------------------------
// Random tensors
// ---------------------------------------------------------------------------

/// i.i.d. draws from N(mean, std^2); std = 0 yields the constant mean.
/// Draw i comes from counter position i, so generation order is free.
template <typename T>
TensorT<T> normal_sample(const Rng& rng, double mean, double std,
                         std::vector<std::size_t> shape) {
    if (!std::isfinite(mean) || !std::isfinite(std))
        throw invalid_parameter("normal_sample: mean/std must be finite");
    if (std < 0.0) throw invalid_parameter("normal_sample: std must be >= 0");
    TensorT<T> out(std::move(shape));
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(mean + std * rng.normal_at(i));
    return out;
}

}  // namespace bnn
