#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "bnn/errors.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

/// Normalized 1-D Gaussian taps for radius ceil(3*sigma), truncated and
/// rescaled to sum exactly 1.
inline std::vector<double> gaussian_kernel_1d(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> w(2 * radius + 1);
    double sum = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        w[t + radius] = std::exp(-0.5 * (t * t) / (sigma * sigma));
        sum += w[t + radius];
    }
    for (double& v : w) v /= sum;
    return w;
}

namespace detail {

/// Fold an out-of-range index back into [0, n) by half-sample reflection
/// (edge value repeated); loops so radii larger than the extent still work.
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

template <typename T>
void blur_axis(const T* src, T* dst, std::size_t n, std::size_t stride,
               const std::vector<double>& w) {
    const std::ptrdiff_t radius = static_cast<std::ptrdiff_t>(w.size() / 2);
    const std::ptrdiff_t sn = static_cast<std::ptrdiff_t>(n);
    for (std::ptrdiff_t i = 0; i < sn; ++i) {
        double acc = 0.0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
            const std::ptrdiff_t j = reflect_index(i + t, sn);
            acc += w[t + radius] * static_cast<double>(src[j * stride]);
        }
        dst[i * stride] = static_cast<T>(acc);
    }
}

}  // namespace detail

/// Separable 3-D Gaussian blur over the trailing three axes; leading axes
/// (batch/channel) are processed independently. Reflect padding at borders;
/// sigma = 0 is a bitwise identity.
template <typename T>
TensorT<T> smooth_gaussian_3d(const TensorT<T>& vol, double sigma) {
    if (sigma < 0.0) throw invalid_parameter("smooth_gaussian_3d: sigma < 0");
    if (vol.rank() < 3)
        throw invalid_shape("smooth_gaussian_3d: need rank >= 3");
    if (sigma == 0.0) return vol;

    const auto& sh = vol.shape();
    const std::size_t nd = sh[sh.size() - 3];
    const std::size_t nh = sh[sh.size() - 2];
    const std::size_t nw = sh[sh.size() - 1];
    std::size_t outer = 1;
    for (std::size_t a = 0; a + 3 < sh.size(); ++a) outer *= sh[a];

    const std::vector<double> w = gaussian_kernel_1d(sigma);
    TensorT<T> out = vol;
    TensorT<T> tmp(vol.shape());

    for (std::size_t o = 0; o < outer; ++o) {
        T* cur = out.data() + o * nd * nh * nw;
        T* buf = tmp.data() + o * nd * nh * nw;
        // depth axis
        for (std::size_t h = 0; h < nh; ++h)
            for (std::size_t x = 0; x < nw; ++x)
                detail::blur_axis(cur + h * nw + x, buf + h * nw + x, nd,
                                  nh * nw, w);
        // height axis
        for (std::size_t d = 0; d < nd; ++d)
            for (std::size_t x = 0; x < nw; ++x)
                detail::blur_axis(buf + d * nh * nw + x, cur + d * nh * nw + x,
                                  nh, nw, w);
        // width axis
        for (std::size_t d = 0; d < nd; ++d)
            for (std::size_t h = 0; h < nh; ++h)
                detail::blur_axis(cur + d * nh * nw + h * nw,
                                  buf + d * nh * nw + h * nw, nw, 1, w);
        std::copy(buf, buf + nd * nh * nw, cur);
    }
    return out;
}

}  // namespace bnn
