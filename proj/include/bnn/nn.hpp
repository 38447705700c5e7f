#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "bnn/errors.hpp"
#include "bnn/rng.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

/// Classifier architecture: three residual blocks of depthwise-separable 3-D
/// convolutions, each block halving the spatial side, then flatten + linear.
struct ModelSpec {
    std::size_t side = 32;
    std::size_t in_channels = 1;
    std::array<std::size_t, 3> channels{8, 16, 32};
    std::size_t kernel = 3;
    std::size_t classes = 2;

    void validate() const {
        if (side == 0 || side % 8 != 0)
            throw invalid_shape("ModelSpec: side must be a positive multiple of 8");
        if (kernel % 2 == 0)
            throw invalid_parameter("ModelSpec: kernel must be odd");
        if (in_channels == 0 || classes < 2)
            throw invalid_parameter("ModelSpec: bad channel/class counts");
        for (std::size_t c : channels)
            if (c == 0) throw invalid_parameter("ModelSpec: zero block width");
    }

    std::size_t final_side() const { return side / 8; }
    std::size_t flatten_dim() const {
        const std::size_t s = final_side();
        return channels[2] * s * s * s;
    }
};

/// One depthwise-separable convolution: a channelwise K^3 stage that never
/// mixes channels, then a pointwise 1x1x1 stage that never mixes positions.
struct DwSepConv3d {
    std::size_t in_channels;
    std::size_t out_channels;
    std::size_t kernel;
    std::size_t stride;
    std::size_t padding;
};

struct ResidualBlockDesc {
    DwSepConv3d conv1;  // stride 2, does the downsampling
    DwSepConv3d conv2;  // stride 1
    std::size_t shortcut_in;
    std::size_t shortcut_out;
};

struct ModelLayout {
    std::array<ResidualBlockDesc, 3> blocks;
    std::size_t flatten_dim;
    std::size_t classes;
};

inline ModelLayout layout_of(const ModelSpec& spec) {
    spec.validate();
    ModelLayout lay{};
    const std::size_t pad = (spec.kernel - 1) / 2;
    std::size_t cin = spec.in_channels;
    for (std::size_t b = 0; b < 3; ++b) {
        const std::size_t cout = spec.channels[b];
        lay.blocks[b].conv1 = {cin, cout, spec.kernel, 2, pad};
        lay.blocks[b].conv2 = {cout, cout, spec.kernel, 1, pad};
        lay.blocks[b].shortcut_in = cin;
        lay.blocks[b].shortcut_out = cout;
        cin = cout;
    }
    lay.flatten_dim = spec.flatten_dim();
    lay.classes = spec.classes;
    return lay;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

enum class ParamKind { weight, bias, slope };

template <typename T>
struct ParamT {
    std::string name;
    ParamKind kind;
    TensorT<T> value;
};

template <typename T>
struct ModelParamsT {
    std::vector<ParamT<T>> items;

    ParamT<T>& find(const std::string& name) {
        for (auto& p : items)
            if (p.name == name) return p;
        throw invalid_state("unknown parameter: " + name);
    }
    const ParamT<T>& find(const std::string& name) const {
        for (const auto& p : items)
            if (p.name == name) return p;
        throw invalid_state("unknown parameter: " + name);
    }
    const TensorT<T>& tensor(const std::string& name) const {
        return find(name).value;
    }

    template <typename U>
    ModelParamsT<U> cast() const {
        ModelParamsT<U> out;
        out.items.reserve(items.size());
        for (const auto& p : items)
            out.items.push_back({p.name, p.kind, p.value.template cast<U>()});
        return out;
    }
};

using ModelParams = ModelParamsT<float>;

/// Allocate the full parameter set (zero-filled) in checkpoint order.
template <typename T>
ModelParamsT<T> build_params(const ModelSpec& spec) {
    const ModelLayout lay = layout_of(spec);
    ModelParamsT<T> p;
    const std::size_t k = spec.kernel;
    for (std::size_t b = 0; b < 3; ++b) {
        const auto& blk = lay.blocks[b];
        const std::string pre = "block" + std::to_string(b + 1) + ".";
        auto conv = [&](const std::string& tag, const DwSepConv3d& c) {
            p.items.push_back({pre + tag + ".dw_weight", ParamKind::weight,
                               TensorT<T>({c.in_channels, 1, k, k, k})});
            p.items.push_back({pre + tag + ".dw_bias", ParamKind::bias,
                               TensorT<T>({c.in_channels})});
            p.items.push_back({pre + tag + ".pw_weight", ParamKind::weight,
                               TensorT<T>({c.out_channels, c.in_channels, 1, 1, 1})});
            p.items.push_back({pre + tag + ".pw_bias", ParamKind::bias,
                               TensorT<T>({c.out_channels})});
        };
        conv("conv1", blk.conv1);
        p.items.push_back({pre + "act1.slope", ParamKind::slope, TensorT<T>({1})});
        conv("conv2", blk.conv2);
        p.items.push_back({pre + "act2.slope", ParamKind::slope, TensorT<T>({1})});
        p.items.push_back({pre + "shortcut.weight", ParamKind::weight,
                           TensorT<T>({blk.shortcut_out, blk.shortcut_in, 1, 1, 1})});
        p.items.push_back({pre + "shortcut.bias", ParamKind::bias,
                           TensorT<T>({blk.shortcut_out})});
    }
    p.items.push_back({"head.weight", ParamKind::weight,
                       TensorT<T>({spec.classes, spec.flatten_dim()})});
    p.items.push_back({"head.bias", ParamKind::bias, TensorT<T>({spec.classes})});
    return p;
}

namespace detail {

template <typename T>
std::size_t fan_in_of(const ModelSpec& spec, const ParamT<T>& p) {
    const auto& sh = p.value.shape();
    if (p.name == "head.weight") return sh[1];
    if (sh.size() == 5 && sh[1] == 1 && sh[2] == spec.kernel)
        return spec.kernel * spec.kernel * spec.kernel;  // depthwise
    return sh[1];                                        // pointwise / shortcut
}

}  // namespace detail

/// Fresh parameters: weights uniform in +-1/sqrt(fan_in), biases zero,
/// PReLU slopes 0.25. Draws consumed in layout order from a single stream.
template <typename T>
ModelParamsT<T> init_params(const ModelSpec& spec, Rng rng) {
    ModelParamsT<T> p = build_params<T>(spec);
    for (auto& item : p.items) {
        switch (item.kind) {
            case ParamKind::weight: {
                const double bound =
                    1.0 / std::sqrt(static_cast<double>(detail::fan_in_of(spec, item)));
                for (std::size_t i = 0; i < item.value.numel(); ++i)
                    item.value[i] =
                        static_cast<T>(bound * (2.0 * rng.next_uniform() - 1.0));
                break;
            }
            case ParamKind::bias:
                item.value.fill(T(0));
                break;
            case ParamKind::slope:
                item.value.fill(T(0.25));
                break;
        }
    }
    return p;
}

template <typename T>
ModelParamsT<T> grads_like(const ModelParamsT<T>& params) {
    ModelParamsT<T> g;
    g.items.reserve(params.items.size());
    for (const auto& p : params.items)
        g.items.push_back({p.name, p.kind, TensorT<T>(p.value.shape())});
    return g;
}

// ---------------------------------------------------------------------------
// Parameter counting
// ---------------------------------------------------------------------------

/// Weights of one depthwise-separable layer: C*K^3 depthwise + C*O pointwise.
inline std::size_t dwsep_weight_count(std::size_t c, std::size_t k, std::size_t o) {
    return c * k * k * k + c * o;
}

/// Weights of the dense 3-D convolution it replaces: C*O*K^3.
inline std::size_t full_conv_weight_count(std::size_t c, std::size_t k,
                                          std::size_t o) {
    return c * o * k * k * k;
}

/// Closed-form weight count of the whole model (biases and PReLU slopes are
/// trainable but not weights, matching the depthwise-separable accounting).
inline std::size_t param_count(const ModelSpec& spec) {
    const ModelLayout lay = layout_of(spec);
    std::size_t n = 0;
    for (const auto& blk : lay.blocks) {
        n += dwsep_weight_count(blk.conv1.in_channels, spec.kernel,
                                blk.conv1.out_channels);
        n += dwsep_weight_count(blk.conv2.in_channels, spec.kernel,
                                blk.conv2.out_channels);
        n += blk.shortcut_in * blk.shortcut_out;
    }
    n += spec.classes * spec.flatten_dim();
    return n;
}

/// Weight scalars actually allocated, by traversal.
template <typename T>
std::size_t weight_scalar_count(const ModelParamsT<T>& params) {
    std::size_t n = 0;
    for (const auto& p : params.items)
        if (p.kind == ParamKind::weight) n += p.value.numel();
    return n;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k,
                                   std::size_t stride, std::size_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

/// Channelwise K^3 convolution; output channel c reads input channel c only.
template <typename T>
TensorT<T> conv3d_depthwise(const TensorT<T>& x, const TensorT<T>& w,
                            const TensorT<T>& bias, std::size_t stride,
                            std::size_t pad) {
    const auto& xs = x.shape();
    const std::size_t B = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const std::size_t K = w.shape()[2];
    if (w.shape()[0] != C || bias.shape()[0] != C)
        throw invalid_shape("conv3d_depthwise: channel mismatch");
    const std::size_t Do = detail::conv_out_extent(D, K, stride, pad);
    const std::size_t Ho = detail::conv_out_extent(H, K, stride, pad);
    const std::size_t Wo = detail::conv_out_extent(W, K, stride, pad);
    TensorT<T> y({B, C, Do, Ho, Wo});

    const std::ptrdiff_t sp = static_cast<std::ptrdiff_t>(pad);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T* xc = x.data() + (b * C + c) * D * H * W;
            const T* wc = w.data() + c * K * K * K;
            T* yc = y.data() + (b * C + c) * Do * Ho * Wo;
            for (std::size_t od = 0; od < Do; ++od)
                for (std::size_t oh = 0; oh < Ho; ++oh)
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        T acc = T(0);
                        for (std::size_t kd = 0; kd < K; ++kd) {
                            const std::ptrdiff_t id =
                                static_cast<std::ptrdiff_t>(od * stride + kd) - sp;
                            if (id < 0 || id >= static_cast<std::ptrdiff_t>(D)) continue;
                            for (std::size_t kh = 0; kh < K; ++kh) {
                                const std::ptrdiff_t ih =
                                    static_cast<std::ptrdiff_t>(oh * stride + kh) - sp;
                                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t kw = 0; kw < K; ++kw) {
                                    const std::ptrdiff_t iw =
                                        static_cast<std::ptrdiff_t>(ow * stride + kw) - sp;
                                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                                    acc += xc[(id * static_cast<std::ptrdiff_t>(H) + ih) *
                                                  static_cast<std::ptrdiff_t>(W) +
                                              iw] *
                                           wc[(kd * K + kh) * K + kw];
                                }
                            }
                        }
                        yc[(od * Ho + oh) * Wo + ow] = acc + bias[c];
                    }
        }
    return y;
}

template <typename T>
struct ConvGrads {
    TensorT<T> input;
    TensorT<T> weight;
    TensorT<T> bias;
};

template <typename T>
ConvGrads<T> conv3d_depthwise_backward(const TensorT<T>& g, const TensorT<T>& x,
                                       const TensorT<T>& w, std::size_t stride,
                                       std::size_t pad) {
    const auto& xs = x.shape();
    const std::size_t B = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const std::size_t K = w.shape()[2];
    const auto& gs = g.shape();
    const std::size_t Do = gs[2], Ho = gs[3], Wo = gs[4];
    ConvGrads<T> out{TensorT<T>(x.shape()), TensorT<T>(w.shape()), TensorT<T>({C})};

    const std::ptrdiff_t sp = static_cast<std::ptrdiff_t>(pad);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T* xc = x.data() + (b * C + c) * D * H * W;
            const T* wc = w.data() + c * K * K * K;
            const T* gc = g.data() + (b * C + c) * Do * Ho * Wo;
            T* gxc = out.input.data() + (b * C + c) * D * H * W;
            T* gwc = out.weight.data() + c * K * K * K;
            for (std::size_t od = 0; od < Do; ++od)
                for (std::size_t oh = 0; oh < Ho; ++oh)
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        const T gv = gc[(od * Ho + oh) * Wo + ow];
                        out.bias[c] += gv;
                        for (std::size_t kd = 0; kd < K; ++kd) {
                            const std::ptrdiff_t id =
                                static_cast<std::ptrdiff_t>(od * stride + kd) - sp;
                            if (id < 0 || id >= static_cast<std::ptrdiff_t>(D)) continue;
                            for (std::size_t kh = 0; kh < K; ++kh) {
                                const std::ptrdiff_t ih =
                                    static_cast<std::ptrdiff_t>(oh * stride + kh) - sp;
                                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                                for (std::size_t kw = 0; kw < K; ++kw) {
                                    const std::ptrdiff_t iw =
                                        static_cast<std::ptrdiff_t>(ow * stride + kw) - sp;
                                    if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                                    const std::size_t xi =
                                        static_cast<std::size_t>(
                                            (id * static_cast<std::ptrdiff_t>(H) + ih) *
                                                static_cast<std::ptrdiff_t>(W) +
                                            iw);
                                    gwc[(kd * K + kh) * K + kw] += gv * xc[xi];
                                    gxc[xi] += gv * wc[(kd * K + kh) * K + kw];
                                }
                            }
                        }
                    }
        }
    return out;
}

/// 1x1x1 cross-channel convolution with spatial subsampling by `stride`.
template <typename T>
TensorT<T> conv3d_pointwise(const TensorT<T>& x, const TensorT<T>& w,
                            const TensorT<T>& bias, std::size_t stride) {
    const auto& xs = x.shape();
    const std::size_t B = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const std::size_t O = w.shape()[0];
    if (w.shape()[1] != C || bias.shape()[0] != O)
        throw invalid_shape("conv3d_pointwise: channel mismatch");
    const std::size_t Do = (D - 1) / stride + 1;
    const std::size_t Ho = (H - 1) / stride + 1;
    const std::size_t Wo = (W - 1) / stride + 1;
    TensorT<T> y({B, O, Do, Ho, Wo});

    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) {
            const T* wo = w.data() + o * C;
            T* yo = y.data() + (b * O + o) * Do * Ho * Wo;
            for (std::size_t od = 0; od < Do; ++od)
                for (std::size_t oh = 0; oh < Ho; ++oh)
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        const std::size_t off =
                            (od * stride * H + oh * stride) * W + ow * stride;
                        T acc = T(0);
                        for (std::size_t c = 0; c < C; ++c)
                            acc += x.data()[(b * C + c) * D * H * W + off] * wo[c];
                        yo[(od * Ho + oh) * Wo + ow] = acc + bias[o];
                    }
        }
    return y;
}

template <typename T>
ConvGrads<T> conv3d_pointwise_backward(const TensorT<T>& g, const TensorT<T>& x,
                                       const TensorT<T>& w, std::size_t stride) {
    const auto& xs = x.shape();
    const std::size_t B = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const std::size_t O = w.shape()[0];
    const auto& gs = g.shape();
    const std::size_t Do = gs[2], Ho = gs[3], Wo = gs[4];
    ConvGrads<T> out{TensorT<T>(x.shape()), TensorT<T>(w.shape()), TensorT<T>({O})};

    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o) {
            const T* wo = w.data() + o * C;
            const T* go = g.data() + (b * O + o) * Do * Ho * Wo;
            T* gwo = out.weight.data() + o * C;
            for (std::size_t od = 0; od < Do; ++od)
                for (std::size_t oh = 0; oh < Ho; ++oh)
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        const T gv = go[(od * Ho + oh) * Wo + ow];
                        out.bias[o] += gv;
                        const std::size_t off =
                            (od * stride * H + oh * stride) * W + ow * stride;
                        for (std::size_t c = 0; c < C; ++c) {
                            const std::size_t xi = (b * C + c) * D * H * W + off;
                            gwo[c] += gv * x.data()[xi];
                            out.input.data()[xi] += gv * wo[c];
                        }
                    }
        }
    return out;
}

/// PReLU with one learnable slope per layer.
template <typename T>
TensorT<T> prelu(const TensorT<T>& x, T slope) {
    TensorT<T> y(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i)
        y[i] = x[i] >= T(0) ? x[i] : slope * x[i];
    return y;
}

template <typename T>
struct PreluGrads {
    TensorT<T> input;
    T slope;
};

template <typename T>
PreluGrads<T> prelu_backward(const TensorT<T>& g, const TensorT<T>& x_pre,
                             T slope) {
    PreluGrads<T> out{TensorT<T>(x_pre.shape()), T(0)};
    for (std::size_t i = 0; i < x_pre.numel(); ++i) {
        if (x_pre[i] >= T(0)) {
            out.input[i] = g[i];
        } else {
            out.input[i] = slope * g[i];
            out.slope += g[i] * x_pre[i];
        }
    }
    return out;
}

/// logits[b,k] = sum_f W[k,f] x[b,f] + bias[k]
template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& bias) {
    const std::size_t B = x.shape()[0], F = x.shape()[1], K = w.shape()[0];
    if (w.shape()[1] != F || bias.shape()[0] != K)
        throw invalid_shape("linear: dimension mismatch");
    TensorT<T> y({B, K});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k) {
            T acc = T(0);
            for (std::size_t f = 0; f < F; ++f)
                acc += w.data()[k * F + f] * x.data()[b * F + f];
            y[b * K + k] = acc + bias[k];
        }
    return y;
}

template <typename T>
struct LinearGrads {
    TensorT<T> input;
    TensorT<T> weight;
    TensorT<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const TensorT<T>& g, const TensorT<T>& x,
                               const TensorT<T>& w) {
    const std::size_t B = x.shape()[0], F = x.shape()[1], K = w.shape()[0];
    LinearGrads<T> out{TensorT<T>(x.shape()), TensorT<T>(w.shape()), TensorT<T>({K})};
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k) {
            const T gv = g.data()[b * K + k];
            out.bias[k] += gv;
            for (std::size_t f = 0; f < F; ++f) {
                out.weight.data()[k * F + f] += gv * x.data()[b * F + f];
                out.input.data()[b * F + f] += gv * w.data()[k * F + f];
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Whole-model forward / backward
// ---------------------------------------------------------------------------

template <typename T>
struct BlockTrace {
    TensorT<T> x_in;
    TensorT<T> dw1;  // depthwise output of conv1
    TensorT<T> z1;   // pre-activation after pointwise of conv1
    TensorT<T> a1;
    TensorT<T> dw2;
    TensorT<T> z2;
};

/// Cached activations from one forward pass; enough to run backward without
/// recomputation.
template <typename T>
struct TraceT {
    ModelSpec spec;
    std::array<BlockTrace<T>, 3> blocks;
    TensorT<T> features;  // [B, F]
    TensorT<T> logits;    // [B, classes]
};

template <typename T>
struct ForwardResult {
    TensorT<T> logits;
    TraceT<T> trace;
};

/// View a single [C,S,S,S] volume as a batch of one; rank-5 passes through.
template <typename T>
TensorT<T> as_batch1(const TensorT<T>& x) {
    if (x.rank() == 5) return x;
    if (x.rank() == 4) {
        std::vector<std::size_t> shape = x.shape();
        shape.insert(shape.begin(), 1);
        return x.reshaped(shape);
    }
    throw invalid_shape("expected a rank-4 volume or rank-5 batch");
}

template <typename T>
ForwardResult<T> forward(const ModelSpec& spec, const ModelParamsT<T>& params,
                         const TensorT<T>& batch) {
    const ModelLayout lay = layout_of(spec);
    const auto& bs = batch.shape();
    if (bs.size() != 5 || bs[1] != spec.in_channels || bs[2] != spec.side ||
        bs[3] != spec.side || bs[4] != spec.side)
        throw invalid_shape("forward: batch shape does not match spec");

    TraceT<T> trace;
    trace.spec = spec;
    TensorT<T> x = batch;
    for (std::size_t b = 0; b < 3; ++b) {
        const std::string pre = "block" + std::to_string(b + 1) + ".";
        const auto& c1 = lay.blocks[b].conv1;
        const auto& c2 = lay.blocks[b].conv2;
        BlockTrace<T>& bt = trace.blocks[b];
        bt.x_in = x;

        bt.dw1 = conv3d_depthwise(x, params.tensor(pre + "conv1.dw_weight"),
                                  params.tensor(pre + "conv1.dw_bias"), c1.stride,
                                  c1.padding);
        bt.z1 = conv3d_pointwise(bt.dw1, params.tensor(pre + "conv1.pw_weight"),
                                 params.tensor(pre + "conv1.pw_bias"), 1);
        bt.a1 = prelu(bt.z1, params.tensor(pre + "act1.slope")[0]);

        bt.dw2 = conv3d_depthwise(bt.a1, params.tensor(pre + "conv2.dw_weight"),
                                  params.tensor(pre + "conv2.dw_bias"), c2.stride,
                                  c2.padding);
        bt.z2 = conv3d_pointwise(bt.dw2, params.tensor(pre + "conv2.pw_weight"),
                                 params.tensor(pre + "conv2.pw_bias"), 1);
        TensorT<T> branch = prelu(bt.z2, params.tensor(pre + "act2.slope")[0]);

        TensorT<T> shortcut =
            conv3d_pointwise(bt.x_in, params.tensor(pre + "shortcut.weight"),
                             params.tensor(pre + "shortcut.bias"), 2);
        x = add(branch, shortcut);
    }

    const std::size_t B = bs[0];
    trace.features = x.reshaped({B, lay.flatten_dim});
    trace.logits =
        linear(trace.features, params.tensor("head.weight"), params.tensor("head.bias"));
    return {trace.logits, std::move(trace)};
}

template <typename T>
struct BackwardResult {
    ModelParamsT<T> grads;
    TensorT<T> input_grad;
};

/// Exact reverse-mode gradients of sum_{b,k} logits[b,k]*upstream[b,k] with
/// respect to every parameter and the input batch.
template <typename T>
BackwardResult<T> backward(const ModelSpec& spec, const ModelParamsT<T>& params,
                           const TraceT<T>& trace, const TensorT<T>& upstream) {
    const ModelLayout lay = layout_of(spec);
    if (trace.spec.side != spec.side || trace.spec.channels != spec.channels ||
        trace.spec.classes != spec.classes)
        throw invalid_state("backward: trace does not match spec");
    if (!upstream.same_shape(trace.logits))
        throw invalid_state("backward: upstream shape does not match logits");

    ModelParamsT<T> grads = grads_like(params);

    LinearGrads<T> hg =
        linear_backward(upstream, trace.features, params.tensor("head.weight"));
    grads.find("head.weight").value = std::move(hg.weight);
    grads.find("head.bias").value = std::move(hg.bias);

    const std::size_t B = trace.features.shape()[0];
    const std::size_t s3 = spec.final_side();
    TensorT<T> g = hg.input.reshaped({B, spec.channels[2], s3, s3, s3});

    for (std::size_t bi = 3; bi-- > 0;) {
        const std::string pre = "block" + std::to_string(bi + 1) + ".";
        const auto& c1 = lay.blocks[bi].conv1;
        const auto& c2 = lay.blocks[bi].conv2;
        const BlockTrace<T>& bt = trace.blocks[bi];

        PreluGrads<T> p2 =
            prelu_backward(g, bt.z2, params.tensor(pre + "act2.slope")[0]);
        grads.find(pre + "act2.slope").value[0] = p2.slope;

        ConvGrads<T> pw2 = conv3d_pointwise_backward(
            p2.input, bt.dw2, params.tensor(pre + "conv2.pw_weight"), 1);
        grads.find(pre + "conv2.pw_weight").value = std::move(pw2.weight);
        grads.find(pre + "conv2.pw_bias").value = std::move(pw2.bias);

        ConvGrads<T> dw2 = conv3d_depthwise_backward(
            pw2.input, bt.a1, params.tensor(pre + "conv2.dw_weight"), c2.stride,
            c2.padding);
        grads.find(pre + "conv2.dw_weight").value = std::move(dw2.weight);
        grads.find(pre + "conv2.dw_bias").value = std::move(dw2.bias);

        PreluGrads<T> p1 =
            prelu_backward(dw2.input, bt.z1, params.tensor(pre + "act1.slope")[0]);
        grads.find(pre + "act1.slope").value[0] = p1.slope;

        ConvGrads<T> pw1 = conv3d_pointwise_backward(
            p1.input, bt.dw1, params.tensor(pre + "conv1.pw_weight"), 1);
        grads.find(pre + "conv1.pw_weight").value = std::move(pw1.weight);
        grads.find(pre + "conv1.pw_bias").value = std::move(pw1.bias);

        ConvGrads<T> dw1 = conv3d_depthwise_backward(
            pw1.input, bt.x_in, params.tensor(pre + "conv1.dw_weight"), c1.stride,
            c1.padding);
        grads.find(pre + "conv1.dw_weight").value = std::move(dw1.weight);
        grads.find(pre + "conv1.dw_bias").value = std::move(dw1.bias);

        ConvGrads<T> sc = conv3d_pointwise_backward(
            g, bt.x_in, params.tensor(pre + "shortcut.weight"), 2);
        grads.find(pre + "shortcut.weight").value = std::move(sc.weight);
        grads.find(pre + "shortcut.bias").value = std::move(sc.bias);

        g = add(dw1.input, sc.input);
    }
    return {std::move(grads), std::move(g)};
}

}  // namespace bnn
