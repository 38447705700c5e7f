#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "bnn/checkpoint.hpp"
#include "bnn/nn.hpp"
#include "reference_ops.hpp"

using namespace bnn;

namespace {

TensorD random_tensor(const std::vector<std::size_t>& shape, Rng& rng,
                      double scale = 1.0) {
    TensorD t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i)
        t[i] = scale * rng.next_normal();
    return t;
}

ModelSpec small_spec(std::size_t side, std::array<std::size_t, 3> ch) {
    ModelSpec s;
    s.side = side;
    s.channels = ch;
    return s;
}

}  // namespace

TEST_CASE("parameter layout: shapes, names, kinds") {
    const ModelSpec spec = small_spec(16, {4, 8, 16});
    const ModelParams p = build_params<float>(spec);

    std::set<std::string> names;
    for (const auto& item : p.items) names.insert(item.name);
    CHECK(names.size() == p.items.size());  // unique, stable names

    const auto& dw = p.tensor("block1.conv1.dw_weight");
    CHECK(dw.shape() == std::vector<std::size_t>{1, 1, 3, 3, 3});
    const auto& pw = p.tensor("block2.conv1.pw_weight");
    CHECK(pw.shape() == std::vector<std::size_t>{8, 4, 1, 1, 1});
    const auto& head = p.tensor("head.weight");
    CHECK(head.shape() == std::vector<std::size_t>{2, 128});
    CHECK(p.find("block3.act2.slope").kind == ParamKind::slope);
    CHECK(p.find("block1.shortcut.bias").kind == ParamKind::bias);
}

TEST_CASE("param_count: closed forms and traversal agreement") {
    CHECK(dwsep_weight_count(4, 3, 8) == 140);
    CHECK(full_conv_weight_count(4, 3, 8) == 864);  // 140/864 parameter ratio
    CHECK(dwsep_weight_count(1, 1, 1) == 2);

    for (const auto ch : {std::array<std::size_t, 3>{2, 2, 2},
                          std::array<std::size_t, 3>{4, 8, 16},
                          std::array<std::size_t, 3>{8, 16, 32}}) {
        const ModelSpec spec = small_spec(16, ch);
        CHECK(param_count(spec) == weight_scalar_count(build_params<float>(spec)));
    }
}

TEST_CASE("forward: zero everything gives zero logits") {
    const ModelSpec spec = small_spec(8, {2, 2, 2});
    const ModelParams p = build_params<float>(spec);  // all zero
    const Tensor x({1, 1, 8, 8, 8});
    const auto fr = forward(spec, p, x);
    CHECK(fr.logits.shape() == std::vector<std::size_t>{1, 2});
    CHECK(fr.logits[0] == 0.0f);
    CHECK(fr.logits[1] == 0.0f);
}

TEST_CASE("forward: flatten dimension and per-block halving") {
    const ModelSpec spec = small_spec(16, {4, 8, 16});
    CHECK(spec.flatten_dim() == 128);  // 16 * (16/8)^3

    const ModelParams p = init_params<float>(spec, Rng(5, streams::init));
    Rng rng(6);
    Tensor x({2, 1, 16, 16, 16});
    for (std::size_t i = 0; i < x.numel(); ++i)
        x[i] = static_cast<float>(rng.next_uniform());
    const auto fr = forward(spec, p, x);
    CHECK(fr.trace.features.shape() == std::vector<std::size_t>{2, 128});
    CHECK(fr.trace.blocks[0].z1.shape() ==
          std::vector<std::size_t>{2, 4, 8, 8, 8});
    CHECK(fr.trace.blocks[1].z1.shape() ==
          std::vector<std::size_t>{2, 8, 4, 4, 4});
    CHECK(fr.trace.blocks[2].z1.shape() ==
          std::vector<std::size_t>{2, 16, 2, 2, 2});

    // determinism: bitwise-identical logits on a re-run
    const auto fr2 = forward(spec, p, x);
    for (std::size_t i = 0; i < fr.logits.numel(); ++i)
        CHECK(fr.logits[i] == fr2.logits[i]);

    Tensor bad({2, 1, 8, 8, 8});
    CHECK_THROWS_AS(forward(spec, p, bad), invalid_shape);
}

TEST_CASE("depthwise never mixes channels") {
    Rng rng(21);
    const TensorD x = random_tensor({1, 3, 6, 6, 6}, rng);
    const TensorD w = random_tensor({3, 1, 3, 3, 3}, rng);
    const TensorD b = random_tensor({3}, rng);
    const TensorD y = conv3d_depthwise(x, w, b, 1, 1);

    TensorD x2 = x;
    for (std::size_t d = 0; d < 6; ++d)
        for (std::size_t h = 0; h < 6; ++h)
            for (std::size_t v = 0; v < 6; ++v)
                x2.at({0, 2, d, h, v}) += 5.0;  // perturb channel 2 only
    const TensorD y2 = conv3d_depthwise(x2, w, b, 1, 1);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < 6 * 6 * 6; ++i)
            CHECK(y.data()[c * 216 + i] == y2.data()[c * 216 + i]);
}

TEST_CASE("conv reference: identity and constant-interior fixtures") {
    Rng rng(31);
    // 1x1x1 kernel of value 1, stride 1 -> identity
    TensorD x = random_tensor({1, 2, 4, 4, 4}, rng);
    TensorD w1({2, 1, 1, 1, 1}, {1.0, 1.0});
    const TensorD ident = refops::conv3d_depthwise_reference(x, w1, 1, 0);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(ident[i] == x[i]);

    // constant input, sum-normalized kernel, zero padding -> constant interior
    TensorD xc({1, 1, 5, 5, 5}, 3.0);
    TensorD wk({1, 1, 3, 3, 3}, 1.0 / 27.0);
    const TensorD yc = refops::conv3d_depthwise_reference(xc, wk, 1, 1);
    CHECK(yc.at({0, 0, 2, 2, 2}) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(yc.at({0, 0, 1, 3, 2}) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("production conv kernels match the naive reference bitwise at 64-bit") {
    Rng rng(77);
    for (int trial = 0; trial < 8; ++trial) {
        const std::size_t stride = trial % 2 ? 2 : 1;
        const std::size_t pad = trial % 3 == 0 ? 0 : 1;
        const TensorD x = random_tensor({2, 2, 5, 5, 5}, rng);
        const TensorD w = random_tensor({2, 1, 3, 3, 3}, rng);
        const TensorD b = random_tensor({2}, rng);

        const TensorD prod = conv3d_depthwise(x, w, b, stride, pad);
        const TensorD ref = refops::add_channel_bias(
            refops::conv3d_depthwise_reference(x, w, stride, pad), b);
        REQUIRE(prod.shape() == ref.shape());
        for (std::size_t i = 0; i < prod.numel(); ++i) CHECK(prod[i] == ref[i]);

        const TensorD pw = random_tensor({3, 2, 1, 1, 1}, rng);
        const TensorD pb = random_tensor({3}, rng);
        const TensorD prod_pw = conv3d_pointwise(x, pw, pb, stride);
        const TensorD ref_pw = refops::add_channel_bias(
            refops::conv3d_pointwise_reference(x, pw, stride), pb);
        REQUIRE(prod_pw.shape() == ref_pw.shape());
        for (std::size_t i = 0; i < prod_pw.numel(); ++i)
            CHECK(prod_pw[i] == ref_pw[i]);
    }
}

TEST_CASE("linear layer: identity passes values and gradients through") {
    const std::size_t n = 4;
    TensorD eye({n, n});
    for (std::size_t i = 0; i < n; ++i) eye.at({i, i}) = 1.0;
    const TensorD b({n});
    Rng rng(9);
    const TensorD x = random_tensor({2, n}, rng);
    const TensorD y = linear(x, eye, b);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

    const TensorD up = random_tensor({2, n}, rng);
    const auto g = linear_backward(up, x, eye);
    for (std::size_t i = 0; i < up.numel(); ++i) CHECK(g.input[i] == up[i]);
}

TEST_CASE("prelu: piecewise definition") {
    const TensorD x({4}, {-2.0, -0.5, 0.0, 3.0});
    const TensorD y = prelu(x, 0.25);
    CHECK(y[0] == -0.5);
    CHECK(y[1] == -0.125);
    CHECK(y[2] == 0.0);
    CHECK(y[3] == 3.0);
}

TEST_CASE("as_batch1 adds the batch axis for rank-4 volumes") {
    const Tensor v({1, 8, 8, 8}, 1.0f);
    CHECK(as_batch1(v).shape() == std::vector<std::size_t>{1, 1, 8, 8, 8});
    const Tensor b({2, 1, 8, 8, 8});
    CHECK(as_batch1(b).shape() == b.shape());
    CHECK_THROWS_AS(as_batch1(Tensor({4, 4})), invalid_shape);
}

TEST_CASE("checkpoint round trip is bitwise") {
    const ModelSpec spec = small_spec(8, {2, 3, 4});
    const ModelParams p = init_params<float>(spec, Rng(123, streams::init));
    const auto tmp = std::filesystem::temp_directory_path() / "bnn_ck_test.bnck";
    save_checkpoint(tmp.string(), spec, p);

    const Checkpoint ck = load_checkpoint(tmp.string());
    CHECK(ck.spec.side == spec.side);
    CHECK(ck.spec.channels == spec.channels);
    REQUIRE(ck.params.items.size() == p.items.size());
    for (std::size_t i = 0; i < p.items.size(); ++i) {
        CHECK(ck.params.items[i].name == p.items[i].name);
        for (std::size_t j = 0; j < p.items[i].value.numel(); ++j)
            CHECK(ck.params.items[i].value[j] == p.items[i].value[j]);
    }
    std::filesystem::remove(tmp);
}

TEST_CASE("checkpoint rejects foreign files") {
    const auto tmp = std::filesystem::temp_directory_path() / "bnn_bad.bnck";
    {
        std::ofstream os(tmp, std::ios::binary);
        os << "NOTACHECKPOINT";
    }
    CHECK_THROWS_AS(load_checkpoint(tmp.string()), io_error);
    std::filesystem::remove(tmp);
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/path.bnck"), io_error);
}

TEST_CASE("backward validates trace consistency") {
    const ModelSpec spec = small_spec(8, {2, 2, 2});
    const ModelParams p = init_params<float>(spec, Rng(3, streams::init));
    Tensor x({1, 1, 8, 8, 8}, 0.5f);
    auto fr = forward(spec, p, x);

    Tensor bad_up({2, 2});
    CHECK_THROWS_AS(backward(spec, p, fr.trace, bad_up), invalid_state);

    ModelSpec other = small_spec(16, {2, 2, 2});
    const ModelParams p2 = init_params<float>(other, Rng(3, streams::init));
    Tensor up({1, 2}, 1.0f);
    CHECK_THROWS_AS(backward(other, p2, fr.trace, up), invalid_state);
}
