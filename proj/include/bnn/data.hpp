#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bnn/binio.hpp"
#include "bnn/errors.hpp"
#include "bnn/parallel.hpp"
#include "bnn/rng.hpp"
#include "bnn/smoothing.hpp"
#include "bnn/tensor.hpp"

namespace bnn {

/// One labeled volume: [1,S,S,S] tensor, class id, stable string id.
/// Label 0 is healthy-like, 1 is atrophy-like.
struct Volume {
    Tensor data;
    int label = 0;
    std::string id;
};

/// Synthetic dataset generator configuration. Volumes fluctuate around unity
/// volume change like Jacobian-determinant maps; class 1 carries a localized
/// central dilation blob on top of the smoothed noise field.
struct GenConfig {
    std::size_t n_samples = 376;
    std::size_t side = 32;
    double balance = 0.5;  // fraction of class 1
    std::uint64_t seed = 1;
    double noise_amplitude = 0.05;
    double smoothness = 2.0;  // sigma of the random-field smoothing, voxels
    double blob_amplitude_healthy = 0.0;
    double blob_amplitude_atrophy = 0.4;
    double blob_radius_frac = 0.15;  // blob sigma as a fraction of the side
    double label_noise = 0.0;  // fraction of hard samples with coin-flip labels

    void validate() const {
        if (n_samples < 2) throw config_error("gen: n_samples must be >= 2");
        if (!(balance > 0.0 && balance < 1.0))
            throw config_error("gen: balance must be in (0, 1)");
        if (side == 0 || side % 8 != 0)
            throw config_error("gen: side must be a positive multiple of 8");
        if (label_noise < 0.0 || label_noise > 1.0)
            throw config_error("gen: label_noise must be in [0, 1]");
    }
};

namespace detail {

inline std::string volume_id(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "vol_%04zu", i);
    return buf;
}

}  // namespace detail

/// Deterministic per seed; sample i draws only from its own stream, so
/// generation order (and thread count) cannot change the dataset.
inline std::vector<Volume> generate(const GenConfig& cfg, int threads = 1) {
    cfg.validate();
    const std::size_t n = cfg.n_samples;
    const std::size_t s = cfg.side;
    const std::size_t n_pos = static_cast<std::size_t>(
        std::floor(cfg.balance * static_cast<double>(n) + 0.5));

    // Hard samples (ambiguous signal, coin-flip label) are chosen up front by
    // a seeded shuffle so the set is independent of generation order.
    const std::size_t n_hard = static_cast<std::size_t>(
        std::floor(cfg.label_noise * static_cast<double>(n)));
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng pick(cfg.seed, streams::data);
    for (std::size_t i = n - 1; i > 0; --i)
        std::swap(perm[i], perm[pick.next_below(i + 1)]);
    std::vector<char> hard(n, 0);
    for (std::size_t i = 0; i < n_hard; ++i) hard[perm[i]] = 1;

    const double center = (static_cast<double>(s) - 1.0) / 2.0;
    const double blob_sigma = cfg.blob_radius_frac * static_cast<double>(s);
    const double amp_mid =
        0.5 * (cfg.blob_amplitude_healthy + cfg.blob_amplitude_atrophy);

    std::vector<Volume> out(n);
    parallel_for(n, threads, [&](std::size_t i) {
        const Rng rng(cfg.seed, streams::member(streams::data, i));
        const Rng meta(cfg.seed, streams::member(streams::data_meta, i));

        int label = i < n_pos ? 1 : 0;
        double amp = label == 1 ? cfg.blob_amplitude_atrophy
                                : cfg.blob_amplitude_healthy;
        if (hard[i]) {
            amp = amp_mid;
            label = meta.word_at(0) & 1 ? 1 : 0;
        }

        Tensor field({s, s, s});
        for (std::size_t j = 0; j < field.numel(); ++j)
            field[j] = static_cast<float>(cfg.noise_amplitude * rng.normal_at(j));
        field = smooth_gaussian_3d(field, cfg.smoothness);

        Volume v;
        v.id = detail::volume_id(i);
        v.label = label;
        v.data = Tensor({1, s, s, s});
        std::size_t j = 0;
        for (std::size_t d = 0; d < s; ++d)
            for (std::size_t h = 0; h < s; ++h)
                for (std::size_t w = 0; w < s; ++w, ++j) {
                    const double dd = static_cast<double>(d) - center;
                    const double dh = static_cast<double>(h) - center;
                    const double dw = static_cast<double>(w) - center;
                    const double r2 = dd * dd + dh * dh + dw * dw;
                    const double blob =
                        amp * std::exp(-r2 / (2.0 * blob_sigma * blob_sigma));
                    v.data[j] = static_cast<float>(1.0 + field[j] + blob);
                }
        out[i] = std::move(v);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Normalization, split, crop
// ---------------------------------------------------------------------------

struct NormConstants {
    double min = 0.0;
    double max = 1.0;
};

/// Joint min/max over ALL volumes, then affine map to [0,1] in place.
/// Applying twice equals applying once.
inline NormConstants normalize_global(std::vector<Volume>& volumes) {
    if (volumes.empty()) throw invalid_shape("normalize: no volumes");
    double lo = volumes[0].data[0], hi = volumes[0].data[0];
    for (const auto& v : volumes)
        for (std::size_t i = 0; i < v.data.numel(); ++i) {
            lo = std::min(lo, static_cast<double>(v.data[i]));
            hi = std::max(hi, static_cast<double>(v.data[i]));
        }
    if (hi == lo)
        throw degenerate_data("normalize: all voxel values identical");
    const double range = hi - lo;
    for (auto& v : volumes)
        for (std::size_t i = 0; i < v.data.numel(); ++i)
            v.data[i] = static_cast<float>((static_cast<double>(v.data[i]) - lo) / range);
    return {lo, hi};
}

struct SplitResult {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded stratified split: per class, shuffle then take round(fraction * n_c)
/// for training. Index lists come back sorted ascending.
inline SplitResult split(const std::vector<Volume>& volumes, double fraction,
                         std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw config_error("split: fraction must be in (0, 1)");
    std::vector<std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        const int y = volumes[i].label;
        if (y < 0) throw invalid_label("split: negative label");
        if (static_cast<std::size_t>(y) >= by_class.size())
            by_class.resize(static_cast<std::size_t>(y) + 1);
        by_class[static_cast<std::size_t>(y)].push_back(i);
    }

    SplitResult out;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) continue;
        Rng rng(seed, streams::member(streams::shuffle, c));
        for (std::size_t i = idx.size() - 1; i > 0; --i)
            std::swap(idx[i], idx[rng.next_below(i + 1)]);
        const std::size_t n_train = static_cast<std::size_t>(
            std::floor(fraction * static_cast<double>(idx.size()) + 0.5));
        if (n_train == 0 || n_train == idx.size())
            throw config_error("split: class " + std::to_string(c) +
                               " absent from one split; need more samples");
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + n_train);
        out.test.insert(out.test.end(), idx.begin() + n_train, idx.end());
    }
    if (out.train.empty() || out.test.empty())
        throw config_error("split: empty split");
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

/// Symmetric center crop of the trailing three axes; odd remainders drop the
/// extra voxel from the high side.
template <typename T>
TensorT<T> center_crop(const TensorT<T>& vol, std::size_t target) {
    if (vol.rank() < 3) throw invalid_shape("center_crop: need rank >= 3");
    const auto& sh = vol.shape();
    const std::size_t nd = sh[sh.size() - 3];
    const std::size_t nh = sh[sh.size() - 2];
    const std::size_t nw = sh[sh.size() - 1];
    if (target > nd || target > nh || target > nw)
        throw invalid_shape("center_crop: target exceeds source extent");
    std::size_t outer = 1;
    for (std::size_t a = 0; a + 3 < sh.size(); ++a) outer *= sh[a];

    std::vector<std::size_t> out_shape(sh.begin(), sh.end() - 3);
    out_shape.insert(out_shape.end(), {target, target, target});
    TensorT<T> out(out_shape);
    const std::size_t od = (nd - target) / 2;
    const std::size_t oh = (nh - target) / 2;
    const std::size_t ow = (nw - target) / 2;
    for (std::size_t o = 0; o < outer; ++o) {
        const T* src = vol.data() + o * nd * nh * nw;
        T* dst = out.data() + o * target * target * target;
        for (std::size_t d = 0; d < target; ++d)
            for (std::size_t h = 0; h < target; ++h)
                for (std::size_t w = 0; w < target; ++w)
                    dst[(d * target + h) * target + w] =
                        src[((d + od) * nh + (h + oh)) * nw + (w + ow)];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Volume files and dataset manifest
// ---------------------------------------------------------------------------

/// A volume on disk is a JSON sidecar "<id>.json" plus the raw little-endian
/// f32 payload "<id>.raw"; round trips are bit-exact.
inline void write_volume(const std::filesystem::path& dir, const Volume& v,
                         const NormConstants& norm) {
    nlohmann::json sidecar;
    sidecar["id"] = v.id;
    sidecar["label"] = v.label;
    sidecar["shape"] = v.data.shape();
    sidecar["dtype"] = "f32le";
    sidecar["norm_min"] = norm.min;
    sidecar["norm_max"] = norm.max;
    {
        std::ofstream os(dir / (v.id + ".json"));
        if (!os) throw io_error("volume: cannot write sidecar for " + v.id);
        os << sidecar.dump(2) << "\n";
    }
    std::ofstream os(dir / (v.id + ".raw"), std::ios::binary);
    if (!os) throw io_error("volume: cannot write payload for " + v.id);
    for (std::size_t i = 0; i < v.data.numel(); ++i) binio::put_f32(os, v.data[i]);
    if (!os) throw io_error("volume: payload write failed for " + v.id);
}

inline Volume read_volume(const std::filesystem::path& dir, const std::string& id,
                          NormConstants* norm_out = nullptr) {
    std::ifstream hs(dir / (id + ".json"));
    if (!hs) throw io_error("volume: missing sidecar: " + (dir / (id + ".json")).string());
    nlohmann::json sidecar = nlohmann::json::parse(hs);
    if (sidecar.at("dtype").get<std::string>() != "f32le")
        throw io_error("volume: unsupported dtype in " + id);
    Volume v;
    v.id = sidecar.at("id").get<std::string>();
    v.label = sidecar.at("label").get<int>();
    const std::vector<std::size_t> shape =
        sidecar.at("shape").get<std::vector<std::size_t>>();
    if (norm_out) {
        norm_out->min = sidecar.at("norm_min").get<double>();
        norm_out->max = sidecar.at("norm_max").get<double>();
    }
    v.data = Tensor(shape);
    std::ifstream os(dir / (id + ".raw"), std::ios::binary);
    if (!os) throw io_error("volume: missing payload: " + id);
    for (std::size_t i = 0; i < v.data.numel(); ++i) v.data[i] = binio::get_f32(os);
    return v;
}

struct ManifestEntry {
    std::string id;
    std::string file;
    int label;
    std::string split;  // "train" or "test"
};

struct Manifest {
    NormConstants norm;
    std::vector<ManifestEntry> entries;
};

inline void write_manifest(const std::filesystem::path& dir, const Manifest& m) {
    nlohmann::json j;
    j["norm_min"] = m.norm.min;
    j["norm_max"] = m.norm.max;
    j["volumes"] = nlohmann::json::array();
    for (const auto& e : m.entries)
        j["volumes"].push_back({{"id", e.id},
                                {"file", e.file},
                                {"label", e.label},
                                {"split", e.split}});
    std::ofstream os(dir / "manifest.json");
    if (!os) throw io_error("manifest: cannot write " + (dir / "manifest.json").string());
    os << j.dump(2) << "\n";
}

inline Manifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw io_error("manifest: missing " + (dir / "manifest.json").string());
    nlohmann::json j = nlohmann::json::parse(is);
    Manifest m;
    m.norm.min = j.at("norm_min").get<double>();
    m.norm.max = j.at("norm_max").get<double>();
    for (const auto& e : j.at("volumes"))
        m.entries.push_back({e.at("id").get<std::string>(),
                             e.at("file").get<std::string>(),
                             e.at("label").get<int>(),
                             e.at("split").get<std::string>()});
    return m;
}

}  // namespace bnn
