#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bnn/data.hpp"
#include "bnn/errors.hpp"
#include "bnn/nn.hpp"
#include "bnn/selective.hpp"
#include "bnn/train.hpp"

namespace bnn {

/// Fully-resolved run configuration: one key = value file with [data],
/// [model], [train], [bayes], [sweep] and [attribution] sections plus the
/// global seed/threads keys. Unknown keys are hard errors; every command
/// writes the resolved config next to its outputs.
struct RunConfig {
    std::uint64_t seed = 1;
    int threads = 1;

    struct Data {
        std::size_t n = 376;
        std::size_t side = 32;
        double balance = 0.5;
        double noise_amplitude = 0.05;
        double smoothness = 2.0;
        double blob_amplitude_healthy = 0.0;
        double blob_amplitude_atrophy = 0.4;
        double blob_radius_frac = 0.15;
        double label_noise = 0.0;
        double train_fraction = 0.8;
    } data;

    struct Model {
        std::array<std::size_t, 3> channels{8, 16, 32};
        std::size_t kernel = 3;
        std::size_t classes = 2;
    } model;

    struct Train {
        std::size_t epochs = 5;
        std::size_t batch_size = 8;
        double lr = 3e-4;
    } train;

    struct Bayes {
        double s = 0.01;
        std::size_t n = 100;
    } bayes;

    struct Sweep {
        std::vector<double> thresholds = default_threshold_grid();
    } sweep;

    struct Attribution {
        std::size_t steps = 64;
        double sigma = 4.0;
        double percentile = 95.0;
        std::size_t repeats = 10;
    } attribution;

    GenConfig gen_config() const {
        GenConfig g;
        g.n_samples = data.n;
        g.side = data.side;
        g.balance = data.balance;
        g.seed = seed;
        g.noise_amplitude = data.noise_amplitude;
        g.smoothness = data.smoothness;
        g.blob_amplitude_healthy = data.blob_amplitude_healthy;
        g.blob_amplitude_atrophy = data.blob_amplitude_atrophy;
        g.blob_radius_frac = data.blob_radius_frac;
        g.label_noise = data.label_noise;
        return g;
    }

    ModelSpec model_spec() const {
        ModelSpec spec;
        spec.side = data.side;
        spec.in_channels = 1;
        spec.channels = model.channels;
        spec.kernel = model.kernel;
        spec.classes = model.classes;
        return spec;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.spec = model_spec();
        t.epochs = train.epochs;
        t.batch_size = train.batch_size;
        t.seed = seed;
        t.adam.lr = train.lr;
        return t;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw config_error("config: bad numeric value for " + key + ": " + v);
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
        std::size_t used = 0;
        const unsigned long long u = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw config_error("config: bad integer value for " + key + ": " + v);
    }
}

inline std::vector<double> parse_double_list(const std::string& key,
                                             const std::string& v) {
    std::vector<double> out;
    std::istringstream is(v);
    std::string tok;
    while (std::getline(is, tok, ','))
        out.push_back(parse_double(key, trim(tok)));
    if (out.empty()) throw config_error("config: empty list for " + key);
    return out;
}

}  // namespace detail

/// Comma-separated ascending threshold list, e.g. from a --thresholds flag.
inline std::vector<double> parse_threshold_list(const std::string& text) {
    return detail::parse_double_list("thresholds", text);
}

/// Apply one key = value assignment; `section` is "" for global keys.
inline void apply_config_key(RunConfig& cfg, const std::string& section,
                             const std::string& key, const std::string& value) {
    const std::string full = section.empty() ? key : section + "." + key;
    using detail::parse_double;
    using detail::parse_double_list;
    using detail::parse_u64;

    if (section.empty()) {
        if (key == "seed") { cfg.seed = parse_u64(full, value); return; }
        if (key == "threads") {
            cfg.threads = static_cast<int>(parse_u64(full, value));
            return;
        }
    } else if (section == "data") {
        auto& d = cfg.data;
        if (key == "n") { d.n = parse_u64(full, value); return; }
        if (key == "side") { d.side = parse_u64(full, value); return; }
        if (key == "balance") { d.balance = parse_double(full, value); return; }
        if (key == "noise_amplitude") { d.noise_amplitude = parse_double(full, value); return; }
        if (key == "smoothness") { d.smoothness = parse_double(full, value); return; }
        if (key == "blob_amplitude_healthy") { d.blob_amplitude_healthy = parse_double(full, value); return; }
        if (key == "blob_amplitude_atrophy") { d.blob_amplitude_atrophy = parse_double(full, value); return; }
        if (key == "blob_radius_frac") { d.blob_radius_frac = parse_double(full, value); return; }
        if (key == "label_noise") { d.label_noise = parse_double(full, value); return; }
        if (key == "train_fraction") { d.train_fraction = parse_double(full, value); return; }
    } else if (section == "model") {
        auto& m = cfg.model;
        if (key == "channels") {
            const auto list = parse_double_list(full, value);
            if (list.size() != 3)
                throw config_error("config: model.channels needs 3 entries");
            for (std::size_t i = 0; i < 3; ++i)
                m.channels[i] = static_cast<std::size_t>(list[i]);
            return;
        }
        if (key == "kernel") { m.kernel = parse_u64(full, value); return; }
        if (key == "classes") { m.classes = parse_u64(full, value); return; }
    } else if (section == "train") {
        auto& t = cfg.train;
        if (key == "epochs") { t.epochs = parse_u64(full, value); return; }
        if (key == "batch_size") { t.batch_size = parse_u64(full, value); return; }
        if (key == "lr") { t.lr = parse_double(full, value); return; }
    } else if (section == "bayes") {
        auto& b = cfg.bayes;
        if (key == "s") { b.s = parse_double(full, value); return; }
        if (key == "n") { b.n = parse_u64(full, value); return; }
    } else if (section == "sweep") {
        if (key == "thresholds") {
            cfg.sweep.thresholds = parse_double_list(full, value);
            return;
        }
    } else if (section == "attribution") {
        auto& a = cfg.attribution;
        if (key == "steps") { a.steps = parse_u64(full, value); return; }
        if (key == "sigma") { a.sigma = parse_double(full, value); return; }
        if (key == "percentile") { a.percentile = parse_double(full, value); return; }
        if (key == "repeats") { a.repeats = parse_u64(full, value); return; }
    } else {
        throw config_error("config: unknown section [" + section + "]");
    }
    throw config_error("config: unknown key " + full);
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("config: cannot open " + path);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw config_error("config: malformed section at line " +
                                   std::to_string(lineno));
            section = detail::trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw config_error("config: expected key = value at line " +
                               std::to_string(lineno));
        apply_config_key(cfg, section, detail::trim(t.substr(0, eq)),
                         detail::trim(t.substr(eq + 1)));
    }
}

/// Render the fully-resolved configuration in canonical section order.
inline std::string render_config(const RunConfig& cfg) {
    std::ostringstream os;
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    os << "seed = " << cfg.seed << "\n";
    os << "threads = " << cfg.threads << "\n";
    os << "\n[data]\n";
    os << "n = " << cfg.data.n << "\n";
    os << "side = " << cfg.data.side << "\n";
    os << "balance = " << num(cfg.data.balance) << "\n";
    os << "noise_amplitude = " << num(cfg.data.noise_amplitude) << "\n";
    os << "smoothness = " << num(cfg.data.smoothness) << "\n";
    os << "blob_amplitude_healthy = " << num(cfg.data.blob_amplitude_healthy) << "\n";
    os << "blob_amplitude_atrophy = " << num(cfg.data.blob_amplitude_atrophy) << "\n";
    os << "blob_radius_frac = " << num(cfg.data.blob_radius_frac) << "\n";
    os << "label_noise = " << num(cfg.data.label_noise) << "\n";
    os << "train_fraction = " << num(cfg.data.train_fraction) << "\n";
    os << "\n[model]\n";
    os << "channels = " << cfg.model.channels[0] << "," << cfg.model.channels[1]
       << "," << cfg.model.channels[2] << "\n";
    os << "kernel = " << cfg.model.kernel << "\n";
    os << "classes = " << cfg.model.classes << "\n";
    os << "\n[train]\n";
    os << "epochs = " << cfg.train.epochs << "\n";
    os << "batch_size = " << cfg.train.batch_size << "\n";
    os << "lr = " << num(cfg.train.lr) << "\n";
    os << "\n[bayes]\n";
    os << "s = " << num(cfg.bayes.s) << "\n";
    os << "n = " << cfg.bayes.n << "\n";
    os << "\n[sweep]\n";
    os << "thresholds = ";
    for (std::size_t i = 0; i < cfg.sweep.thresholds.size(); ++i)
        os << (i ? "," : "") << num(cfg.sweep.thresholds[i]);
    os << "\n";
    os << "\n[attribution]\n";
    os << "steps = " << cfg.attribution.steps << "\n";
    os << "sigma = " << num(cfg.attribution.sigma) << "\n";
    os << "percentile = " << num(cfg.attribution.percentile) << "\n";
    os << "repeats = " << cfg.attribution.repeats << "\n";
    return os.str();
}

inline void write_resolved_config(const RunConfig& cfg, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw io_error("config: cannot write " + path);
    os << render_config(cfg);
}

}  // namespace bnn
