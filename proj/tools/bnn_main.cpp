// Command-line front end: gen-data, train, eval, sweep, attribute.
//
// Every command is a pure function of (config, inputs, seed): reruns produce
// bitwise-identical artifacts, and --threads N matches --threads 1.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bnn/bnn.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "run configuration file");
    cmd->add_option("--seed", flags.seed, "root seed (overrides config)");
    cmd->add_option("--threads", flags.threads, "worker thread cap (overrides config)");
}

bnn::RunConfig resolve_config(const CommonFlags& flags) {
    bnn::RunConfig cfg;
    if (!flags.config_path.empty()) bnn::load_config_file(cfg, flags.config_path);
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.threads) cfg.threads = *flags.threads;
    return cfg;
}

/// Relative output paths may be rooted by the optional BNN_OUTPUT_ROOT
/// environment variable; the only environment configuration the tool reads.
std::string resolve_out(const std::string& out) {
    const char* root = std::getenv("BNN_OUTPUT_ROOT");
    if (root && *root && fs::path(out).is_relative())
        return (fs::path(root) / out).string();
    return out;
}

void prepare_out_dir(const std::string& out, bool force, bool refuse_nonempty) {
    const fs::path p(out);
    if (refuse_nonempty && fs::exists(p) && fs::is_directory(p) &&
        !fs::is_empty(p) && !force)
        throw bnn::config_error("output directory not empty: " + out +
                                " (pass --force to overwrite)");
    fs::create_directories(p);
}

std::string metric_str(const std::optional<double>& v) {
    if (!v) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return buf;
}

/// Volumes of one split, in manifest order, with their manifest indices.
struct LoadedSplit {
    std::vector<bnn::Volume> volumes;
    std::vector<std::size_t> manifest_index;
};

LoadedSplit load_split(const fs::path& dir, const bnn::Manifest& manifest,
                       const std::string& split) {
    LoadedSplit out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
        if (manifest.entries[i].split != split) continue;
        out.volumes.push_back(bnn::read_volume(dir, manifest.entries[i].id));
        out.manifest_index.push_back(i);
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonFlags& flags, const std::string& out, bool force,
                 std::optional<std::size_t> n_override) {
    bnn::RunConfig cfg = resolve_config(flags);
    if (n_override) cfg.data.n = *n_override;
    prepare_out_dir(out, force, /*refuse_nonempty=*/true);

    std::vector<bnn::Volume> volumes = bnn::generate(cfg.gen_config(), cfg.threads);
    const bnn::NormConstants norm = bnn::normalize_global(volumes);
    const bnn::SplitResult sp =
        bnn::split(volumes, cfg.data.train_fraction, cfg.seed);

    std::vector<char> in_train(volumes.size(), 0);
    for (std::size_t i : sp.train) in_train[i] = 1;

    bnn::Manifest manifest;
    manifest.norm = norm;
    for (std::size_t i = 0; i < volumes.size(); ++i) {
        bnn::write_volume(out, volumes[i], norm);
        manifest.entries.push_back({volumes[i].id, volumes[i].id + ".raw",
                                    volumes[i].label,
                                    in_train[i] ? "train" : "test"});
    }
    bnn::write_manifest(out, manifest);
    bnn::write_resolved_config(cfg, out + "/config.resolved.ini");

    std::size_t per_class[2] = {0, 0};
    for (const auto& v : volumes) per_class[v.label == 1 ? 1 : 0] += 1;
    std::printf("generated %zu volumes (class 0: %zu, class 1: %zu); train %zu / test %zu\n",
                volumes.size(), per_class[0], per_class[1], sp.train.size(),
                sp.test.size());
    return 0;
}

int cmd_train(const CommonFlags& flags, const std::string& data_dir,
              const std::string& out, std::optional<std::size_t> epochs,
              std::optional<std::size_t> batch_size) {
    bnn::RunConfig cfg = resolve_config(flags);
    if (epochs) cfg.train.epochs = *epochs;
    if (batch_size) cfg.train.batch_size = *batch_size;

    const bnn::Manifest manifest = bnn::read_manifest(data_dir);
    LoadedSplit train = load_split(data_dir, manifest, "train");
    if (train.volumes.empty())
        throw bnn::config_error("train: no training samples in manifest");

    cfg.data.side = train.volumes[0].data.shape()[1];
    const bnn::TrainConfig tc = cfg.train_config();
    tc.validate();

    std::vector<bnn::Tensor> xs;
    std::vector<int> ys;
    for (auto& v : train.volumes) {
        xs.push_back(std::move(v.data));
        ys.push_back(v.label);
    }

    prepare_out_dir(out, /*force=*/true, /*refuse_nonempty=*/false);
    const bnn::FitResult fit = bnn::fit(tc, xs, ys, cfg.threads);

    bnn::save_checkpoint(out + "/model.bnck", tc.spec, fit.params);
    {
        std::ofstream os(out + "/train_log.csv");
        if (!os) throw bnn::io_error("train: cannot write log CSV");
        os << "epoch,loss,accuracy\n";
        char buf[96];
        for (const auto& e : fit.log) {
            std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", e.epoch, e.loss,
                          e.accuracy);
            os << buf;
        }
    }
    bnn::write_resolved_config(cfg, out + "/config.resolved.ini");

    const auto& last = fit.log.back();
    std::printf("trained %zu epochs on %zu samples: loss %.4f, accuracy %.4f\n",
                tc.epochs, xs.size(), last.loss, last.accuracy);
    return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint,
             const std::string& data_dir, const std::string& out,
             std::optional<double> s_override, std::optional<std::size_t> n_override) {
    bnn::RunConfig cfg = resolve_config(flags);
    if (s_override) cfg.bayes.s = *s_override;
    if (n_override) cfg.bayes.n = *n_override;
    if (cfg.bayes.s < 0.0) throw bnn::config_error("eval: s must be >= 0");
    if (cfg.bayes.n < 1) throw bnn::config_error("eval: n must be >= 1");

    const bnn::Checkpoint ck = bnn::load_checkpoint(checkpoint);
    const bnn::Manifest manifest = bnn::read_manifest(data_dir);
    LoadedSplit test = load_split(data_dir, manifest, "test");
    if (test.volumes.empty())
        throw bnn::config_error("eval: no test samples in manifest");

    const bnn::BayesianHead bh = bnn::to_bayesian(ck.params, cfg.bayes.s);
    std::vector<bnn::McPrediction> preds(test.volumes.size());
    bnn::parallel_for(test.volumes.size(), cfg.threads, [&](std::size_t j) {
        const std::uint64_t sample_seed = bnn::derive_seed(
            cfg.seed, bnn::streams::member(bnn::streams::bayes,
                                           test.manifest_index[j]));
        preds[j] = bnn::mc_infer(ck.spec, ck.params, bh, test.volumes[j].data,
                                 cfg.bayes.n, sample_seed);
    });

    prepare_out_dir(out, /*force=*/true, /*refuse_nonempty=*/false);
    std::vector<bnn::PredictionRow> rows;
    std::vector<int> labels;
    for (std::size_t j = 0; j < test.volumes.size(); ++j) {
        rows.push_back({test.volumes[j].id, preds[j], test.volumes[j].label});
        labels.push_back(test.volumes[j].label);
    }
    bnn::write_predictions_csv(out + "/predictions.csv", rows);
    bnn::write_resolved_config(cfg, out + "/config.resolved.ini");

    std::vector<std::size_t> all(preds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const bnn::Metrics m = bnn::compute_metrics(preds, labels, all);
    std::printf("evaluated %zu test samples (N=%zu, s=%g)\n", preds.size(),
                cfg.bayes.n, cfg.bayes.s);
    std::printf("accuracy %s  precision %s  recall %s  f1 %s  auc %s\n",
                metric_str(m.accuracy).c_str(), metric_str(m.precision).c_str(),
                metric_str(m.recall).c_str(), metric_str(m.f1).c_str(),
                metric_str(m.auc).c_str());
    return 0;
}

int cmd_sweep(const CommonFlags& flags, const std::string& predictions,
              const std::string& out, const std::string& thresholds_arg) {
    bnn::RunConfig cfg = resolve_config(flags);
    if (!thresholds_arg.empty())
        cfg.sweep.thresholds = bnn::parse_threshold_list(thresholds_arg);

    const std::vector<bnn::PredictionRow> rows = bnn::read_predictions_csv(predictions);
    if (rows.empty()) throw bnn::config_error("sweep: predictions file is empty");
    std::vector<bnn::McPrediction> preds;
    std::vector<int> labels;
    for (const auto& r : rows) {
        preds.push_back(r.pred);
        labels.push_back(r.label);
    }

    const std::vector<bnn::SweepRow> table =
        bnn::sweep(preds, labels, cfg.sweep.thresholds);
    for (std::size_t i = 1; i < table.size(); ++i)
        if (table[i].coverage < table[i - 1].coverage)
            throw bnn::invalid_state("sweep: coverage decreased with threshold");

    prepare_out_dir(out, /*force=*/true, /*refuse_nonempty=*/false);
    bnn::write_sweep_csv(out + "/sweep.csv", table);
    bnn::write_curve_files(out, table);
    bnn::write_resolved_config(cfg, out + "/config.resolved.ini");

    std::printf("threshold  accuracy  auc     coverage  kept  rejected\n");
    for (const auto& r : table)
        std::printf("%-9g  %-8s  %-6s  %-8.3f  %-4zu  %zu\n", r.threshold,
                    metric_str(r.accuracy).c_str(), metric_str(r.auc).c_str(),
                    r.coverage, r.kept_count, r.rejected_count);
    return 0;
}

int cmd_attribute(const CommonFlags& flags, const std::string& checkpoint,
                  const std::string& data_dir, const std::string& input_id,
                  const std::string& out, std::optional<std::size_t> repeats,
                  std::optional<double> sigma, std::optional<double> percentile,
                  std::optional<std::size_t> steps, std::optional<double> s_override,
                  int target_flag) {
    bnn::RunConfig cfg = resolve_config(flags);
    if (repeats) cfg.attribution.repeats = *repeats;
    if (sigma) cfg.attribution.sigma = *sigma;
    if (percentile) cfg.attribution.percentile = *percentile;
    if (steps) cfg.attribution.steps = *steps;
    if (s_override) cfg.bayes.s = *s_override;

    const bnn::Checkpoint ck = bnn::load_checkpoint(checkpoint);
    const bnn::Manifest manifest = bnn::read_manifest(data_dir);
    std::size_t mindex = manifest.entries.size();
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        if (manifest.entries[i].id == input_id) mindex = i;
    if (mindex == manifest.entries.size())
        throw bnn::io_error("attribute: unknown input id: " + input_id);
    const bnn::Volume vol = bnn::read_volume(data_dir, input_id);

    const bnn::BayesianHead bh = bnn::to_bayesian(ck.params, cfg.bayes.s);

    std::size_t target;
    if (target_flag >= 0) {
        target = static_cast<std::size_t>(target_flag);
    } else {
        const std::uint64_t sample_seed = bnn::derive_seed(
            cfg.seed, bnn::streams::member(bnn::streams::bayes, mindex));
        const bnn::McPrediction pred = bnn::mc_infer(
            ck.spec, ck.params, bh, vol.data, cfg.bayes.n, sample_seed);
        target = bnn::argmax(pred.p_mean);
    }

    bnn::AttributionConfig acfg;
    acfg.steps = cfg.attribution.steps;
    acfg.target = target;
    acfg.sigma = cfg.attribution.sigma;
    acfg.mask_percentile = cfg.attribution.percentile;
    acfg.repeats = cfg.attribution.repeats;
    acfg.seed = bnn::derive_seed(
        cfg.seed, bnn::streams::member(bnn::streams::attribution, mindex));

    const bnn::AttributionResult res =
        bnn::bayes_attribution(ck.spec, ck.params, bh, vol.data, acfg, cfg.threads);

    prepare_out_dir(out, /*force=*/true, /*refuse_nonempty=*/false);
    auto write_map = [&](const bnn::Tensor& t, const std::string& suffix) {
        bnn::Volume v{t, vol.label, input_id + suffix};
        double lo = t[0], hi = t[0];
        for (std::size_t i = 0; i < t.numel(); ++i) {
            lo = std::min(lo, static_cast<double>(t[i]));
            hi = std::max(hi, static_cast<double>(t[i]));
        }
        bnn::write_volume(out, v, {lo, hi});
    };
    write_map(res.raw, "_attr_raw");
    write_map(res.smoothed, "_attr_smoothed");
    write_map(res.fractional_mask, "_attr_mask_frac");
    write_map(res.binary_mask, "_attr_mask");

    std::size_t mask_voxels = 0;
    for (std::size_t i = 0; i < res.binary_mask.numel(); ++i)
        if (res.binary_mask[i] > 0.5f) ++mask_voxels;
    {
        std::ofstream os(out + "/" + input_id + "_attr_summary.txt");
        if (!os) throw bnn::io_error("attribute: cannot write summary");
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "input %s\ntarget_class %zu\nrepeats %zu\nsteps %zu\n"
                      "completeness_gap %.9g\nmask_voxels %zu\n",
                      input_id.c_str(), target, acfg.repeats, acfg.steps,
                      res.completeness_gap, mask_voxels);
        os << buf;
    }
    bnn::write_resolved_config(cfg, out + "/config.resolved.ini");

    std::printf("attributed %s: target class %zu, completeness gap %.3g, mask voxels %zu\n",
                input_id.c_str(), target, res.completeness_gap, mask_voxels);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"3-D depthwise-separable CNN with a Bayesian classifier head: "
                 "selective prediction under uncertainty and integrated-gradients "
                 "attribution"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, eval_flags, sweep_flags, attr_flags;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
    std::string gen_out;
    bool gen_force = false;
    std::optional<std::size_t> gen_n;
    add_common(gen, gen_flags);
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--n", gen_n, "number of volumes (overrides config)");
    gen->add_flag("--force", gen_force, "overwrite a non-empty output directory");

    auto* train = app.add_subcommand("train", "train the classifier");
    std::string train_data, train_out;
    std::optional<std::size_t> train_epochs, train_batch;
    add_common(train, train_flags);
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--epochs", train_epochs, "epochs (overrides config)");
    train->add_option("--batch-size", train_batch, "batch size (overrides config)");

    auto* eval = app.add_subcommand(
        "eval", "Monte-Carlo evaluation of the test split with a Bayesian head");
    std::string eval_ck, eval_data, eval_out;
    std::optional<double> eval_s;
    std::optional<std::size_t> eval_n;
    add_common(eval, eval_flags);
    eval->add_option("--checkpoint", eval_ck, "trained checkpoint")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--out", eval_out, "output directory")->required();
    eval->add_option("--s", eval_s, "Gaussian head scale (overrides config)");
    eval->add_option("--n", eval_n, "Monte-Carlo samples (overrides config)");

    auto* sweep = app.add_subcommand("sweep", "uncertainty-threshold sweep");
    std::string sweep_preds, sweep_out, sweep_thresholds;
    add_common(sweep, sweep_flags);
    sweep->add_option("--predictions", sweep_preds, "predictions CSV from eval")
        ->required();
    sweep->add_option("--out", sweep_out, "output directory")->required();
    sweep->add_option("--thresholds", sweep_thresholds,
                      "comma-separated ascending thresholds (overrides config)");

    auto* attr = app.add_subcommand("attribute",
                                    "integrated-gradients explanation maps");
    std::string attr_ck, attr_data, attr_id, attr_out;
    std::optional<std::size_t> attr_repeats, attr_steps;
    std::optional<double> attr_sigma, attr_percentile, attr_s;
    int attr_target = -1;
    add_common(attr, attr_flags);
    attr->add_option("--checkpoint", attr_ck, "trained checkpoint")->required();
    attr->add_option("--data", attr_data, "dataset directory")->required();
    attr->add_option("--input-id", attr_id, "volume id to explain")->required();
    attr->add_option("--out", attr_out, "output directory")->required();
    attr->add_option("--repeats", attr_repeats, "sampled networks (overrides config)");
    attr->add_option("--sigma", attr_sigma, "smoothing sigma (overrides config)");
    attr->add_option("--percentile", attr_percentile, "mask percentile (overrides config)");
    attr->add_option("--steps", attr_steps, "interpolation steps (overrides config)");
    attr->add_option("--s", attr_s, "Gaussian head scale (overrides config)");
    attr->add_option("--target", attr_target,
                     "target class (default: argmax of the MC prediction)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_data(gen_flags, resolve_out(gen_out), gen_force, gen_n);
        if (train->parsed())
            return cmd_train(train_flags, train_data, resolve_out(train_out),
                             train_epochs, train_batch);
        if (eval->parsed())
            return cmd_eval(eval_flags, eval_ck, eval_data, resolve_out(eval_out),
                            eval_s, eval_n);
        if (sweep->parsed())
            return cmd_sweep(sweep_flags, sweep_preds, resolve_out(sweep_out),
                             sweep_thresholds);
        if (attr->parsed())
            return cmd_attribute(attr_flags, attr_ck, attr_data, attr_id,
                                 resolve_out(attr_out), attr_repeats, attr_sigma,
                                 attr_percentile, attr_steps, attr_s, attr_target);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
