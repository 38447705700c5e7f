#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bnn/bayes.hpp"
#include "bnn/errors.hpp"

namespace bnn {

// ---------------------------------------------------------------------------
// Rejection
// ---------------------------------------------------------------------------

/// Uncertainty score of a prediction: p_std of the argmax-probability class.
inline double uncertainty_score(const McPrediction& pred) {
    return static_cast<double>(pred.p_std[argmax(pred.p_mean)]);
}

/// Keep a sample iff its uncertainty score is strictly below t; ties at the
/// threshold are rejected.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
reject_filter(const std::vector<McPrediction>& preds, double t) {
    if (t < 0.0) throw invalid_parameter("reject_filter: threshold must be >= 0");
    std::vector<std::size_t> kept, rejected;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (uncertainty_score(preds[i]) < t)
            kept.push_back(i);
        else
            rejected.push_back(i);
    }
    return {std::move(kept), std::move(rejected)};
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Classification metrics over a kept subset. Fields are empty when the
/// metric is undefined (empty kept set, zero denominator, or single-class
/// kept set for AUC) rather than NaN.
struct Metrics {
    std::optional<double> accuracy;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    std::optional<double> auc;
};

/// Mann-Whitney AUC of scores for class 1, ties contributing 1/2 via
/// average ranks.
inline std::optional<double> rank_auc(const std::vector<double>& scores,
                                      const std::vector<int>& labels) {
    std::size_t n_pos = 0, n_neg = 0;
    for (int y : labels) (y == 1 ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] < scores[b];
    });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double u = rank_sum_pos -
                     static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Metrics on the kept subset; decision rule is argmax p_mean, positive
/// class is 1, AUC score is p_mean of class 1.
inline Metrics compute_metrics(const std::vector<McPrediction>& preds,
                               const std::vector<int>& labels,
                               const std::vector<std::size_t>& kept) {
    if (preds.size() != labels.size())
        throw invalid_shape("compute_metrics: preds/labels size mismatch");
    Metrics m;
    if (kept.empty()) return m;

    std::size_t correct = 0, tp = 0, fp = 0, fn = 0;
    std::vector<double> scores;
    std::vector<int> kept_labels;
    scores.reserve(kept.size());
    kept_labels.reserve(kept.size());
    for (std::size_t i : kept) {
        const int pred = static_cast<int>(argmax(preds[i].p_mean));
        const int truth = labels[i];
        if (pred == truth) ++correct;
        if (pred == 1 && truth == 1) ++tp;
        if (pred == 1 && truth == 0) ++fp;
        if (pred == 0 && truth == 1) ++fn;
        scores.push_back(static_cast<double>(preds[i].p_mean[1]));
        kept_labels.push_back(truth);
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(kept.size());
    if (tp + fp > 0)
        m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0)
        m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (m.precision && m.recall && (*m.precision + *m.recall) > 0.0)
        m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    m.auc = rank_auc(scores, kept_labels);
    return m;
}

// ---------------------------------------------------------------------------
// Threshold sweep
// ---------------------------------------------------------------------------

/// One operating point of the coverage/accuracy trade-off.
struct SweepRow {
    double threshold;
    std::optional<double> accuracy;
    std::optional<double> auc;
    double coverage;
    std::size_t kept_count;
    std::size_t rejected_count;
};

inline std::vector<double> default_threshold_grid() {
    return {0.002, 0.005, 0.01, 0.02, 0.05, 0.10, 0.15, 0.2};
}

inline std::vector<SweepRow> sweep(const std::vector<McPrediction>& preds,
                                   const std::vector<int>& labels,
                                   const std::vector<double>& thresholds) {
    if (!std::is_sorted(thresholds.begin(), thresholds.end()))
        throw config_error("sweep: thresholds must be sorted ascending");
    std::vector<SweepRow> rows;
    rows.reserve(thresholds.size());
    for (double t : thresholds) {
        const auto [kept, rejected] = reject_filter(preds, t);
        const Metrics m = compute_metrics(preds, labels, kept);
        rows.push_back({t, m.accuracy, m.auc,
                        preds.empty() ? 0.0
                                      : static_cast<double>(kept.size()) /
                                            static_cast<double>(preds.size()),
                        kept.size(), rejected.size()});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// CSV / curve output
// ---------------------------------------------------------------------------

namespace detail {

inline std::string opt_cell(const std::optional<double>& v) {
    if (!v) return "NA";
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", *v);
    return buf;
}

}  // namespace detail

inline void write_sweep_csv(const std::string& path,
                            const std::vector<SweepRow>& rows) {
    std::ofstream os(path);
    if (!os) throw io_error("sweep: cannot open for write: " + path);
    os << "threshold,accuracy,auc,coverage,kept,rejected\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.9g,%s,%s,%.9g,%zu,%zu\n", r.threshold,
                      detail::opt_cell(r.accuracy).c_str(),
                      detail::opt_cell(r.auc).c_str(), r.coverage, r.kept_count,
                      r.rejected_count);
        os << buf;
    }
    if (!os) throw io_error("sweep: write failed: " + path);
}

/// Two-column gnuplot-style curves: <threshold> <value>, one file per metric.
/// Undefined values are skipped.
inline void write_curve_files(const std::string& dir,
                              const std::vector<SweepRow>& rows) {
    struct Curve {
        const char* file;
        std::optional<double> SweepRow::*field;
    };
    const Curve curves[2] = {{"accuracy_vs_threshold.dat", &SweepRow::accuracy},
                             {"auc_vs_threshold.dat", &SweepRow::auc}};
    char buf[96];
    for (const auto& c : curves) {
        std::ofstream os(dir + "/" + c.file);
        if (!os) throw io_error(std::string("sweep: cannot write curve ") + c.file);
        for (const auto& r : rows) {
            if (!(r.*(c.field))) continue;
            std::snprintf(buf, sizeof(buf), "%.9g %.9g\n", r.threshold, *(r.*(c.field)));
            os << buf;
        }
    }
    std::ofstream os(dir + "/coverage_vs_threshold.dat");
    if (!os) throw io_error("sweep: cannot write coverage curve");
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.9g %.9g\n", r.threshold, r.coverage);
        os << buf;
    }
}

}  // namespace bnn
