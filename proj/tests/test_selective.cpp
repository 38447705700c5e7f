#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "bnn/selective.hpp"
#include "reference_ops.hpp"

using namespace bnn;

namespace {

McPrediction make_pred(float p1, float std_val) {
    McPrediction p;
    p.p_mean = Tensor({2}, {1.0f - p1, p1});
    p.p_std = Tensor({2}, {std_val, std_val});
    p.n_samples = 100;
    return p;
}

}  // namespace

TEST_CASE("reject_filter: strict threshold on the argmax-class std") {
    std::vector<McPrediction> preds{make_pred(0.9f, 0.001f),
                                    make_pred(0.2f, 0.05f),
                                    make_pred(0.7f, 0.0015f)};
    const auto [kept, rejected] = reject_filter(preds, 0.002);
    CHECK(kept == std::vector<std::size_t>{0, 2});
    CHECK(rejected == std::vector<std::size_t>{1});

    const auto all = reject_filter(preds, std::numeric_limits<double>::infinity());
    CHECK(all.first.size() == 3);
    CHECK(all.second.empty());

    const auto none = reject_filter(preds, 0.0);
    CHECK(none.first.empty());
    CHECK(none.second.size() == 3);

    // ties at the threshold are rejected (0.25 is exact in both precisions)
    std::vector<McPrediction> tied{make_pred(0.9f, 0.25f), make_pred(0.9f, 0.125f)};
    const auto tie = reject_filter(tied, 0.25);
    CHECK(tie.first == std::vector<std::size_t>{1});
    CHECK(tie.second == std::vector<std::size_t>{0});

    CHECK_THROWS_AS(reject_filter(preds, -0.1), invalid_parameter);
}

TEST_CASE("rank_auc: pinned small cases") {
    CHECK(*rank_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(*rank_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == 0.5);
    CHECK(*rank_auc({0.9, 0.8, 0.3}, {1, 0, 0}) == 1.0);
    CHECK(*rank_auc({0.9, 0.8, 0.3}, {0, 1, 1}) == 0.0);
    CHECK(*rank_auc({0.9, 0.8, 0.3}, {1, 0, 1}) == 0.5);
    CHECK(!rank_auc({0.9, 0.8}, {1, 1}).has_value());  // single class
}

TEST_CASE("rank_auc equals brute-force pair counting on sets up to 50") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.next_below(49);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            // quantized scores so ties actually occur
            scores[i] = static_cast<double>(rng.next_below(8)) / 8.0;
            labels[i] = static_cast<int>(rng.next_below(2));
        }
        const auto fast = rank_auc(scores, labels);
        const auto slow = refops::auc_pair_counting(scores, labels);
        REQUIRE(fast.has_value() == slow.has_value());
        if (fast)
            CHECK(*fast == doctest::Approx(*slow).epsilon(1e-12));
    }
}

TEST_CASE("compute_metrics: confusion counts and undefined markers") {
    // preds: argmax class; labels chosen to pin precision/recall
    std::vector<McPrediction> preds{make_pred(0.9f, 0.0f), make_pred(0.8f, 0.0f),
                                    make_pred(0.2f, 0.0f), make_pred(0.3f, 0.0f)};
    const std::vector<int> labels{1, 0, 0, 1};
    std::vector<std::size_t> all{0, 1, 2, 3};
    const Metrics m = compute_metrics(preds, labels, all);
    CHECK(*m.accuracy == 0.5);        // tp=1 (idx0), fp=1 (idx1), tn=1, fn=1
    CHECK(*m.precision == 0.5);
    CHECK(*m.recall == 0.5);
    CHECK(*m.f1 == doctest::Approx(0.5));
    const double hm = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    CHECK(*m.f1 == doctest::Approx(hm).epsilon(1e-12));

    const Metrics empty = compute_metrics(preds, labels, {});
    CHECK(!empty.accuracy);
    CHECK(!empty.precision);
    CHECK(!empty.auc);

    const Metrics one_class = compute_metrics(preds, labels, {1, 2});  // labels 0,0
    CHECK(one_class.accuracy.has_value());
    CHECK(!one_class.auc.has_value());
}

TEST_CASE("compute_metrics is permutation invariant") {
    Rng rng(13);
    std::vector<McPrediction> preds;
    std::vector<int> labels;
    for (int i = 0; i < 24; ++i) {
        preds.push_back(make_pred(static_cast<float>(rng.next_uniform()),
                                  static_cast<float>(0.01 * rng.next_uniform())));
        labels.push_back(static_cast<int>(rng.next_below(2)));
    }
    std::vector<std::size_t> kept{0, 3, 5, 7, 11, 13, 17, 19, 22};
    const Metrics a = compute_metrics(preds, labels, kept);

    // reverse the sample order, remap kept indices
    std::vector<McPrediction> rpreds(preds.rbegin(), preds.rend());
    std::vector<int> rlabels(labels.rbegin(), labels.rend());
    std::vector<std::size_t> rkept;
    for (std::size_t k : kept) rkept.push_back(preds.size() - 1 - k);
    const Metrics b = compute_metrics(rpreds, rlabels, rkept);
    CHECK(*a.accuracy == *b.accuracy);
    CHECK(*a.auc == *b.auc);
    CHECK(*a.f1 == *b.f1);
}

TEST_CASE("sweep: zero-uncertainty ensembles keep everything at any t > 0") {
    std::vector<McPrediction> preds{make_pred(0.9f, 0.0f), make_pred(0.1f, 0.0f),
                                    make_pred(0.6f, 0.0f)};
    const std::vector<int> labels{1, 0, 1};
    const auto rows = sweep(preds, labels, default_threshold_grid());
    REQUIRE(rows.size() == 8);
    for (const auto& r : rows) {
        CHECK(r.coverage == 1.0);
        CHECK(*r.accuracy == *rows[0].accuracy);
    }
}

TEST_CASE("sweep: coverage is non-decreasing in t") {
    Rng rng(55);
    std::vector<McPrediction> preds;
    std::vector<int> labels;
    for (int i = 0; i < 60; ++i) {
        preds.push_back(make_pred(static_cast<float>(rng.next_uniform()),
                                  static_cast<float>(0.2 * rng.next_uniform())));
        labels.push_back(static_cast<int>(rng.next_below(2)));
    }
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(0.012 * i);
    const auto rows = sweep(preds, labels, grid);
    for (std::size_t i = 1; i < rows.size(); ++i)
        CHECK(rows[i].coverage >= rows[i - 1].coverage);
    CHECK(rows.back().coverage == 1.0);

    // kept(t1) is a subset of kept(t2) for t1 <= t2
    const auto k1 = reject_filter(preds, 0.05).first;
    const auto k2 = reject_filter(preds, 0.11).first;
    CHECK(std::includes(k2.begin(), k2.end(), k1.begin(), k1.end()));
}

TEST_CASE("sweep: rejecting planted-noisy samples beats the unfiltered accuracy") {
    // high-p_std samples are mislabeled by construction
    Rng rng(66);
    std::vector<McPrediction> preds;
    std::vector<int> labels;
    for (int i = 0; i < 50; ++i) {
        const int truth = static_cast<int>(rng.next_below(2));
        preds.push_back(make_pred(truth ? 0.9f : 0.1f, 0.001f));
        labels.push_back(truth);
    }
    for (int i = 0; i < 10; ++i) {
        const int pred_class = static_cast<int>(rng.next_below(2));
        preds.push_back(make_pred(pred_class ? 0.55f : 0.45f, 0.08f));
        labels.push_back(1 - pred_class);  // wrong by construction
    }
    const auto rows = sweep(preds, labels, {0.01, 1.0});
    CHECK(*rows[0].accuracy > *rows[1].accuracy);
    CHECK(*rows[0].accuracy == 1.0);
    CHECK(rows[1].coverage == 1.0);
}

TEST_CASE("sweep: thresholds beyond max p_std reproduce unfiltered metrics exactly") {
    Rng rng(67);
    std::vector<McPrediction> preds;
    std::vector<int> labels;
    for (int i = 0; i < 30; ++i) {
        preds.push_back(make_pred(static_cast<float>(rng.next_uniform()),
                                  static_cast<float>(0.02 * rng.next_uniform())));
        labels.push_back(static_cast<int>(rng.next_below(2)));
    }
    std::vector<std::size_t> all(preds.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const Metrics unfiltered = compute_metrics(preds, labels, all);

    const auto rows = sweep(preds, labels, {0.05, 0.1, 0.5});
    for (const auto& r : rows) {
        CHECK(r.coverage == 1.0);
        CHECK(r.kept_count == preds.size());
        CHECK(*r.accuracy == *unfiltered.accuracy);
        CHECK(*r.auc == *unfiltered.auc);
    }
}

TEST_CASE("sweep: unsorted thresholds are rejected") {
    std::vector<McPrediction> preds{make_pred(0.5f, 0.0f)};
    CHECK_THROWS_AS(sweep(preds, {0}, {0.2, 0.1}), config_error);
}

TEST_CASE("sweep CSV: NA cells for undefined metrics") {
    std::vector<McPrediction> preds{make_pred(0.9f, 0.05f)};
    const std::vector<int> labels{1};
    const auto rows = sweep(preds, labels, {0.01, 1.0});
    // row 0 keeps nothing -> NA accuracy; row 1 keeps one sample of one class
    const auto dir = std::filesystem::temp_directory_path() / "bnn_sweep_test";
    std::filesystem::create_directories(dir);
    write_sweep_csv((dir / "sweep.csv").string(), rows);
    write_curve_files(dir.string(), rows);

    std::ifstream is(dir / "sweep.csv");
    std::string header, r0, r1;
    std::getline(is, header);
    std::getline(is, r0);
    std::getline(is, r1);
    CHECK(header == "threshold,accuracy,auc,coverage,kept,rejected");
    CHECK(r0.find("NA") != std::string::npos);
    CHECK(r1.find("NA") != std::string::npos);  // single-class AUC
    CHECK(std::filesystem::exists(dir / "coverage_vs_threshold.dat"));
    std::filesystem::remove_all(dir);
}
