// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include <gtest/gtest.h>

#include <json.hpp>

#include "oracles.hpp"
#include "ssasc/metrics.hpp"

namespace {

using namespace ssasc;
using ssasc::testing::brute_metrics;

constexpr std::int32_t kClasses = 4;

SceneLabelGrid random_grid(Rng& rng, bool with_invalid) {
    SceneLabelGrid g({6, 6, 2}, kClasses);
    std::uniform_int_distribution<int> d(0, kClasses);
    for (auto& l : g.labels) {
        l = uniform(rng, 0, 1) < 0.5 ? 0 : static_cast<std::uint8_t>(d(rng));
        if (with_invalid && uniform(rng, 0, 1) < 0.05) l = kInvalidLabel;
    }
    return g;
}

VoxelMask random_mask(Rng& rng) {
    VoxelMask m({6, 6, 2});
    for (auto& b : m.bits) b = uniform(rng, 0, 1) < 0.2;
    return m;
}

void expect_same(const Metrics& a, const Metrics& b) {
    EXPECT_EQ(a.iou, b.iou);
    EXPECT_EQ(a.precision, b.precision);
    EXPECT_EQ(a.recall, b.recall);
    EXPECT_EQ(a.miou, b.miou);
    EXPECT_EQ(a.class_iou, b.class_iou);
}

TEST(Metrics, MatchesBruteForceOnRandomGrids) {
    Rng rng(61);
    for (int trial = 0; trial < 100; ++trial) {
        const auto pred = random_grid(rng, false);
        const auto truth = random_grid(rng, true);
        const auto mask = random_mask(rng);
        const auto m = evaluate(pred, truth, &mask);
        const auto b = brute_metrics({&pred}, {&truth}, {&mask}, kClasses);
        EXPECT_DOUBLE_EQ(m.iou, b.iou);
        EXPECT_DOUBLE_EQ(m.precision, b.precision);
        EXPECT_DOUBLE_EQ(m.recall, b.recall);
        EXPECT_DOUBLE_EQ(m.miou, b.miou);
        ASSERT_EQ(m.class_iou.size(), b.class_iou.size());
        for (std::size_t c = 0; c < b.class_iou.size(); ++c) EXPECT_DOUBLE_EQ(m.class_iou[c], b.class_iou[c]);
    }
}

TEST(Metrics, SummedConfusionMatchesPooledBruteForce) {
    Rng rng(62);
    std::vector<SceneLabelGrid> preds, truths;
    std::vector<VoxelMask> masks;
    ConfusionMatrix cm(kClasses);
    for (int i = 0; i < 5; ++i) {
        preds.push_back(random_grid(rng, false));
        truths.push_back(random_grid(rng, true));
        masks.push_back(random_mask(rng));
    }
    std::vector<const SceneLabelGrid*> pp, tp;
    std::vector<const VoxelMask*> mp;
    for (int i = 0; i < 5; ++i) {
        ConfusionMatrix one(kClasses);
        one.add(preds[static_cast<std::size_t>(i)], truths[static_cast<std::size_t>(i)], &masks[static_cast<std::size_t>(i)]);
        cm += one;
        pp.push_back(&preds[static_cast<std::size_t>(i)]);
        tp.push_back(&truths[static_cast<std::size_t>(i)]);
        mp.push_back(&masks[static_cast<std::size_t>(i)]);
    }
    const auto m = compute_metrics(cm);
    const auto b = brute_metrics(pp, tp, mp, kClasses);
    EXPECT_DOUBLE_EQ(m.iou, b.iou);
    EXPECT_DOUBLE_EQ(m.miou, b.miou);
    EXPECT_EQ(cm.occupied_tp() + cm.occupied_fp() + cm.occupied_fn() + cm.occupied_tn(), cm.total());
}

TEST(Metrics, InvalidFlipsNeverChangeMetrics) {
    Rng rng(63);
    for (int trial = 0; trial < 100; ++trial) {
        auto pred = random_grid(rng, false);
        const auto truth = random_grid(rng, true);
        const auto mask = random_mask(rng);
        const auto before = evaluate(pred, truth, &mask);
        std::uniform_int_distribution<int> d(0, kClasses);
        for (std::size_t i = 0; i < pred.labels.size(); ++i) {
            if (mask.bits[i] || truth.labels[i] == kInvalidLabel) pred.labels[i] = static_cast<std::uint8_t>(d(rng));
        }
        expect_same(evaluate(pred, truth, &mask), before);
    }
}

TEST(Metrics, PerfectAndEmptyPredictions) {
    Rng rng(64);
    const auto truth = random_grid(rng, false);
    const auto perfect = evaluate(truth, truth);
    EXPECT_EQ(perfect.iou, 1.0);
    EXPECT_EQ(perfect.precision, 1.0);
    EXPECT_EQ(perfect.recall, 1.0);
    for (std::size_t c = 0; c < perfect.class_iou.size(); ++c) {
        EXPECT_EQ(perfect.class_iou[c], perfect.class_present[c] ? 1.0 : 0.0);
    }
    const SceneLabelGrid empty(truth.extents, kClasses);
    const auto none = evaluate(empty, truth);
    EXPECT_EQ(none.recall, 0.0);
    EXPECT_EQ(none.iou, 0.0);
    EXPECT_EQ(none.miou, 0.0);
}

TEST(Metrics, AbsentClassesCountAsZeroUnlessSkipped) {
    SceneLabelGrid g({2, 2, 1}, kClasses);
    g.labels = {1, 1, 0, 2};
    const auto m = evaluate(g, g);
    EXPECT_DOUBLE_EQ(m.miou, 0.5);
    EXPECT_DOUBLE_EQ(evaluate(g, g, nullptr, true).miou, 1.0);
}

TEST(Metrics, CompletionIsSymmetricUnderSwap) {
    Rng rng(65);
    for (int trial = 0; trial < 50; ++trial) {
        const auto a = random_grid(rng, false);
        const auto b = random_grid(rng, false);
        const auto ab = evaluate(a, b);
        const auto ba = evaluate(b, a);
        EXPECT_DOUBLE_EQ(ab.iou, ba.iou);
        EXPECT_DOUBLE_EQ(ab.precision, ba.recall);
        EXPECT_DOUBLE_EQ(ab.miou, ba.miou);
    }
}

TEST(Metrics, ExtentMismatchThrows) {
    const SceneLabelGrid a({2, 2, 2}, kClasses);
    const SceneLabelGrid b({2, 2, 1}, kClasses);
    EXPECT_THROW(evaluate(a, b), std::invalid_argument);
    EXPECT_THROW(ConfusionMatrix(2) += ConfusionMatrix(3), std::invalid_argument);
}

TEST(Metrics, RecordCarriesTableColumns) {
    SceneLabelGrid g({2, 2, 1}, kClasses);
    g.labels = {1, 3, 0, 2};
    const auto j = nlohmann::json::parse(metrics_record(evaluate(g, g), "s0"));
    for (const char* key : {"iou", "precision", "recall", "miou", "class_iou"}) EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_EQ(j["class_iou"].size(), static_cast<std::size_t>(kClasses));
    const auto table = metrics_table(evaluate(g, g));
    for (const char* col : {"iou 1.0", "precision 1.0", "recall 1.0", "miou 0.75", "iou_3 1.0", "iou_4 0.0"})
        EXPECT_NE(table.find(col), std::string::npos) << col;
}

}  // namespace
