// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ssasc/ops.hpp"

namespace {

using namespace ssasc;
using ssasc::testing::random_tensor;

TEST(Tensor, FromValuesChecksShape) {
    EXPECT_THROW(dense_from_values({2, 3}, std::vector<double>(5)), ShapeError);
    const auto t = dense_from_values({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.numel(), 6);
    EXPECT_DOUBLE_EQ(t.at({1, 2}), 6.0);
}

TEST(Tensor, CopiesAliasStorageAndDetachCopies) {
    auto a = Tensor::zeros({3});
    Tensor b = a;
    b.mutable_values()[1] = 4.0;
    EXPECT_DOUBLE_EQ(a.values()[1], 4.0);
    auto c = a.detach();
    c.mutable_values()[1] = -1.0;
    EXPECT_DOUBLE_EQ(a.values()[1], 4.0);
}

TEST(Tape, ReplaysOnlyOnce) {
    auto x = Tensor::from_values({2}, {1.0, 2.0});
    x.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    const auto loss = ops::sum(ops::mul(x, x));
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), std::logic_error);
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Tape, BackwardNeedsScalar) {
    auto x = Tensor::from_values({2}, {1.0, 2.0});
    Tape tape;
    TapeScope scope(tape);
    EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Tape, ParameterGradientsAccumulateUntilZeroGrad) {
    ParameterSet ps;
    auto w = ps.add_parameter("w", {1}, {3.0});
    for (int i = 0; i < 2; ++i) {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(ops::scale(w, 2.0));
    }
    EXPECT_DOUBLE_EQ(w.grad()[0], 4.0);
    ps.zero_grad();
    EXPECT_FALSE(w.has_grad());
}

TEST(Tape, NothingRecordedWithoutActiveTape) {
    auto x = Tensor::from_values({1}, {1.0});
    x.set_requires_grad(true);
    const auto y = ops::scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
}

TEST(ParameterSet, RejectsDuplicateNames) {
    ParameterSet ps;
    ps.add_parameter("a", {1}, {0.0});
    EXPECT_THROW(ps.add_buffer("a", {1}, {0.0}), std::invalid_argument);
    EXPECT_EQ(ps.scalar_count(), 1u);
}

TEST(Ops, ShapeMismatchesThrow) {
    const auto a = Tensor::zeros({2, 3});
    const auto b = Tensor::zeros({3, 2});
    EXPECT_THROW(ops::add(a, b), ShapeError);
    EXPECT_THROW(ops::linear(a, Tensor::zeros({4, 2}), Tensor{}), ShapeError);
    EXPECT_THROW(ops::concat_cols({a, Tensor::zeros({3, 1})}), ShapeError);
    EXPECT_THROW(ops::reshape(a, {4}), ShapeError);
}

TEST(Ops, SoftmaxRowsSumToOneAndSurviveLargeLogits) {
    const auto x = Tensor::from_values({2, 3}, {1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0});
    const auto p = ops::softmax_rows(x);
    for (int r = 0; r < 2; ++r) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) {
            EXPECT_TRUE(std::isfinite(p.at({r, c})));
            s += p.at({r, c});
        }
        EXPECT_NEAR(s, 1.0, 1e-15);
    }
}

TEST(Ops, SegmentMaxPicksMaximaAndZeroesEmptySegments) {
    const auto x = Tensor::from_values({4, 2}, {1, -1, 3, -2, 2, 5, -7, -9});
    const std::vector<std::int32_t> seg{0, 0, 2, 2};
    const auto y = ops::segment_max(x, seg, 3);
    EXPECT_DOUBLE_EQ(y.at({0, 0}), 3.0);
    EXPECT_DOUBLE_EQ(y.at({0, 1}), -1.0);
    EXPECT_DOUBLE_EQ(y.at({1, 0}), 0.0);
    EXPECT_DOUBLE_EQ(y.at({2, 0}), 2.0);
    EXPECT_DOUBLE_EQ(y.at({2, 1}), 5.0);
}

TEST(Ops, GatherNegativeIndexGivesZero) {
    const auto a = Tensor::from_values({3}, {4, 5, 6});
    const auto g = ops::gather(a, {2, -1, 0}, {3});
    EXPECT_DOUBLE_EQ(g.values()[0], 6.0);
    EXPECT_DOUBLE_EQ(g.values()[1], 0.0);
    EXPECT_DOUBLE_EQ(g.values()[2], 4.0);
}

TEST(Ops, BatchNormEvalUsesRunningStatistics) {
    ops::BatchNormState bn;
    bn.gamma = Tensor::from_values({2}, {2.0, 1.0});
    bn.beta = Tensor::from_values({2}, {0.5, -1.0});
    bn.running_mean = Tensor::from_values({2}, {1.0, 0.0});
    bn.running_var = Tensor::from_values({2}, {4.0, 1.0});
    const auto x = Tensor::from_values({1, 2}, {3.0, 2.0});
    const auto y = ops::batch_norm(x, bn, ops::ChannelLayout::RowsByChannel, false);
    EXPECT_NEAR(y.at({0, 0}), 2.0 * (3.0 - 1.0) / std::sqrt(4.0 + 1e-5) + 0.5, 1e-12);
    EXPECT_NEAR(y.at({0, 1}), (2.0 - 0.0) / std::sqrt(1.0 + 1e-5) - 1.0, 1e-12);
}

TEST(Ops, BatchNormTrainNormalizesAndUpdatesRunningStats) {
    ssasc::Rng rng(3);
    ops::BatchNormState bn;
    bn.gamma = Tensor::from_values({2}, {1.0, 1.0});
    bn.beta = Tensor::from_values({2}, {0.0, 0.0});
    bn.running_mean = Tensor::from_values({2}, {0.0, 0.0});
    bn.running_var = Tensor::from_values({2}, {1.0, 1.0});
    const auto x = random_tensor(rng, {2, 5, 3}, -3.0, 5.0);
    const auto y = ops::batch_norm(x, bn, ops::ChannelLayout::ChannelMajor, true);
    for (int c = 0; c < 2; ++c) {
        double m = 0.0, raw = 0.0, raw2 = 0.0;
        for (int i = 0; i < 15; ++i) {
            m += y.values()[static_cast<std::size_t>(c * 15 + i)];
            const double v = x.values()[static_cast<std::size_t>(c * 15 + i)];
            raw += v;
            raw2 += v * v;
        }
        EXPECT_NEAR(m / 15.0, 0.0, 1e-12);
        const double mean = raw / 15.0;
        const double unbiased = (raw2 - 15.0 * mean * mean) / 14.0;
        EXPECT_NEAR(bn.running_mean.values()[static_cast<std::size_t>(c)], 0.1 * mean, 1e-12);
        EXPECT_NEAR(bn.running_var.values()[static_cast<std::size_t>(c)], 0.9 + 0.1 * unbiased, 1e-12);
    }
}

}  // namespace
