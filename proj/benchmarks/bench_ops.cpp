// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include <benchmark/benchmark.h>

#include <algorithm>
#include <numeric>

#include "ssasc/model.hpp"
#include "ssasc/nn_ops.hpp"
#include "ssasc/trainer.hpp"

namespace {

using namespace ssasc;

/// `active` distinct sites in a cube sized for 10% occupancy.
SparseVoxelTensor random_sparse(Rng& rng, std::int64_t active, std::int64_t channels) {
    const auto side = static_cast<std::int32_t>(std::ceil(std::cbrt(static_cast<double>(active) / 0.1)));
    std::vector<std::int64_t> cells(static_cast<std::size_t>(side) * side * side);
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);
    cells.resize(static_cast<std::size_t>(active));
    std::sort(cells.begin(), cells.end());
    std::vector<Coord> coords;
    std::vector<std::vector<double>> feats;
    for (auto id : cells) {
        coords.push_back({static_cast<std::int32_t>(id / (side * side)), static_cast<std::int32_t>((id / side) % side),
                          static_cast<std::int32_t>(id % side)});
        std::vector<double> f(static_cast<std::size_t>(channels));
        for (auto& v : f) v = uniform(rng, -1.0, 1.0);
        feats.push_back(std::move(f));
    }
    return sparse_from_points(std::move(coords), feats, {side, side, side});
}

void sparse_conv(benchmark::State& state, KernelSize k) {
    Rng rng(1);
    const auto ch = state.range(1);
    const auto x = random_sparse(rng, state.range(0), ch);
    ParameterSet ps;
    const SparseConv3dLayer layer(ps, "conv", ch, ch, rng, {.kernel = k});
    for (auto _ : state) benchmark::DoNotOptimize(layer.forward(x, Mode::Eval));
    state.counters["pairs"] = static_cast<double>(x.coord_set().submanifold_rulebook(k)->pair_count());
}

void BM_SubmanifoldFull(benchmark::State& state) { sparse_conv(state, {3, 3, 3}); }
void BM_SubmanifoldAsymmetric(benchmark::State& state) { sparse_conv(state, {3, 1, 3}); }

void BM_ResidualBlock(benchmark::State& state) {
    Rng rng(2);
    const auto ch = state.range(1);
    const auto x = random_sparse(rng, state.range(0), ch);
    ParameterSet ps;
    const AsymResidualBlock block(ps, "block", ch, rng, {});
    for (auto _ : state) benchmark::DoNotOptimize(block.forward(x, Mode::Eval));
}

void BM_Conv2d(benchmark::State& state) {
    Rng rng(3);
    const auto ch = state.range(1);
    const auto side = state.range(0);
    std::vector<double> v(static_cast<std::size_t>(ch * side * side));
    for (auto& e : v) e = uniform(rng, -1.0, 1.0);
    const auto x = Tensor::from_values({ch, side, side}, v);
    ParameterSet ps;
    const Conv2dLayer conv(ps, "conv", ch, ch, rng);
    for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, Mode::Eval));
}

void BM_AssignVoxels(benchmark::State& state) {
    const auto scene = synthetic_dataset(SynthConfig{}, 4, 0, 1).front();
    for (auto _ : state) benchmark::DoNotOptimize(assign_voxels(scene.cloud, GridSpec::desk()));
    state.counters["points"] = static_cast<double>(scene.cloud.size());
}

void BM_ModelInfer(benchmark::State& state) {
    const SsaScModel model(ModelConfig{});
    const auto scene = synthetic_dataset(SynthConfig{}, 5, 0, 1).front();
    for (auto _ : state) benchmark::DoNotOptimize(model.forward_infer(scene.cloud));
}

}  // namespace

BENCHMARK(BM_SubmanifoldFull)->Args({1000, 16})->Args({4000, 16})->Args({4000, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SubmanifoldAsymmetric)->Args({1000, 16})->Args({4000, 16})->Args({4000, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ResidualBlock)->Args({1000, 16})->Args({4000, 16})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2d)->Args({64, 32})->Args({32, 64})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AssignVoxels)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ModelInfer)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
