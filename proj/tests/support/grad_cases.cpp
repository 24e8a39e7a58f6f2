// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "grad_cases.hpp"

#include <fmt/format.h>

#include <numeric>

#include "ssasc/losses.hpp"
#include "ssasc/nn_ops.hpp"
#include "ssasc/ops.hpp"
#include "ssasc/voxelizer.hpp"

namespace ssasc::testing {

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n) {
    std::vector<double> w(n);
    for (auto& v : w) v = uniform(rng, -1.0, 1.0);
    return w;
}

/// Scalar from a tensor with fixed random weights, so every output entry
/// contributes a distinct gradient.
struct Projector {
    std::vector<double> w;
    Tensor operator()(const Tensor& y) const {
        if (static_cast<std::size_t>(y.numel()) != w.size()) throw std::logic_error("projector size mismatch");
        return ops::dot_const(y, w);
    }
};

Projector projector(Rng& rng, std::int64_t n) { return {random_values(rng, static_cast<std::size_t>(n))}; }

std::vector<Tensor> all_params(const ParameterSet& ps) {
    std::vector<Tensor> out;
    for (const auto& p : ps.parameters()) out.push_back(p.tensor);
    return out;
}

SparseVoxelTensor random_sparse(Rng& rng, Extents3 lattice, double density, std::int64_t channels) {
    std::vector<Coord> coords;
    std::vector<std::vector<double>> feats;
    for (std::int32_t x = 0; x < lattice.x; ++x) {
        for (std::int32_t y = 0; y < lattice.y; ++y) {
            for (std::int32_t z = 0; z < lattice.z; ++z) {
                if (uniform(rng, 0.0, 1.0) >= density) continue;
                coords.push_back({x, y, z});
                feats.push_back(random_values(rng, static_cast<std::size_t>(channels)));
            }
        }
    }
    if (coords.empty()) {
        coords.push_back({0, 0, 0});
        feats.push_back(random_values(rng, static_cast<std::size_t>(channels)));
    }
    return sparse_from_points(std::move(coords), feats, lattice);
}

/// A differentiable leaf carrying the sparse tensor's features.
struct SparseLeaf {
    std::shared_ptr<const CoordSet> set;
    Tensor features;
    SparseVoxelTensor tensor() const { return {set, features}; }
};

SparseLeaf sparse_leaf(Rng& rng, Extents3 lattice, double density, std::int64_t channels) {
    const auto s = random_sparse(rng, lattice, density, channels);
    return {s.coord_set_ptr(), s.features().detach()};
}

using Body = std::function<GradCheckReport(Rng&, std::int32_t)>;

GradCase make(std::string name, Body body) {
    return {std::move(name), [body = std::move(body)](std::uint64_t seed, std::int32_t probes) {
                Rng rng(seed);
                return body(rng, probes);
            }};
}

std::vector<GradCase> build_cases() {
    std::vector<GradCase> cases;

    cases.push_back(make("add", [](Rng& rng, std::int32_t probes) {
        auto a = random_tensor(rng, {3, 4});
        auto b = random_tensor(rng, {3, 4});
        const auto p = projector(rng, 12);
        return gradcheck([&] { return p(ops::add(a, b)); }, {a, b}, rng, probes);
    }));
    cases.push_back(make("mul", [](Rng& rng, std::int32_t probes) {
        auto a = random_tensor(rng, {5, 3});
        auto b = random_tensor(rng, {5, 3});
        const auto p = projector(rng, 15);
        return gradcheck([&] { return p(ops::mul(a, b)); }, {a, b}, rng, probes);
    }));
    cases.push_back(make("scale_sum_mean", [](Rng& rng, std::int32_t probes) {
        auto a = random_tensor(rng, {4, 4});
        return gradcheck(
            [&] {
                const auto s = ops::scale(a, -1.7);
                return ops::add(ops::sum(ops::mul(s, s)), ops::mean(ops::mul(a, ops::mul(a, a))));
            },
            {a}, rng, probes);
    }));
    cases.push_back(make("relu", [](Rng& rng, std::int32_t probes) {
        auto a = random_tensor(rng, {6, 5});
        const auto p = projector(rng, 30);
        return gradcheck([&] { return p(ops::relu(a)); }, {a}, rng, probes);
    }));
    cases.push_back(make("sigmoid", [](Rng& rng, std::int32_t probes) {
        auto a = random_tensor(rng, {6, 5}, -3.0, 3.0);
        const auto p = projector(rng, 30);
        return gradcheck([&] { return p(ops::sigmoid(a)); }, {a}, rng, probes);
    }));
    cases.push_back(make("reshape", [](Rng& rng, std::int32_t probes) {
        auto a = random_tensor(rng, {2, 3, 4});
        const auto p = projector(rng, 24);
        return gradcheck([&] { return p(ops::sigmoid(ops::reshape(a, {6, 4}))); }, {a}, rng, probes);
    }));
    cases.push_back(make("linear", [](Rng& rng, std::int32_t probes) {
        auto x = random_tensor(rng, {7, 5});
        auto w = random_tensor(rng, {3, 5});
        auto b = random_tensor(rng, {3});
        const auto p = projector(rng, 21);
        return gradcheck([&] { return p(ops::linear(x, w, b)); }, {x, w, b}, rng, probes);
    }));
    cases.push_back(make("linear_no_bias", [](Rng& rng, std::int32_t probes) {
        auto x = random_tensor(rng, {4, 6});
        auto w = random_tensor(rng, {2, 6});
        const auto p = projector(rng, 8);
        return gradcheck([&] { return p(ops::linear(x, w, Tensor{})); }, {x, w}, rng, probes);
    }));
    cases.push_back(make("concat0", [](Rng& rng, std::int32_t probes) {
        auto a = random_tensor(rng, {2, 3, 2});
        auto b = random_tensor(rng, {4, 3, 2});
        const auto p = projector(rng, 36);
        return gradcheck([&] { return p(ops::concat0({a, b})); }, {a, b}, rng, probes);
    }));
    cases.push_back(make("concat_cols", [](Rng& rng, std::int32_t probes) {
        auto a = random_tensor(rng, {5, 2});
        auto b = random_tensor(rng, {5, 3});
        const auto p = projector(rng, 25);
        return gradcheck([&] { return p(ops::concat_cols({a, b})); }, {a, b}, rng, probes);
    }));
    cases.push_back(make("gather", [](Rng& rng, std::int32_t probes) {
        auto a = random_tensor(rng, {3, 4});
        std::vector<std::int32_t> idx(20);
        for (auto& i : idx) i = std::uniform_int_distribution<std::int32_t>(-1, 11)(rng);
        const auto p = projector(rng, 20);
        return gradcheck([&] { return p(ops::gather(a, idx, {4, 5})); }, {a}, rng, probes);
    }));
    cases.push_back(make("gather_rows", [](Rng& rng, std::int32_t probes) {
        auto a = random_tensor(rng, {5, 3});
        const std::vector<std::int32_t> rows{4, 0, -1, 2, 2, 1};
        const auto p = projector(rng, 18);
        return gradcheck([&] { return p(ops::gather_rows(a, rows)); }, {a}, rng, probes);
    }));
    cases.push_back(make("segment_max", [](Rng& rng, std::int32_t probes) {
        auto x = random_tensor(rng, {12, 4});
        const std::vector<std::int32_t> seg{0, 2, 2, 1, 0, 4, 4, 4, 1, 0, 2, 1};
        const auto p = projector(rng, 20);
        return gradcheck([&] { return p(ops::segment_max(x, seg, 5)); }, {x}, rng, probes);
    }));
    cases.push_back(make("softmax_rows", [](Rng& rng, std::int32_t probes) {
        auto x = random_tensor(rng, {6, 5}, -2.0, 2.0);
        const auto p = projector(rng, 30);
        return gradcheck([&] { return p(ops::softmax_rows(x)); }, {x}, rng, probes);
    }));
    for (const bool train : {true, false}) {
        for (const auto layout : {ops::ChannelLayout::RowsByChannel, ops::ChannelLayout::ChannelMajor}) {
            const auto name = fmt::format("batch_norm_{}_{}", train ? "train" : "eval",
                                          layout == ops::ChannelLayout::RowsByChannel ? "rows" : "channels");
            cases.push_back(make(name, [train, layout](Rng& rng, std::int32_t probes) {
                const Shape shape = layout == ops::ChannelLayout::RowsByChannel ? Shape{9, 3} : Shape{3, 4, 2};
                auto x = random_tensor(rng, shape, -2.0, 2.0);
                ops::BatchNormState bn;
                bn.gamma = random_tensor(rng, {3}, 0.5, 1.5);
                bn.beta = random_tensor(rng, {3});
                bn.running_mean = random_tensor(rng, {3});
                bn.running_var = random_tensor(rng, {3}, 0.5, 2.0);
                const auto p = projector(rng, x.numel());
                return gradcheck([&] { return p(ops::batch_norm(x, bn, layout, train)); }, {x, bn.gamma, bn.beta},
                                 rng, probes);
            }));
        }
    }

    cases.push_back(make("conv2d", [](Rng& rng, std::int32_t probes) {
        auto x = random_tensor(rng, {2, 5, 6});
        auto w = random_tensor(rng, {3, 2, 3, 3});
        auto b = random_tensor(rng, {3});
        const auto p = projector(rng, 3 * 5 * 6);
        return gradcheck([&] { return p(conv2d(x, w, b, 1, 1)); }, {x, w, b}, rng, probes);
    }));
    cases.push_back(make("conv2d_strided", [](Rng& rng, std::int32_t probes) {
        auto x = random_tensor(rng, {2, 7, 6});
        auto w = random_tensor(rng, {2, 2, 3, 3});
        auto b = random_tensor(rng, {2});
        const auto p = projector(rng, 2 * 3 * 2);
        return gradcheck([&] { return p(conv2d(x, w, b, 2, 0)); }, {x, w, b}, rng, probes);
    }));
    cases.push_back(make("max_pool2d", [](Rng& rng, std::int32_t probes) {
        auto x = random_tensor(rng, {2, 4, 6});
        const auto p = projector(rng, 2 * 2 * 3);
        return gradcheck([&] { return p(max_pool2d(x)); }, {x}, rng, probes);
    }));
    cases.push_back(make("upsample_nearest2d", [](Rng& rng, std::int32_t probes) {
        auto x = random_tensor(rng, {2, 3, 2});
        const auto p = projector(rng, 2 * 6 * 4);
        return gradcheck([&] { return p(upsample_nearest2d(x)); }, {x}, rng, probes);
    }));
    cases.push_back(make("conv2d_layer_bn", [](Rng& rng, std::int32_t probes) {
        ParameterSet ps;
        const Conv2dLayer layer(ps, "c", 2, 3, rng, {.batch_norm = true});
        auto x = random_tensor(rng, {2, 4, 4});
        const auto p = projector(rng, 3 * 16);
        auto inputs = all_params(ps);
        inputs.push_back(x);
        return gradcheck([&] { return p(layer.forward(x, Mode::Train)); }, inputs, rng, probes);
    }));

    cases.push_back(make("sparse_conv_submanifold", [](Rng& rng, std::int32_t probes) {
        const auto leaf = sparse_leaf(rng, {5, 5, 4}, 0.4, 3);
        auto w = random_tensor(rng, {27, 3, 2});
        auto b = random_tensor(rng, {2});
        const auto rb = leaf.set->submanifold_rulebook({3, 3, 3});
        const auto p = projector(rng, leaf.set->size() * 2);
        auto f = leaf.features;
        return gradcheck([&] { return p(sparse_conv_features(f, rb, w, b, false)); }, {f, w, b}, rng, probes);
    }));
    cases.push_back(make("sparse_conv_asymmetric", [](Rng& rng, std::int32_t probes) {
        const auto leaf = sparse_leaf(rng, {5, 5, 4}, 0.5, 2);
        auto w = random_tensor(rng, {9, 2, 3});
        const auto rb = leaf.set->submanifold_rulebook({3, 1, 3});
        const auto p = projector(rng, leaf.set->size() * 3);
        auto f = leaf.features;
        return gradcheck([&] { return p(sparse_conv_features(f, rb, w, Tensor{}, false)); }, {f, w}, rng, probes);
    }));
    cases.push_back(make("sparse_conv_strided_and_inverse", [](Rng& rng, std::int32_t probes) {
        ParameterSet ps;
        const SparseConv3dLayer down(ps, "d", 2, 3, rng, {.mode = SparseConvMode::Strided, .relu = false});
        const SparseConv3dLayer up(ps, "u", 3, 2, rng, {.mode = SparseConvMode::Inverse, .relu = false});
        const auto leaf = sparse_leaf(rng, {6, 6, 4}, 0.4, 2);
        const auto p = projector(rng, leaf.set->size() * 2);
        auto inputs = all_params(ps);
        inputs.push_back(leaf.features);
        return gradcheck(
            [&] {
                const auto c = down.forward(leaf.tensor(), Mode::Eval);
                return p(up.forward_inverse(c, leaf.set, Mode::Eval).features());
            },
            inputs, rng, probes);
    }));
    cases.push_back(make("sparse_to_dense", [](Rng& rng, std::int32_t probes) {
        const auto leaf = sparse_leaf(rng, {3, 4, 2}, 0.5, 2);
        const auto p = projector(rng, 2 * 24);
        return gradcheck([&] { return p(sparse_to_dense(leaf.tensor())); }, {leaf.features}, rng, probes);
    }));
    cases.push_back(make("asym_residual_block", [](Rng& rng, std::int32_t probes) {
        ParameterSet ps;
        const AsymResidualBlock block(ps, "r", 3, rng, {.batch_norm = true, .residual_gain = 1.0});
        const auto leaf = sparse_leaf(rng, {5, 5, 3}, 0.5, 3);
        const auto p = projector(rng, leaf.set->size() * 3);
        auto inputs = all_params(ps);
        inputs.push_back(leaf.features);
        return gradcheck([&] { return p(block.forward(leaf.tensor(), Mode::Train).features()); }, inputs, rng,
                         probes);
    }));
    cases.push_back(make("asym_down_up", [](Rng& rng, std::int32_t probes) {
        ParameterSet ps;
        const AsymDownBlock down(ps, "d", 2, 3, rng, {.residual_gain = 1.0});
        const AsymUpBlock up(ps, "u", 3, 2, rng, {.residual_gain = 1.0});
        const auto leaf = sparse_leaf(rng, {6, 6, 4}, 0.4, 2);
        const auto p = projector(rng, leaf.set->size() * 2);
        auto inputs = all_params(ps);
        inputs.push_back(leaf.features);
        return gradcheck(
            [&] {
                const auto x = leaf.tensor();
                return p(up.forward(down.forward(x, Mode::Eval), x, Mode::Eval).features());
            },
            inputs, rng, probes);
    }));
    cases.push_back(make("ddcm", [](Rng& rng, std::int32_t probes) {
        ParameterSet ps;
        const DdcmBlock block(ps, "m", 3, rng);
        const auto leaf = sparse_leaf(rng, {5, 5, 3}, 0.5, 3);
        const auto p = projector(rng, leaf.set->size() * 3);
        auto inputs = all_params(ps);
        inputs.push_back(leaf.features);
        return gradcheck([&] { return p(block.forward(leaf.tensor(), Mode::Eval).features()); }, inputs, rng,
                         probes);
    }));

    cases.push_back(make("cross_entropy", [](Rng& rng, std::int32_t probes) {
        auto logits = random_tensor(rng, {10, 4}, -3.0, 3.0);
        const std::vector<std::int32_t> t{0, 3, kIgnoreIndex, 1, 2, 2, 0, kIgnoreIndex, 3, 1};
        return gradcheck([&] { return cross_entropy(logits, t); }, {logits}, rng, probes);
    }));
    cases.push_back(make("lovasz_softmax", [](Rng& rng, std::int32_t probes) {
        auto logits = random_tensor(rng, {9, 4}, -3.0, 3.0);
        const std::vector<std::int32_t> t{0, 3, kIgnoreIndex, 1, 3, 3, 0, 1, 1};
        return gradcheck([&] { return lovasz_softmax(ops::softmax_rows(logits), t); }, {logits}, rng, probes);
    }));
    cases.push_back(make("total_loss", [](Rng& rng, std::int32_t probes) {
        const Extents3 e{4, 4, 2};
        const std::int32_t C = 3;
        auto completion = random_tensor(rng, {C + 1, e.x, e.y, e.z}, -2.0, 2.0);
        auto seg = random_tensor(rng, {6, C}, -2.0, 2.0);
        SceneLabelGrid truth(e, C);
        for (auto& l : truth.labels) l = static_cast<std::uint8_t>(std::uniform_int_distribution<int>(0, C)(rng));
        truth.labels[3] = kInvalidLabel;
        VoxelMask mask(e);
        mask.bits[5] = 1;
        const std::vector<std::int32_t> st{0, 2, kIgnoreIndex, 1, 1, 2};
        return gradcheck(
            [&] { return total_loss(completion, truth, &mask, seg, st, LossOptions{}).total; }, {completion, seg},
            rng, probes);
    }));

    cases.push_back(make("pillar_encoder", [](Rng& rng, std::int32_t probes) {
        GridSpec g{{0.0, 0.0, 0.0}, {1.6, 1.6, 0.8}, 0.4};
        ParameterSet ps;
        const PillarEncoder enc(ps, "enc", 4, rng, true);
        const auto cloud = random_cloud(rng, g, 40);
        const auto a = assign_voxels(cloud, g);
        const auto e = g.extents();
        const auto pb = projector(rng, 4 * e.x * e.y);
        auto probe = [&] {
            const auto emb = enc.embed(a, Mode::Train);
            const auto vox = enc.encode_voxels(emb, a);
            const auto pv = std::vector<double>(static_cast<std::size_t>(vox.features().numel()), 0.37);
            return ops::add(pb(enc.encode_bev(emb, a)), ops::dot_const(ops::sigmoid(vox.features()), pv));
        };
        return gradcheck(probe, all_params(ps), rng, probes);
    }));

    for (const bool bn : {false, true}) {
        cases.push_back(make(bn ? "model_end_to_end_bn" : "model_end_to_end", [bn](Rng& rng, std::int32_t probes) {
            auto cfg = tiny_model_config();
            cfg.conv_batch_norm = bn;
            cfg.seed = rng();
            SsaScModel model(cfg);
            const auto cloud = random_cloud(rng, cfg.grid, 120);
            const auto e = cfg.grid.extents();
            SceneLabelGrid truth(e, cfg.class_count);
            for (auto& l : truth.labels) {
                l = uniform(rng, 0.0, 1.0) < 0.7 ? 0 : static_cast<std::uint8_t>(1 + rng() % 4);
            }
            std::vector<std::uint8_t> point_labels(cloud.size());
            for (auto& l : point_labels) l = static_cast<std::uint8_t>(1 + rng() % 4);
            auto probe = [&] {
                const auto out = model.forward_train(cloud, Mode::Train);
                const auto st = segmentation_targets(point_labels, out.assignment);
                return total_loss(out.completion, truth, nullptr, out.segmentation, st, LossOptions{}).total;
            };
            return gradcheck(probe, all_params(model.parameters()), rng, probes);
        }));
    }
    return cases;
}

}  // namespace

const std::vector<GradCase>& gradient_cases() {
    static const std::vector<GradCase> cases = build_cases();
    return cases;
}

ModelConfig tiny_model_config() {
    ModelConfig c;
    c.grid = {{0.0, 0.0, 0.0}, {3.2, 3.2, 0.8}, 0.2};
    c.class_count = 4;
    c.feature_dim = 4;
    c.fusion_dim = 3;
    c.widths_2d = {4, 4, 6, 6};
    c.widths_3d = {3, 4, 4, 5};
    return c;
}

PointCloud random_cloud(Rng& rng, const GridSpec& grid, std::size_t points) {
    PointCloud c;
    for (std::size_t i = 0; i < points; ++i) {
        c.points.push_back({uniform(rng, grid.range_min[0], grid.range_max[0]),
                            uniform(rng, grid.range_min[1], grid.range_max[1]),
                            uniform(rng, grid.range_min[2], grid.range_max[2]), uniform(rng, 0.0, 1.0)});
    }
    return c;
}

}  // namespace ssasc::testing
