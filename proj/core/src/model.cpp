// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/model.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "ssasc/ops.hpp"

namespace ssasc {

void ModelConfig::validate() const {
    const auto e = grid.extents();
    if (class_count < 1 || class_count > 254) throw std::invalid_argument("class_count must be in 1..254");
    if (level_count != 4) throw std::invalid_argument(fmt::format("level_count must be 4, got {}", level_count));
    if (e.x % 16 != 0 || e.y % 16 != 0) {
        throw std::invalid_argument(fmt::format("grid {}x{} must be divisible by 16 in x and y", e.x, e.y));
    }
    if (feature_dim <= 0 || fusion_dim <= 0) throw std::invalid_argument("feature and fusion dims must be positive");
    for (auto w : widths_2d) {
        if (w <= 0) throw std::invalid_argument("2D widths must be positive");
    }
    for (auto w : widths_3d) {
        if (w <= 0) throw std::invalid_argument("3D widths must be positive");
    }
    if (fusion_levels < 0 || fusion_levels > level_count) {
        throw std::invalid_argument(fmt::format("fusion_levels must be in 0..{}", level_count));
    }
    if (!(empty_prior >= 0.0 && empty_prior < 1.0)) throw std::invalid_argument("empty_prior must be in [0, 1)");
    if (segmentation_decoder && !segmentation_branch) {
        throw std::invalid_argument("segmentation_decoder requires segmentation_branch");
    }
}

namespace {

struct DoubleConv {
    Conv2dLayer a;
    Conv2dLayer b;

    DoubleConv(ParameterSet& p, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng, bool bn)
        : a(p, name + ".0", in, out, rng, {.batch_norm = bn}), b(p, name + ".1", out, out, rng, {.batch_norm = bn}) {}
    Tensor forward(const Tensor& x, Mode mode) const { return b.forward(a.forward(x, mode), mode); }
};

Rng sub_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(stream_seed(seed, {stream})); }

}  // namespace

struct SsaScModel::Net {
    std::optional<PillarEncoder> encoder;

    std::optional<DoubleConv> inc;
    std::vector<DoubleConv> down;  // levels 1..4
    std::vector<Linear> fuse;      // levels 1..fusion_levels
    std::vector<DoubleConv> up;    // levels 3..0
    std::optional<Conv2dLayer> head;

    std::optional<SparseConv3dLayer> stem;
    std::optional<AsymResidualBlock> stem_res;
    std::vector<AsymDownBlock> seg_down;  // produces levels 1..depth
    std::vector<AsymUpBlock> seg_up;      // levels 3..0
    std::optional<DdcmBlock> ddcm;
    std::optional<Linear> seg_head;

    std::vector<std::int32_t> head_permutation;
    std::vector<Extents3> lattices;  // 3D lattice per level
};

SsaScModel::SsaScModel(ModelConfig config) : config_(std::move(config)), net_(std::make_unique<Net>()) {
    config_.validate();
    const auto& c = config_;
    auto& n = *net_;
    const bool bn = c.conv_batch_norm;
    const Extents3 e = c.grid.extents();
    n.lattices.push_back(e);
    for (int i = 0; i < c.level_count; ++i) n.lattices.push_back(n.lattices.back().halved());

    {
        Rng rng = sub_rng(c.seed, 1);
        n.encoder.emplace(params_, "encoder", c.feature_dim, rng, c.segmentation_branch);
    }

    const auto& w2 = c.widths_2d;
    const auto& w3 = c.widths_3d;
    // Channels of the 3D encoder output at level i (0..4).
    auto ch3 = [&](int i) { return w3[static_cast<std::size_t>(std::min(i, 3))]; };
    auto ch2 = [&](int i) { return w2[static_cast<std::size_t>(std::min(i, 3))]; };
    const bool fused_any = c.segmentation_branch && c.fusion_levels > 0;
    auto fused = [&](int i) { return fused_any && i >= 1 && i <= c.fusion_levels; };

    {
        Rng rng = sub_rng(c.seed, 2);
        n.inc.emplace(params_, "bev.inc", c.feature_dim, w2[0], rng, bn);
        std::vector<std::int64_t> level_out{ch2(0)};
        n.down.reserve(4);
        for (int i = 1; i <= 4; ++i) {
            n.down.emplace_back(params_, fmt::format("bev.down{}", i), level_out.back(), ch2(i), rng, bn);
            level_out.push_back(ch2(i) + (fused(i) ? c.fusion_dim : 0));
        }
        n.up.reserve(4);
        std::int64_t cur = level_out[4];
        for (int j = 3; j >= 0; --j) {
            const auto out = w2[static_cast<std::size_t>(std::max(j - 1, 0))];
            n.up.emplace_back(params_, fmt::format("bev.up{}", j), cur + level_out[static_cast<std::size_t>(j)], out,
                              rng, bn);
            cur = out;
        }
        const auto h = e.z;
        n.head.emplace(params_, "bev.head", cur, (c.class_count + 1) * std::int64_t{h}, rng,
                       Conv2dOptions{.kernel = 1, .padding = 0, .relu = false});
        if (c.empty_prior > 0.0) {
            // Empty logit b with the other biases near zero gives softmax e^b / (e^b + C).
            const double b0 = std::log(c.empty_prior * c.class_count / (1.0 - c.empty_prior));
            auto b = n.head->bias.mutable_values();
            for (std::int64_t z = 0; z < h; ++z) b[static_cast<std::size_t>(z)] = b0;
        }
    }

    if (fused_any) {
        Rng rng = sub_rng(c.seed, 3);
        for (int i = 1; i <= c.fusion_levels; ++i) {
            n.fuse.emplace_back(params_, fmt::format("fuse{}", i), ch3(i) * n.lattices[static_cast<std::size_t>(i)].z,
                                c.fusion_dim, rng);
        }
    }

    if (c.segmentation_branch) {
        Rng rng = sub_rng(c.seed, 4);
        const BlockOptions bo{.batch_norm = bn};
        n.stem.emplace(params_, "seg.stem", c.feature_dim, w3[0], rng, SparseConvOptions{.batch_norm = bn});
        n.stem_res.emplace(params_, "seg.stem_res", w3[0], rng, bo);
        const int depth = c.segmentation_decoder ? c.level_count : c.fusion_levels;
        n.seg_down.reserve(static_cast<std::size_t>(depth));
        for (int i = 1; i <= depth; ++i) {
            n.seg_down.emplace_back(params_, fmt::format("seg.down{}", i), ch3(i - 1), ch3(i), rng, bo);
        }
        if (c.segmentation_decoder) {
            Rng drng = sub_rng(c.seed, 5);
            n.seg_up.reserve(4);
            for (int j = 3; j >= 0; --j) {
                n.seg_up.emplace_back(params_, fmt::format("seg.up{}", j), ch3(j + 1), ch3(j), drng, bo);
            }
            n.ddcm.emplace(params_, "seg.ddcm", w3[0], drng, bo);
            n.seg_head.emplace(params_, "seg.head", 2 * w3[0], c.class_count, drng);
        }
    }

    // Head channel c*H + z at (x, y) -> completion[c, x, y, z].
    const std::int64_t k = c.class_count + 1;
    n.head_permutation.resize(static_cast<std::size_t>(k * e.volume()));
    std::size_t o = 0;
    for (std::int64_t cls = 0; cls < k; ++cls) {
        for (std::int32_t x = 0; x < e.x; ++x) {
            for (std::int32_t y = 0; y < e.y; ++y) {
                for (std::int32_t z = 0; z < e.z; ++z) {
                    n.head_permutation[o++] = static_cast<std::int32_t>(((cls * e.z + z) * e.x + x) * e.y + y);
                }
            }
        }
    }
}

SsaScModel::~SsaScModel() = default;

const PillarEncoder& SsaScModel::encoder() const { return *net_->encoder; }

namespace {

/// Stack a sparse level along z into [L*W, ch*H] rows, empty cells zero.
Tensor z_stack(const SparseVoxelTensor& t) {
    const auto& e = t.lattice();
    const auto ch = t.feature_dim();
    const std::int64_t cols = ch * e.z;
    const std::int64_t cells = std::int64_t{e.x} * e.y;
    std::vector<std::int32_t> index(static_cast<std::size_t>(cells * cols), -1);
    const auto& coords = t.coords();
    for (std::size_t r = 0; r < coords.size(); ++r) {
        const auto& p = coords[r];
        const auto cell = std::int64_t{p.x} * e.y + p.y;
        for (std::int64_t c = 0; c < ch; ++c) {
            index[static_cast<std::size_t>(cell * cols + c * e.z + p.z)] = static_cast<std::int32_t>(r * ch + c);
        }
    }
    return ops::gather(t.features(), std::move(index), {cells, cols});
}

/// [cells, C] rows -> [C, X, Y].
Tensor rows_to_chw(const Tensor& rows, std::int32_t ex, std::int32_t ey) {
    const auto c = rows.dim(1);
    const std::int64_t cells = std::int64_t{ex} * ey;
    std::vector<std::int32_t> index(static_cast<std::size_t>(c * cells));
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t cell = 0; cell < cells; ++cell) {
            index[static_cast<std::size_t>(ch * cells + cell)] = static_cast<std::int32_t>(cell * c + ch);
        }
    }
    return ops::gather(rows, std::move(index), {c, ex, ey});
}

}  // namespace

ForwardOutput SsaScModel::run(const PointCloud& cloud, Mode mode, bool decoder) const {
    const auto& c = config_;
    const auto& n = *net_;
    ForwardOutput out;
    out.assignment = assign_voxels(cloud, c.grid);
    const auto& a = out.assignment;
    const Extents3 e = a.extents;

    const Tensor embedded = n.encoder->embed(a, mode);
    const Tensor bev = n.encoder->encode_bev(embedded, a);

    // 3D encoder, only as deep as needed.
    std::vector<SparseVoxelTensor> enc;
    const bool seg = c.segmentation_branch;
    const bool run_decoder = decoder && c.segmentation_decoder;
    const int depth = !seg ? 0 : (run_decoder ? c.level_count : c.fusion_levels);
    if (seg && (depth > 0 || run_decoder)) {
        const auto voxels = n.encoder->encode_voxels(embedded, a);
        enc.push_back(n.stem_res->forward(n.stem->forward(voxels, mode), mode));
        for (int i = 1; i <= depth; ++i) enc.push_back(n.seg_down[static_cast<std::size_t>(i - 1)].forward(enc.back(), mode));
    }

    // 2D UNet with fusion at levels 1..fusion_levels.
    std::vector<Tensor> skips;
    Tensor cur = n.inc->forward(bev, mode);
    skips.push_back(cur);
    for (int i = 1; i <= 4; ++i) {
        cur = n.down[static_cast<std::size_t>(i - 1)].forward(max_pool2d(cur), mode);
        if (!n.fuse.empty() && i <= c.fusion_levels) {
            const auto& level = enc[static_cast<std::size_t>(i)];
            const Tensor reduced = ops::relu(n.fuse[static_cast<std::size_t>(i - 1)].forward(z_stack(level)));
            cur = ops::concat0({cur, rows_to_chw(reduced, level.lattice().x, level.lattice().y)});
        }
        if (i < 4) skips.push_back(cur);
    }
    for (int j = 3; j >= 0; --j) {
        const Tensor lifted = upsample_nearest2d(cur);
        cur = n.up[static_cast<std::size_t>(3 - j)].forward(ops::concat0({lifted, skips[static_cast<std::size_t>(j)]}), mode);
    }
    const Tensor head = n.head->forward(cur, mode);
    out.completion = ops::gather(head, n.head_permutation, {c.class_count + 1, e.x, e.y, e.z});

    if (run_decoder) {
        SparseVoxelTensor d = enc[4];
        for (int j = 3; j >= 0; --j) {
            d = n.seg_up[static_cast<std::size_t>(3 - j)].forward(d, enc[static_cast<std::size_t>(j)], mode);
        }
        const auto ctx = n.ddcm->forward(d, mode);
        out.segmentation = n.seg_head->forward(ops::concat_cols({ctx.features(), d.features()}));
    }
    return out;
}

ForwardOutput SsaScModel::forward_train(const PointCloud& cloud, Mode mode) const { return run(cloud, mode, true); }

ForwardOutput SsaScModel::forward_completion(const PointCloud& cloud, Mode mode) const {
    return run(cloud, mode, false);
}

SceneLabelGrid SsaScModel::forward_infer(const PointCloud& cloud) const {
    const auto out = run(cloud, Mode::Eval, false);
    return argmax_grid(out.completion, config_.class_count);
}

std::vector<std::string> SsaScModel::inference_parameter_names() const {
    const auto& c = config_;
    const bool uses_3d = c.segmentation_branch && c.fusion_levels > 0;
    auto used = [&](const std::string& name) {
        if (name.starts_with("seg.up") || name.starts_with("seg.ddcm") || name.starts_with("seg.head")) return false;
        if (!uses_3d && (name.starts_with("seg.") || name.starts_with("encoder.reduce_voxel"))) return false;
        for (int i = c.fusion_levels + 1; i <= c.level_count; ++i) {
            if (name.starts_with(fmt::format("seg.down{}.", i))) return false;
        }
        return true;
    };
    std::vector<std::string> names;
    for (const auto& p : params_.parameters()) {
        if (used(p.name)) names.push_back(p.name);
    }
    return names;
}

std::size_t SsaScModel::inference_scalar_count() const {
    std::size_t total = 0;
    for (const auto& name : inference_parameter_names()) total += static_cast<std::size_t>(params_.find(name)->numel());
    return total;
}

SceneLabelGrid argmax_grid(const Tensor& completion, std::int32_t class_count) {
    if (completion.rank() != 4 || completion.dim(0) != class_count + 1) {
        throw ShapeError(fmt::format("argmax_grid: expected [{}, L, W, H] logits, got {}", class_count + 1,
                                     shape_str(completion.shape())));
    }
    const Extents3 e{static_cast<std::int32_t>(completion.dim(1)), static_cast<std::int32_t>(completion.dim(2)),
                     static_cast<std::int32_t>(completion.dim(3))};
    SceneLabelGrid grid(e, class_count);
    const auto v = completion.values();
    const auto volume = static_cast<std::size_t>(e.volume());
    for (std::size_t i = 0; i < volume; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k <= static_cast<std::size_t>(class_count); ++k) {
            if (v[k * volume + i] > v[best * volume + i]) best = k;
        }
        grid.labels[i] = static_cast<std::uint8_t>(best);
    }
    return grid;
}

}  // namespace ssasc
