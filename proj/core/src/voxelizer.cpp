// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/voxelizer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ssasc/ops.hpp"

namespace ssasc {

void GridSpec::validate() const {
    if (!(voxel_size > 0.0)) throw std::invalid_argument("voxel size must be positive");
    for (int a = 0; a < 3; ++a) {
        const double cells = (range_max[a] - range_min[a]) / voxel_size;
        if (!(cells >= 1.0) || std::abs(cells - std::round(cells)) > 1e-6) {
            throw std::invalid_argument(fmt::format("axis {} span {} is not a positive multiple of voxel size {}", a,
                                                    range_max[a] - range_min[a], voxel_size));
        }
    }
}

Extents3 GridSpec::extents() const {
    validate();
    auto n = [&](int a) { return static_cast<std::int32_t>(std::lround((range_max[a] - range_min[a]) / voxel_size)); };
    return {n(0), n(1), n(2)};
}

std::array<double, 3> GridSpec::center(const Coord& c) const {
    return {range_min[0] + (c.x + 0.5) * voxel_size, range_min[1] + (c.y + 0.5) * voxel_size,
            range_min[2] + (c.z + 0.5) * voxel_size};
}

VoxelAssignment assign_voxels(const PointCloud& cloud, const GridSpec& spec) {
    VoxelAssignment a;
    a.extents = spec.extents();
    const std::array<std::int32_t, 3> ext{a.extents.x, a.extents.y, a.extents.z};
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.points[i];
        const std::array<double, 3> pos{p.x, p.y, p.z};
        std::array<std::int32_t, 3> idx{};
        bool inside = true;
        for (int k = 0; k < 3 && inside; ++k) {
            if (!std::isfinite(pos[k]) || pos[k] < spec.range_min[k] || pos[k] >= spec.range_max[k]) {
                inside = false;
                break;
            }
            const double f = std::floor((pos[k] - spec.range_min[k]) / spec.voxel_size);
            if (f < 0 || f >= ext[k]) inside = false;
            idx[k] = static_cast<std::int32_t>(f);
        }
        if (!inside) continue;
        const Coord c{idx[0], idx[1], idx[2]};
        const auto ctr = spec.center(c);
        a.source.push_back(static_cast<std::int32_t>(i));
        a.voxel.push_back(c);
        a.features.push_back({p.x - ctr[0], p.y - ctr[1], p.z - ctr[2], p.x, p.y, p.z, p.r});
    }

    a.voxels = a.voxel;
    std::sort(a.voxels.begin(), a.voxels.end());
    a.voxels.erase(std::unique(a.voxels.begin(), a.voxels.end()), a.voxels.end());
    a.point_voxel.reserve(a.size());
    for (const auto& c : a.voxel) {
        a.point_voxel.push_back(
            static_cast<std::int32_t>(std::lower_bound(a.voxels.begin(), a.voxels.end(), c) - a.voxels.begin()));
    }
    std::vector<std::int32_t> col_of_point;
    col_of_point.reserve(a.size());
    for (const auto& c : a.voxel) col_of_point.push_back(c.x * a.extents.y + c.y);
    a.columns = col_of_point;
    std::sort(a.columns.begin(), a.columns.end());
    a.columns.erase(std::unique(a.columns.begin(), a.columns.end()), a.columns.end());
    a.point_column.reserve(a.size());
    for (auto id : col_of_point) {
        a.point_column.push_back(
            static_cast<std::int32_t>(std::lower_bound(a.columns.begin(), a.columns.end(), id) - a.columns.begin()));
    }
    return a;
}

PillarEncoder::PillarEncoder(ParameterSet& params, const std::string& name, std::int64_t feature_dim, Rng& rng,
                             bool with_voxel_head)
    : feature_dim_(feature_dim),
      m1_(params, name + ".mlp1", 7, kHidden, rng),
      bn1_(params, name + ".mlp1.bn", kHidden),
      m2_(params, name + ".mlp2", kHidden, feature_dim, rng),
      bn2_(params, name + ".mlp2.bn", feature_dim),
      a1_(params, name + ".reduce_bev", feature_dim, feature_dim, rng) {
    if (with_voxel_head) a2_.emplace(params, name + ".reduce_voxel", feature_dim, feature_dim, rng);
}

Tensor PillarEncoder::embed(const VoxelAssignment& a, Mode mode) const {
    const auto n = static_cast<std::int64_t>(a.size());
    invocations_ += a.size();
    if (n == 0) return Tensor::zeros({0, feature_dim_});
    std::vector<double> raw;
    raw.reserve(a.size() * 7);
    for (const auto& f : a.features) raw.insert(raw.end(), f.begin(), f.end());
    Tensor x = Tensor::from_values({n, 7}, std::move(raw));
    x = ops::relu(bn1_.forward(m1_.forward(x), ops::ChannelLayout::RowsByChannel, mode));
    return ops::relu(bn2_.forward(m2_.forward(x), ops::ChannelLayout::RowsByChannel, mode));
}

Tensor PillarEncoder::encode_bev(const Tensor& embedded, const VoxelAssignment& a) const {
    const auto cf = feature_dim_;
    const auto cells = std::int64_t{a.extents.x} * a.extents.y;
    const auto k = static_cast<std::int64_t>(a.columns.size());
    if (k == 0) return Tensor::zeros({cf, a.extents.x, a.extents.y});
    Tensor pooled = ops::segment_max(embedded, a.point_column, k);
    Tensor reduced = ops::relu(a1_.forward(pooled));
    std::vector<std::int32_t> index(static_cast<std::size_t>(cf * cells), -1);
    for (std::int64_t r = 0; r < k; ++r) {
        const auto cell = a.columns[static_cast<std::size_t>(r)];
        for (std::int64_t c = 0; c < cf; ++c) index[static_cast<std::size_t>(c * cells + cell)] = static_cast<std::int32_t>(r * cf + c);
    }
    return ops::gather(reduced, std::move(index), {cf, a.extents.x, a.extents.y});
}

SparseVoxelTensor PillarEncoder::encode_voxels(const Tensor& embedded, const VoxelAssignment& a) const {
    if (!a2_) throw std::logic_error("pillar encoder built without a voxel head");
    auto set = std::make_shared<const CoordSet>(a.voxels, a.extents);
    const auto k = static_cast<std::int64_t>(a.voxels.size());
    if (k == 0) return {set, Tensor::zeros({0, feature_dim_})};
    Tensor pooled = ops::segment_max(embedded, a.point_voxel, k);
    return {set, ops::relu(a2_->forward(pooled))};
}

}  // namespace ssasc
