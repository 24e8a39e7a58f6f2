// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssasc/kitti_io.hpp"
#include "ssasc/nn_ops.hpp"
#include "ssasc/sparse.hpp"
#include "ssasc/tensor.hpp"

namespace ssasc {

/// Axis-aligned voxel grid over [range_min, range_max) per axis.
struct GridSpec {
    std::array<double, 3> range_min{0.0, -25.6, -2.0};
    std::array<double, 3> range_max{51.2, 25.6, 4.4};
    double voxel_size = 0.2;

    /// 256 x 256 x 32.
    static GridSpec full_scale() { return {}; }
    /// 64 x 64 x 8 over 12.8 x 12.8 x 1.6 m.
    static GridSpec desk() { return {{0.0, -6.4, -1.0}, {12.8, 6.4, 0.6}, 0.2}; }

    /// Throws std::invalid_argument unless every axis span is a positive
    /// integral multiple of voxel_size.
    void validate() const;
    Extents3 extents() const;
    /// Center of voxel `c` in meters.
    std::array<double, 3> center(const Coord& c) const;
    bool operator==(const GridSpec&) const = default;
};

/// (dx, dy, dz, x, y, z, r): offset from the voxel center, raw position, reflectance.
using PointFeature = std::array<double, 7>;

/// Voxel membership of the points that fell inside the grid.
struct VoxelAssignment {
    Extents3 extents;
    std::vector<std::int32_t> source;    ///< index of each kept point in the input cloud
    std::vector<Coord> voxel;            ///< per kept point
    std::vector<PointFeature> features;  ///< per kept point

    std::vector<Coord> voxels;                 ///< sorted unique occupied voxels
    std::vector<std::int32_t> point_voxel;     ///< kept point -> row in `voxels`
    std::vector<std::int32_t> columns;         ///< sorted unique occupied columns, id x*W + y
    std::vector<std::int32_t> point_column;    ///< kept point -> row in `columns`

    std::size_t size() const { return voxel.size(); }
};

/// Drops points outside the half-open range; index = floor((p - min)/voxel).
VoxelAssignment assign_voxels(const PointCloud& cloud, const GridSpec& spec);

/// Shared point MLP with two reduction heads: one per column (bird's-eye map)
/// and one per voxel (sparse 3D input).
class PillarEncoder {
  public:
    static constexpr std::int64_t kHidden = 32;

    PillarEncoder(ParameterSet& params, const std::string& name, std::int64_t feature_dim, Rng& rng,
                  bool with_voxel_head = true);

    std::int64_t feature_dim() const { return feature_dim_; }

    /// Point MLP outputs [N, C_f]. Counts one invocation per point.
    Tensor embed(const VoxelAssignment& a, Mode mode) const;
    /// [C_f, L, W]; columns without points are zero.
    Tensor encode_bev(const Tensor& embedded, const VoxelAssignment& a) const;
    /// One row per occupied voxel, feature dim C_f.
    SparseVoxelTensor encode_voxels(const Tensor& embedded, const VoxelAssignment& a) const;

    /// Total points pushed through the point MLP so far.
    std::size_t embed_invocations() const { return invocations_; }
    void reset_invocations() const { invocations_ = 0; }

  private:
    std::int64_t feature_dim_;
    Linear m1_;
    BatchNorm bn1_;
    Linear m2_;
    BatchNorm bn2_;
    Linear a1_;
    std::optional<Linear> a2_;
    mutable std::size_t invocations_ = 0;
};

}  // namespace ssasc
