// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <vector>

#include "ssasc/kitti_io.hpp"
#include "ssasc/voxelizer.hpp"

namespace ssasc {

struct SynthConfig {
    GridSpec grid = GridSpec::desk();
    std::int32_t class_count = 10;
    std::int32_t object_count = 10;
    std::int32_t beams = 24;
    std::int32_t azimuth_steps = 256;
    double elevation_min_deg = -25.0;
    double elevation_max_deg = 8.0;
    /// Sensor height above the bottom of the grid, meters.
    double sensor_height = 0.9;
    /// Per-axis point jitter as a fraction of the voxel size.
    double jitter = 0.35;
};

/// Classes 1..3 are ground strips on the bottom layer; classes 4..C are
/// assigned to objects round-robin, each class with a fixed shape family.
struct SyntheticScene {
    PointCloud cloud;
    SceneLabelGrid grid;
    VoxelMask invalid;
    std::vector<std::uint8_t> point_labels;  ///< class of the voxel each point was sampled from
};

/// Deterministic for a fixed seed. Throws std::invalid_argument on degenerate
/// grids or fewer than 3 classes (4 when objects are requested).
SyntheticScene generate_synthetic_scene(std::uint64_t seed, const SynthConfig& config);

}  // namespace ssasc
