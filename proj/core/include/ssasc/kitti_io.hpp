// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssasc/sparse.hpp"

namespace ssasc {

struct Point {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double r = 0.0;  ///< reflectance in [0, 1]
    bool operator==(const Point&) const = default;
};

struct PointCloud {
    std::vector<Point> points;
    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool operator==(const PointCloud&) const = default;
};

inline constexpr std::uint8_t kEmptyLabel = 0;
inline constexpr std::uint8_t kInvalidLabel = 255;

/// Dense L x W x H class grid, x-major then y then z.
struct SceneLabelGrid {
    Extents3 extents;
    std::int32_t class_count = 0;
    std::vector<std::uint8_t> labels;

    SceneLabelGrid() = default;
    SceneLabelGrid(Extents3 e, std::int32_t classes, std::uint8_t fill = kEmptyLabel);

    std::size_t index(std::int32_t x, std::int32_t y, std::int32_t z) const {
        return (static_cast<std::size_t>(x) * static_cast<std::size_t>(extents.y) + static_cast<std::size_t>(y)) *
                   static_cast<std::size_t>(extents.z) +
               static_cast<std::size_t>(z);
    }
    std::uint8_t at(std::int32_t x, std::int32_t y, std::int32_t z) const { return labels[index(x, y, z)]; }
    std::uint8_t& at(std::int32_t x, std::int32_t y, std::int32_t z) { return labels[index(x, y, z)]; }
    std::size_t occupied_count() const;
    /// Throws when a label lies outside {0..C} and is not the invalid sentinel.
    void validate() const;
    bool operator==(const SceneLabelGrid&) const = default;
};

/// Per-voxel boolean, same ordering as SceneLabelGrid.
struct VoxelMask {
    Extents3 extents;
    std::vector<std::uint8_t> bits;  ///< 0 or 1

    VoxelMask() = default;
    explicit VoxelMask(Extents3 e, bool fill = false);
    std::size_t count() const;
    bool operator==(const VoxelMask&) const = default;
};

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raw dataset label id -> contiguous train id. 0 stays empty; ids missing from
/// the table read as the invalid sentinel.
class LabelMap {
  public:
    LabelMap() = default;
    explicit LabelMap(std::map<std::uint16_t, std::uint8_t> raw_to_train);
    static LabelMap identity(std::int32_t class_count);
    /// "raw:train raw:train ..." (whitespace or comma separated).
    static LabelMap parse(const std::string& text);
    std::string to_string() const;

    std::uint8_t to_train(std::uint16_t raw) const;
    /// Smallest raw id mapping to `train`; the invalid sentinel writes as
    /// kInvalidRawId.
    std::uint16_t to_raw(std::uint8_t train) const;
    const std::map<std::uint16_t, std::uint8_t>& table() const { return raw_to_train_; }
    bool operator==(const LabelMap&) const = default;

    static constexpr std::uint16_t kInvalidRawId = 0xFFFF;

  private:
    std::map<std::uint16_t, std::uint8_t> raw_to_train_;
    std::map<std::uint8_t, std::uint16_t> train_to_raw_;
};

/// Four little-endian float32 per point (x, y, z, r).
PointCloud read_scan(const std::filesystem::path& path);
void write_scan(const std::filesystem::path& path, const PointCloud& cloud);

/// One little-endian uint16 raw label per voxel.
SceneLabelGrid read_voxel_labels(const std::filesystem::path& path, Extents3 extents, const LabelMap& map,
                                 std::int32_t class_count);
void write_voxel_labels(const std::filesystem::path& path, const SceneLabelGrid& grid, const LabelMap& map);

/// Packed bits, most significant bit first within each byte.
VoxelMask read_invalid_mask(const std::filesystem::path& path, Extents3 extents);
void write_invalid_mask(const std::filesystem::path& path, const VoxelMask& mask);

}  // namespace ssasc
