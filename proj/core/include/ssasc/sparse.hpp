// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "ssasc/tensor.hpp"

namespace ssasc {

struct Coord {
    std::int32_t x = 0;
    std::int32_t y = 0;
    std::int32_t z = 0;
    auto operator<=>(const Coord&) const = default;
};

struct Extents3 {
    std::int32_t x = 0;
    std::int32_t y = 0;
    std::int32_t z = 0;
    bool operator==(const Extents3&) const = default;
    std::int64_t volume() const { return std::int64_t{x} * y * z; }
    bool contains(const Coord& c) const { return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < x && c.y < y && c.z < z; }
    /// Ceil-halved extents of the next coarser lattice.
    Extents3 halved() const { return {(x + 1) / 2, (y + 1) / 2, (z + 1) / 2}; }
};

class SparseError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct KernelSize {
    std::int32_t x = 3;
    std::int32_t y = 3;
    std::int32_t z = 3;
    bool operator==(const KernelSize&) const = default;
    auto operator<=>(const KernelSize&) const = default;
    std::int32_t taps() const { return x * y * z; }
};

/// Input/output row pairs per kernel tap. Pairs within a tap are ordered by
/// output row, taps by ascending tap index (x-major over the kernel window).
struct Rulebook {
    std::int64_t input_rows = 0;
    std::int64_t output_rows = 0;
    std::vector<std::vector<std::int32_t>> in;
    std::vector<std::vector<std::int32_t>> out;
    std::int64_t pair_count() const;
};

/// Immutable set of unique active coordinates with an exact coordinate -> row
/// index. Shared by every tensor living on the same active set, which lets
/// rulebooks be built once per (set, kernel).
class CoordSet {
  public:
    CoordSet(std::vector<Coord> coords, Extents3 lattice);

    const std::vector<Coord>& coords() const { return coords_; }
    const Extents3& lattice() const { return lattice_; }
    std::int64_t size() const { return static_cast<std::int64_t>(coords_.size()); }
    /// Row of `c`, or -1 when inactive.
    std::int32_t find(const Coord& c) const;

    /// Submanifold rulebook for a centered kernel; cached.
    std::shared_ptr<const Rulebook> submanifold_rulebook(KernelSize k) const;

    /// Coarser set with the floor-halved coordinates (sorted) plus the 2x2x2
    /// stride-2 rulebook from this set to it. Cached.
    struct Downsampled {
        std::shared_ptr<const CoordSet> coarse;
        std::shared_ptr<const Rulebook> rulebook;
    };
    const Downsampled& downsample() const;

  private:
    static std::uint64_t key(const Coord& c);
    std::vector<Coord> coords_;
    Extents3 lattice_;
    std::unordered_map<std::uint64_t, std::int32_t> index_;

    mutable std::mutex cache_mutex_;
    mutable std::map<KernelSize, std::shared_ptr<const Rulebook>> submanifold_cache_;
    mutable std::unique_ptr<Downsampled> downsampled_;
};

/// Feature rows over an active coordinate set.
class SparseVoxelTensor {
  public:
    SparseVoxelTensor() = default;
    SparseVoxelTensor(std::shared_ptr<const CoordSet> coords, Tensor features);

    const CoordSet& coord_set() const { return *coords_; }
    const std::shared_ptr<const CoordSet>& coord_set_ptr() const { return coords_; }
    const std::vector<Coord>& coords() const { return coords_->coords(); }
    const Extents3& lattice() const { return coords_->lattice(); }
    const Tensor& features() const { return features_; }
    std::int64_t size() const { return coords_->size(); }
    std::int64_t feature_dim() const { return features_.dim(1); }

    /// Same coordinates, new features (row count must match).
    SparseVoxelTensor with_features(Tensor features) const { return {coords_, std::move(features)}; }

  private:
    std::shared_ptr<const CoordSet> coords_;
    Tensor features_;
};

/// Throws SparseError on duplicate or out-of-lattice coordinates, or a
/// feature row count that does not match.
SparseVoxelTensor sparse_from_points(std::vector<Coord> coords, const std::vector<std::vector<double>>& features,
                                     Extents3 lattice);

/// Dense [C, X, Y, Z] view; inactive cells are zero. Differentiable.
Tensor sparse_to_dense(const SparseVoxelTensor& t);

}  // namespace ssasc
