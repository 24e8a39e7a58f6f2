// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/sparse.hpp"

#include <fmt/format.h>

#include <algorithm>

#include "ssasc/ops.hpp"

namespace ssasc {

std::int64_t Rulebook::pair_count() const {
    std::int64_t n = 0;
    for (const auto& t : in) n += static_cast<std::int64_t>(t.size());
    return n;
}

std::uint64_t CoordSet::key(const Coord& c) {
    // 21 bits per axis; lattices here are far smaller.
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.x) & 0x1FFFFF) << 42) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.y) & 0x1FFFFF) << 21) |
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.z) & 0x1FFFFF));
}

CoordSet::CoordSet(std::vector<Coord> coords, Extents3 lattice) : coords_(std::move(coords)), lattice_(lattice) {
    if (lattice_.x <= 0 || lattice_.y <= 0 || lattice_.z <= 0) throw SparseError("lattice extents must be positive");
    index_.reserve(coords_.size() * 2);
    for (std::size_t i = 0; i < coords_.size(); ++i) {
        const auto& c = coords_[i];
        if (!lattice_.contains(c)) {
            throw SparseError(fmt::format("coordinate ({}, {}, {}) outside lattice ({}, {}, {})", c.x, c.y, c.z,
                                          lattice_.x, lattice_.y, lattice_.z));
        }
        if (!index_.emplace(key(c), static_cast<std::int32_t>(i)).second) {
            throw SparseError(fmt::format("duplicate coordinate ({}, {}, {})", c.x, c.y, c.z));
        }
    }
}

std::int32_t CoordSet::find(const Coord& c) const {
    if (!lattice_.contains(c)) return -1;
    auto it = index_.find(key(c));
    return it == index_.end() ? -1 : it->second;
}

std::shared_ptr<const Rulebook> CoordSet::submanifold_rulebook(KernelSize k) const {
    if (k.x % 2 == 0 || k.y % 2 == 0 || k.z % 2 == 0) throw SparseError("submanifold kernels must have odd extents");
    std::lock_guard lock(cache_mutex_);
    if (auto it = submanifold_cache_.find(k); it != submanifold_cache_.end()) return it->second;

    auto rb = std::make_shared<Rulebook>();
    rb->input_rows = size();
    rb->output_rows = size();
    rb->in.resize(static_cast<std::size_t>(k.taps()));
    rb->out.resize(static_cast<std::size_t>(k.taps()));
    const Coord center{k.x / 2, k.y / 2, k.z / 2};
    std::int32_t tap = 0;
    for (std::int32_t ox = 0; ox < k.x; ++ox) {
        for (std::int32_t oy = 0; oy < k.y; ++oy) {
            for (std::int32_t oz = 0; oz < k.z; ++oz, ++tap) {
                auto& in = rb->in[static_cast<std::size_t>(tap)];
                auto& out = rb->out[static_cast<std::size_t>(tap)];
                for (std::size_t row = 0; row < coords_.size(); ++row) {
                    const auto& c = coords_[row];
                    const Coord n{c.x + ox - center.x, c.y + oy - center.y, c.z + oz - center.z};
                    const auto src = find(n);
                    if (src < 0) continue;
                    in.push_back(src);
                    out.push_back(static_cast<std::int32_t>(row));
                }
            }
        }
    }
    submanifold_cache_.emplace(k, rb);
    return rb;
}

const CoordSet::Downsampled& CoordSet::downsample() const {
    std::lock_guard lock(cache_mutex_);
    if (downsampled_) return *downsampled_;

    std::vector<Coord> coarse;
    coarse.reserve(coords_.size());
    for (const auto& c : coords_) coarse.push_back({c.x / 2, c.y / 2, c.z / 2});
    std::sort(coarse.begin(), coarse.end());
    coarse.erase(std::unique(coarse.begin(), coarse.end()), coarse.end());
    auto coarse_set = std::make_shared<CoordSet>(std::move(coarse), lattice_.halved());

    auto rb = std::make_shared<Rulebook>();
    rb->input_rows = size();
    rb->output_rows = coarse_set->size();
    rb->in.resize(8);
    rb->out.resize(8);
    // Walk outputs in order so pairs within a tap are sorted by output row.
    for (std::int32_t row = 0; row < coarse_set->size(); ++row) {
        const auto& p = coarse_set->coords()[static_cast<std::size_t>(row)];
        for (std::int32_t tap = 0; tap < 8; ++tap) {
            const Coord child{2 * p.x + (tap >> 2), 2 * p.y + ((tap >> 1) & 1), 2 * p.z + (tap & 1)};
            const auto src = find(child);
            if (src < 0) continue;
            rb->in[static_cast<std::size_t>(tap)].push_back(src);
            rb->out[static_cast<std::size_t>(tap)].push_back(row);
        }
    }
    downsampled_ = std::make_unique<Downsampled>(Downsampled{std::move(coarse_set), std::move(rb)});
    return *downsampled_;
}

SparseVoxelTensor::SparseVoxelTensor(std::shared_ptr<const CoordSet> coords, Tensor features)
    : coords_(std::move(coords)), features_(std::move(features)) {
    if (!coords_) throw SparseError("null coordinate set");
    if (features_.rank() != 2 || features_.dim(0) != coords_->size()) {
        throw SparseError(fmt::format("feature rows {} do not match {} coordinates", shape_str(features_.shape()),
                                      coords_->size()));
    }
}

SparseVoxelTensor sparse_from_points(std::vector<Coord> coords, const std::vector<std::vector<double>>& features,
                                     Extents3 lattice) {
    if (coords.size() != features.size()) throw SparseError("one feature row per coordinate required");
    const std::size_t dim = features.empty() ? 0 : features.front().size();
    std::vector<double> flat;
    flat.reserve(coords.size() * dim);
    for (const auto& row : features) {
        if (row.size() != dim) throw SparseError("ragged feature rows");
        flat.insert(flat.end(), row.begin(), row.end());
    }
    auto set = std::make_shared<CoordSet>(std::move(coords), lattice);
    const auto n = set->size();
    return {std::move(set), make_tensor({n, static_cast<std::int64_t>(dim)}, std::move(flat))};
}

Tensor sparse_to_dense(const SparseVoxelTensor& t) {
    const auto& lat = t.lattice();
    const auto c = t.feature_dim();
    const auto volume = lat.volume();
    std::vector<std::int32_t> index(static_cast<std::size_t>(c * volume), -1);
    const auto& coords = t.coords();
    for (std::size_t row = 0; row < coords.size(); ++row) {
        const auto& p = coords[row];
        const std::int64_t cell = (std::int64_t{p.x} * lat.y + p.y) * lat.z + p.z;
        for (std::int64_t ch = 0; ch < c; ++ch) {
            index[static_cast<std::size_t>(ch * volume + cell)] = static_cast<std::int32_t>(row * c + ch);
        }
    }
    return ops::gather(t.features(), std::move(index), {c, lat.x, lat.y, lat.z});
}

}  // namespace ssasc
