// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/synthetic.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ssasc/rng.hpp"

namespace ssasc {

namespace {

std::int32_t draw(Rng& rng, std::int32_t lo, std::int32_t hi) {
    return std::uniform_int_distribution<std::int32_t>(lo, std::max(lo, hi))(rng);
}

void fill_box(SceneLabelGrid& g, Coord lo, Coord size, std::uint8_t label) {
    const auto& e = g.extents;
    for (std::int32_t x = std::max(lo.x, 0); x < std::min(lo.x + size.x, e.x); ++x) {
        for (std::int32_t y = std::max(lo.y, 0); y < std::min(lo.y + size.y, e.y); ++y) {
            for (std::int32_t z = std::max(lo.z, 0); z < std::min(lo.z + size.z, e.z); ++z) g.at(x, y, z) = label;
        }
    }
}

enum class Solid { Box, Building, Pole, Wall, Canopy };

void place_object(SceneLabelGrid& g, Rng& rng, std::uint8_t label, Solid shape, std::int32_t keep_out) {
    const auto& e = g.extents;
    const double sxy = std::max(1.0, e.x / 64.0);
    const double sz = std::max(1.0, e.z / 8.0);
    auto xy = [&](std::int32_t lo, std::int32_t hi) {
        return std::max<std::int32_t>(1, static_cast<std::int32_t>(std::lround(draw(rng, lo, hi) * sxy)));
    };
    auto zz = [&](std::int32_t lo, std::int32_t hi) {
        return std::max<std::int32_t>(1, static_cast<std::int32_t>(std::lround(draw(rng, lo, hi) * sz)));
    };
    const std::int32_t top = std::max(1, e.z - 1);
    Coord size{};
    std::int32_t z0 = 1;
    switch (shape) {
        case Solid::Box:
            size = {xy(4, 7), xy(3, 5), zz(2, 3)};
            break;
        case Solid::Building:
            size = {xy(6, 10), xy(6, 10), top};
            break;
        case Solid::Pole:
            size = {1, 1, top};
            break;
        case Solid::Wall:
            size = {xy(1, 2), xy(8, 14), zz(2, 4)};
            if (draw(rng, 0, 1) == 1) std::swap(size.x, size.y);
            break;
        case Solid::Canopy:
            size = {xy(3, 5), xy(3, 5), zz(2, 2)};
            z0 = std::max(1, e.z - size.z - 1);
            break;
    }
    const std::int32_t x0 = draw(rng, keep_out, e.x - size.x);
    const std::int32_t y0 = draw(rng, 0, e.y - size.y);
    fill_box(g, {x0, y0, z0}, size, label);
}

}  // namespace

SyntheticScene generate_synthetic_scene(std::uint64_t seed, const SynthConfig& config) {
    const Extents3 e = config.grid.extents();
    if (e.x < 4 || e.y < 4 || e.z < 2) {
        throw std::invalid_argument(fmt::format("synthetic grid {}x{}x{} is too small", e.x, e.y, e.z));
    }
    if (config.class_count < 3 || (config.object_count > 0 && config.class_count < 4)) {
        throw std::invalid_argument(fmt::format("synthetic scenes need at least {} classes",
                                                config.object_count > 0 ? 4 : 3));
    }
    if (config.class_count > 254) throw std::invalid_argument("class count must fit below the invalid sentinel");
    if (config.beams <= 0 || config.azimuth_steps <= 0) throw std::invalid_argument("sensor needs beams and azimuths");

    Rng rng(stream_seed(seed, {0x5c3e}));
    SyntheticScene scene;
    scene.grid = SceneLabelGrid(e, config.class_count);
    scene.invalid = VoxelMask(e);

    // Ground: three strips across y with jittered borders.
    const std::int32_t b1 = draw(rng, e.y / 4, e.y / 3);
    const std::int32_t b2 = draw(rng, 2 * e.y / 3, 3 * e.y / 4);
    for (std::int32_t x = 0; x < e.x; ++x) {
        for (std::int32_t y = 0; y < e.y; ++y) {
            std::uint8_t g = 3;
            if (y >= b1 && y < b2) g = 1;
            else if ((y >= b1 - 3 && y < b1) || (y >= b2 && y < b2 + 3)) g = 2;
            scene.grid.at(x, y, 0) = g;
        }
    }

    const std::int32_t object_classes = config.class_count - 3;
    const std::int32_t keep_out = std::min(e.x / 8, 4);
    for (std::int32_t i = 0; i < config.object_count; ++i) {
        const std::int32_t cls = 4 + i % object_classes;
        const auto shape = static_cast<Solid>((cls - 4) % 5);
        place_object(scene.grid, rng, static_cast<std::uint8_t>(cls), shape, keep_out);
    }

    // Ray-cast a spinning sensor sitting at the near x edge, mid y.
    const auto& spec = config.grid;
    const double vs = spec.voxel_size;
    const std::array<double, 3> origin{spec.range_min[0] + 0.5 * vs, 0.5 * (spec.range_min[1] + spec.range_max[1]),
                                       spec.range_min[2] + config.sensor_height};
    const double step = vs * 0.25;
    const double max_range = std::hypot(spec.range_max[0] - spec.range_min[0], spec.range_max[1] - spec.range_min[1],
                                        spec.range_max[2] - spec.range_min[2]);
    const double deg = std::numbers::pi / 180.0;
    std::uniform_real_distribution<double> jit(-config.jitter, config.jitter);
    std::normal_distribution<double> rnoise(0.0, 0.03);
    for (std::int32_t b = 0; b < config.beams; ++b) {
        const double t = config.beams == 1 ? 0.5 : static_cast<double>(b) / (config.beams - 1);
        const double el = (config.elevation_min_deg + t * (config.elevation_max_deg - config.elevation_min_deg)) * deg;
        for (std::int32_t a = 0; a < config.azimuth_steps; ++a) {
            const double az = (-90.0 + 180.0 * (a + 0.5) / config.azimuth_steps) * deg;
            const std::array<double, 3> dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
            for (double s = step; s < max_range; s += step) {
                const std::array<double, 3> p{origin[0] + s * dir[0], origin[1] + s * dir[1], origin[2] + s * dir[2]};
                Coord c{};
                bool inside = true;
                for (int k = 0; k < 3; ++k) {
                    if (p[k] < spec.range_min[k] || p[k] >= spec.range_max[k]) inside = false;
                }
                if (!inside) break;
                c = {static_cast<std::int32_t>(std::floor((p[0] - spec.range_min[0]) / vs)),
                     static_cast<std::int32_t>(std::floor((p[1] - spec.range_min[1]) / vs)),
                     static_cast<std::int32_t>(std::floor((p[2] - spec.range_min[2]) / vs))};
                if (!e.contains(c)) break;
                const std::uint8_t label = scene.grid.at(c.x, c.y, c.z);
                if (label == kEmptyLabel) continue;
                const auto ctr = spec.center(c);
                std::array<double, 3> q{};
                for (int k = 0; k < 3; ++k) {
                    const double margin = vs * 1e-3;
                    q[k] = std::clamp(p[k] + jit(rng) * vs, ctr[k] - 0.5 * vs + margin, ctr[k] + 0.5 * vs - margin);
                }
                const double refl =
                    std::clamp(0.1 + 0.8 * label / static_cast<double>(config.class_count) + rnoise(rng), 0.0, 1.0);
                scene.cloud.points.push_back({q[0], q[1], q[2], refl});
                scene.point_labels.push_back(label);
                break;
            }
        }
    }
    return scene;
}

}  // namespace ssasc
