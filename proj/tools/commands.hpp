// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssasc/config.hpp"

namespace ssasc::cli {

/// Parses argv and runs one subcommand. Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

using Rgb = std::array<int, 3>;
using Palette = std::map<int, Rgb>;

Palette default_palette();
/// "class r g b" per line, or "class:r,g,b" items separated by spaces.
Palette parse_palette(const std::string& text);

/// One "x y z r g b label" line per occupied voxel, x-major order.
std::size_t export_grid(const SceneLabelGrid& grid, const Palette& palette, std::ostream& out);

struct BenchOptions {
    std::int64_t channels = 16;
    std::int32_t repeats = 5;
    std::vector<std::int64_t> sweep{200, 400, 800, 1600, 3200};
    std::uint64_t seed = 0;
};

/// Op-level report: asymmetric vs full kernel parameter and MAC counts with
/// wall time, a MAC-vs-active-voxel sweep with its linear fit, conv2d and
/// voxelizer timings.
nlohmann::ordered_json bench_report(const RunConfig& config, const BenchOptions& options);

/// Latency summary of repeated forward_infer calls.
struct Latency {
    double median_ms = 0.0;
    double min_ms = 0.0;
    double max_ms = 0.0;
    std::int32_t runs = 0;
};
Latency time_inference(const SsaScModel& model, const PointCloud& cloud, std::int32_t warmup, std::int32_t runs);

/// Peak resident set size in KiB, or -1 when unavailable.
long peak_rss_kib();

}  // namespace ssasc::cli
