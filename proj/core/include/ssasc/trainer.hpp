// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssasc/kitti_io.hpp"
#include "ssasc/losses.hpp"
#include "ssasc/metrics.hpp"
#include "ssasc/model.hpp"
#include "ssasc/synthetic.hpp"

namespace ssasc {

struct TrainConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double lr_decay = 0.98;  ///< per epoch
    std::int32_t batch_size = 2;
    std::int32_t epochs = 300;
    std::uint64_t seed = 0;
    bool augment = true;
    double flip_probability = 0.5;
    LossOptions loss;
    /// Validation cadence in epochs (0 disables; the last epoch always runs).
    std::int32_t validate_every = 1;
    /// Metrics on the (unaugmented) training scenes, same cadence rule.
    std::int32_t train_metrics_every = 0;
    bool skip_absent = false;

    /// lr * lr_decay^epoch.
    double lr_at(std::int32_t epoch) const;
    void validate() const;
};

/// One training or evaluation scene.
struct Sample {
    std::string name;
    PointCloud cloud;
    SceneLabelGrid grid;
    VoxelMask invalid;
    /// Per point, same order as the cloud. Empty when unavailable, which
    /// leaves every voxel without segmentation supervision.
    std::vector<std::uint8_t> point_labels;
};

/// Scenes `first .. first+count-1` of the synthetic generator, seeded
/// per scene from `seed`.
std::vector<Sample> synthetic_dataset(const SynthConfig& config, std::uint64_t seed, std::int32_t first,
                                      std::int32_t count);

/// A directory with velodyne/<stem>.bin, voxels/<stem>.label, optional
/// voxels/<stem>.invalid and optional labels/<stem>.label (uint32 per point,
/// low 16 bits the raw class).
std::vector<Sample> load_dataset(const std::filesystem::path& root, const GridSpec& grid, const LabelMap& map,
                                 std::int32_t class_count);

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::int64_t step = 0;
};

class MissingGradientError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// In-place Adam update of every registered parameter with bias correction
/// from the global step. Throws MissingGradientError naming the first
/// parameter that received no gradient.
void adam_step(ParameterSet& params, AdamState& state, double lr, const TrainConfig& config);

/// Mirror the scene about the x and/or y midline of the grid range.
void flip_scene(Sample& sample, const GridSpec& grid, bool flip_x, bool flip_y);
/// Each axis flipped independently with `probability`.
void augment_flip(Sample& sample, const GridSpec& grid, Rng& rng, double probability = 0.5);

struct EpochLog {
    std::int32_t epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0;
    double loss_com = 0.0;
    double loss_seg = 0.0;
    double com_ce = 0.0;
    double com_lovasz = 0.0;
    double seg_ce = 0.0;
    double seg_lovasz = 0.0;
    std::optional<Metrics> val;
    std::optional<Metrics> train;
    double seconds = 0.0;

    std::string to_json() const;
};

class DivergenceError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct TrainOptions {
    /// Receives final.ckpt and best.ckpt when set.
    std::optional<std::filesystem::path> out_dir;
    /// Line-delimited JSON, one record per epoch.
    std::ostream* log = nullptr;
    /// Called after every optimizer step with (epoch, step in epoch, batch loss).
    std::function<void(std::int32_t, std::int32_t, double)> on_step;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    std::optional<Metrics> best_val;
    std::int32_t best_epoch = -1;
};

/// Trains `model` in place. Deterministic for a fixed seed.
TrainResult train(SsaScModel& model, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& config, const TrainOptions& options = {});

/// Aggregate metrics from summed confusion matrices.
Metrics evaluate_model(const SsaScModel& model, const std::vector<Sample>& samples, bool skip_absent = false);

}  // namespace ssasc
