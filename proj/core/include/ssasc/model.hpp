// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ssasc/kitti_io.hpp"
#include "ssasc/nn_ops.hpp"
#include "ssasc/voxelizer.hpp"

namespace ssasc {

struct ModelConfig {
    GridSpec grid = GridSpec::desk();
    std::int32_t class_count = 10;
    std::int64_t feature_dim = 32;  ///< C_f
    std::int64_t fusion_dim = 16;   ///< C_s
    std::array<std::int64_t, 4> widths_2d{32, 64, 128, 256};
    std::array<std::int64_t, 4> widths_3d{32, 64, 128, 256};
    std::int32_t level_count = 4;
    /// 2D levels 1..fusion_levels receive the z-stacked 3D encoder output of
    /// the same resolution.
    std::int32_t fusion_levels = 3;
    /// Build the 3D branch at all. Off gives the 2D-only network.
    bool segmentation_branch = true;
    /// Build the 3D decoder and segmentation head (needed for segmentation
    /// supervision). Never used at inference.
    bool segmentation_decoder = true;
    /// Batch norm after each 2D and sparse 3D conv.
    bool conv_batch_norm = true;
    /// Initial softmax probability of the empty class in every column of the
    /// completion head. 0 keeps the fan-in bias init.
    double empty_prior = 0.85;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument on inconsistent settings.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct ForwardOutput {
    /// [C+1, L, W, H].
    Tensor completion;
    /// [occupied voxels, C]; column k is class k+1. Undefined when the decoder
    /// did not run.
    Tensor segmentation;
    VoxelAssignment assignment;
};

/// Bird's-eye completion UNet fused with a sparse 3D segmentation UNet.
class SsaScModel {
  public:
    explicit SsaScModel(ModelConfig config);
    ~SsaScModel();
    SsaScModel(const SsaScModel&) = delete;
    SsaScModel& operator=(const SsaScModel&) = delete;

    const ModelConfig& config() const { return config_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }
    const PillarEncoder& encoder() const;

    /// Full network including the segmentation decoder when it exists. Mode
    /// selects batch statistics (Train) or running statistics (Eval).
    ForwardOutput forward_train(const PointCloud& cloud, Mode mode = Mode::Train) const;
    /// Completion logits without touching the segmentation decoder.
    ForwardOutput forward_completion(const PointCloud& cloud, Mode mode = Mode::Eval) const;
    /// Eval-mode completion, argmax over C+1 per voxel, ties to the lowest id.
    SceneLabelGrid forward_infer(const PointCloud& cloud) const;

    /// Parameters reachable from forward_infer, in registry order.
    std::vector<std::string> inference_parameter_names() const;
    std::size_t inference_scalar_count() const;

  private:
    struct Net;
    ForwardOutput run(const PointCloud& cloud, Mode mode, bool decoder) const;

    ModelConfig config_;
    ParameterSet params_;
    std::unique_ptr<Net> net_;
};

/// Argmax over the leading (class) axis of [C+1, L, W, H] logits.
SceneLabelGrid argmax_grid(const Tensor& completion, std::int32_t class_count);

class CheckpointError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Magic, format version, canonical config text, then every parameter and
/// buffer as little-endian float64 in registry order.
void save_checkpoint(const SsaScModel& model, const std::filesystem::path& path);
std::unique_ptr<SsaScModel> load_checkpoint(const std::filesystem::path& path);
/// Loads into an existing model; the embedded config must match exactly.
void load_checkpoint_into(SsaScModel& model, const std::filesystem::path& path);
/// Config stored in a checkpoint header, without reading the weights.
ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace ssasc
