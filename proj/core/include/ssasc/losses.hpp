// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssasc/kitti_io.hpp"
#include "ssasc/tensor.hpp"
#include "ssasc/voxelizer.hpp"

namespace ssasc {

inline constexpr std::int32_t kIgnoreIndex = -1;

/// Mean of -log softmax(logits)[target] over rows whose target is not
/// `ignore`. logits is [N, K]. When every row is ignored the loss is 0 and
/// `*all_ignored` (if given) is set.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets, std::int32_t ignore = kIgnoreIndex,
                     bool* all_ignored = nullptr);

/// Lovasz extension of the Jaccard loss for one class: errors sorted in
/// decreasing order dotted with the Jaccard gradient of the matching
/// foreground indicators.
double lovasz_class_loss(std::span<const double> errors, std::span<const std::uint8_t> foreground);

/// Multi-class Lovasz-softmax on probabilities [N, K]: mean over the classes
/// present among the non-ignored targets. Zero when nothing is present.
Tensor lovasz_softmax(const Tensor& probs, std::span<const std::int32_t> targets, std::int32_t ignore = kIgnoreIndex);

/// Which terms enter the total. Defaults are the full objective.
struct LossOptions {
    bool completion_lovasz = true;
    bool segmentation = true;
    bool segmentation_lovasz = true;
    /// Drop voxels flagged in the invalid mask from the completion loss.
    /// When off they train on whatever label the grid holds.
    bool exclude_invalid = true;
    double sigma_seg = 0.5;
    double sigma_com = 0.5;
};

struct LossReport {
    Tensor total;  ///< differentiable
    double loss_total = 0.0;
    double loss_com = 0.0;
    double loss_seg = 0.0;
    double com_ce = 0.0;
    double com_lovasz = 0.0;
    double seg_ce = 0.0;
    double seg_lovasz = 0.0;
    bool seg_all_ignored = false;
};

/// Flatten [K, L, W, H] logits into [L*W*H, K] rows in label-grid order.
Tensor completion_rows(const Tensor& completion);

/// Completion targets per voxel (0..C), kIgnoreIndex for 255 and, when
/// requested, masked voxels.
std::vector<std::int32_t> completion_targets(const SceneLabelGrid& truth, const VoxelMask* invalid,
                                             bool exclude_invalid);

/// Per occupied voxel (rows of `a.voxels`), the most frequent label among its
/// points, ties to the lowest id. `point_labels` is indexed by the original
/// cloud index. Voxels whose modal label is empty or invalid get
/// kIgnoreIndex; others get class - 1 (segmentation logits have C columns).
std::vector<std::int32_t> segmentation_targets(std::span<const std::uint8_t> point_labels, const VoxelAssignment& a);

/// sigma_seg * (seg CE + seg lovasz) + sigma_com * (com CE + com lovasz),
/// with terms removed per `options`. `segmentation` may be undefined when
/// the segmentation term is disabled.
LossReport total_loss(const Tensor& completion, const SceneLabelGrid& truth, const VoxelMask* invalid,
                      const Tensor& segmentation, std::span<const std::int32_t> seg_targets,
                      const LossOptions& options = {});

}  // namespace ssasc
