// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssasc/kitti_io.hpp"

namespace ssasc {

/// (C+1) x (C+1) counts, row = truth, column = prediction, over valid voxels.
class ConfusionMatrix {
  public:
    ConfusionMatrix() = default;
    explicit ConfusionMatrix(std::int32_t class_count);

    std::int32_t class_count() const { return classes_; }
    std::uint64_t at(std::int32_t truth, std::int32_t pred) const;
    std::uint64_t total() const;

    /// Adds every voxel that is neither masked nor labeled invalid in the
    /// truth. Predicted labels outside 0..C count as empty.
    void add(const SceneLabelGrid& pred, const SceneLabelGrid& truth, const VoxelMask* invalid = nullptr);
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;

    /// Binary occupancy counts derived from the matrix.
    std::uint64_t occupied_tp() const;
    std::uint64_t occupied_fp() const;
    std::uint64_t occupied_fn() const;
    std::uint64_t occupied_tn() const;

  private:
    std::int32_t classes_ = 0;
    std::vector<std::uint64_t> counts_;
};

struct Metrics {
    double iou = 0.0;        ///< completion, occupied vs empty
    double precision = 0.0;
    double recall = 0.0;
    double miou = 0.0;       ///< mean over classes 1..C
    std::vector<double> class_iou;  ///< index c-1 holds class c
    std::vector<std::uint8_t> class_present;  ///< class occurs in pred or truth
    std::uint64_t valid_voxels = 0;
};

/// Ratios with a zero denominator are 0. By default every class enters the
/// mean; with `skip_absent` classes absent from both pred and truth are left
/// out of it.
Metrics compute_metrics(const ConfusionMatrix& cm, bool skip_absent = false);

/// Throws std::invalid_argument on extent or class-count mismatch.
Metrics evaluate(const SceneLabelGrid& pred, const SceneLabelGrid& truth, const VoxelMask* invalid = nullptr,
                 bool skip_absent = false);

/// "key value" lines: iou, precision, recall, miou, iou_<class>.
std::string metrics_table(const Metrics& m, const std::vector<std::string>& class_names = {});
/// One JSON object on a single line, `scene` included when non-empty.
std::string metrics_record(const Metrics& m, const std::string& scene = {});

}  // namespace ssasc
