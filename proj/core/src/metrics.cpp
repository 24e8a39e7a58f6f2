// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/metrics.hpp"

#include <fmt/format.h>

#include <json.hpp>

namespace ssasc {

ConfusionMatrix::ConfusionMatrix(std::int32_t class_count)
    : classes_(class_count), counts_(static_cast<std::size_t>(class_count + 1) * static_cast<std::size_t>(class_count + 1), 0) {
    if (class_count < 1) throw std::invalid_argument("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::at(std::int32_t truth, std::int32_t pred) const {
    return counts_.at(static_cast<std::size_t>(truth) * static_cast<std::size_t>(classes_ + 1) + static_cast<std::size_t>(pred));
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

void ConfusionMatrix::add(const SceneLabelGrid& pred, const SceneLabelGrid& truth, const VoxelMask* invalid) {
    if (pred.extents != truth.extents) {
        throw std::invalid_argument(fmt::format("extent mismatch: prediction {}x{}x{}, truth {}x{}x{}", pred.extents.x,
                                                pred.extents.y, pred.extents.z, truth.extents.x, truth.extents.y,
                                                truth.extents.z));
    }
    if (truth.class_count != classes_) {
        throw std::invalid_argument(fmt::format("truth has {} classes, matrix {}", truth.class_count, classes_));
    }
    if (invalid && invalid->extents != truth.extents) throw std::invalid_argument("invalid mask extents differ");
    const auto k = static_cast<std::size_t>(classes_ + 1);
    for (std::size_t i = 0; i < truth.labels.size(); ++i) {
        const auto t = truth.labels[i];
        if (t == kInvalidLabel || t > classes_ || (invalid && invalid->bits[i])) continue;
        auto p = pred.labels[i];
        if (p > classes_) p = kEmptyLabel;
        ++counts_[t * k + p];
    }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw std::invalid_argument("cannot merge confusion matrices of different sizes");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

std::uint64_t ConfusionMatrix::occupied_tp() const {
    std::uint64_t s = 0;
    for (std::int32_t t = 1; t <= classes_; ++t) {
        for (std::int32_t p = 1; p <= classes_; ++p) s += at(t, p);
    }
    return s;
}

std::uint64_t ConfusionMatrix::occupied_fp() const {
    std::uint64_t s = 0;
    for (std::int32_t p = 1; p <= classes_; ++p) s += at(0, p);
    return s;
}

std::uint64_t ConfusionMatrix::occupied_fn() const {
    std::uint64_t s = 0;
    for (std::int32_t t = 1; t <= classes_; ++t) s += at(t, 0);
    return s;
}

std::uint64_t ConfusionMatrix::occupied_tn() const { return at(0, 0); }

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Metrics compute_metrics(const ConfusionMatrix& cm, bool skip_absent) {
    Metrics m;
    const auto tp = cm.occupied_tp();
    const auto fp = cm.occupied_fp();
    const auto fn = cm.occupied_fn();
    m.iou = ratio(tp, tp + fp + fn);
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.valid_voxels = cm.total();
    const auto c = cm.class_count();
    double sum = 0.0;
    std::int32_t counted = 0;
    for (std::int32_t cls = 1; cls <= c; ++cls) {
        std::uint64_t row = 0;
        std::uint64_t col = 0;
        for (std::int32_t j = 0; j <= c; ++j) {
            row += cm.at(cls, j);
            col += cm.at(j, cls);
        }
        const auto tpc = cm.at(cls, cls);
        const double iou = ratio(tpc, row + col - tpc);
        const bool present = row + col > 0;
        m.class_iou.push_back(iou);
        m.class_present.push_back(present ? 1 : 0);
        if (present || !skip_absent) {
            sum += iou;
            ++counted;
        }
    }
    m.miou = counted == 0 ? 0.0 : sum / counted;
    return m;
}

Metrics evaluate(const SceneLabelGrid& pred, const SceneLabelGrid& truth, const VoxelMask* invalid, bool skip_absent) {
    ConfusionMatrix cm(truth.class_count);
    cm.add(pred, truth, invalid);
    return compute_metrics(cm, skip_absent);
}

std::string metrics_table(const Metrics& m, const std::vector<std::string>& class_names) {
    std::string s = fmt::format("iou {:.6f}\nprecision {:.6f}\nrecall {:.6f}\nmiou {:.6f}\n", m.iou, m.precision,
                                m.recall, m.miou);
    for (std::size_t i = 0; i < m.class_iou.size(); ++i) {
        const auto name = i < class_names.size() ? class_names[i] : fmt::format("{}", i + 1);
        s += fmt::format("iou_{} {:.6f}\n", name, m.class_iou[i]);
    }
    return s;
}

std::string metrics_record(const Metrics& m, const std::string& scene) {
    nlohmann::ordered_json j;
    if (!scene.empty()) j["scene"] = scene;
    j["iou"] = m.iou;
    j["precision"] = m.precision;
    j["recall"] = m.recall;
    j["miou"] = m.miou;
    j["class_iou"] = m.class_iou;
    j["valid_voxels"] = m.valid_voxels;
    return j.dump();
}

}  // namespace ssasc
