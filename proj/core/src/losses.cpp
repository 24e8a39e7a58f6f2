// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/losses.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "record.hpp"
#include "ssasc/ops.hpp"

namespace ssasc {

using detail::grad_of;
using detail::needs_grad;
using detail::record;

namespace {

bool is_target(std::int32_t t, std::int32_t ignore, std::int64_t k) { return t != ignore && t >= 0 && t < k; }

void check_targets(const Tensor& x, std::span<const std::int32_t> targets, std::int32_t ignore, const char* what) {
    if (x.rank() != 2) throw ShapeError(fmt::format("{}: expected [N, K], got {}", what, shape_str(x.shape())));
    if (static_cast<std::int64_t>(targets.size()) != x.dim(0)) {
        throw ShapeError(fmt::format("{}: {} rows but {} targets", what, x.dim(0), targets.size()));
    }
    for (auto t : targets) {
        if (t != ignore && (t < 0 || t >= x.dim(1))) {
            throw std::invalid_argument(fmt::format("{}: target {} outside 0..{}", what, t, x.dim(1) - 1));
        }
    }
}

/// Jaccard-loss increments along a sorted foreground indicator.
std::vector<double> lovasz_grad(std::span<const std::uint8_t> fg_sorted) {
    const double gts = static_cast<double>(std::count(fg_sorted.begin(), fg_sorted.end(), 1));
    std::vector<double> g(fg_sorted.size());
    double cum_fg = 0.0;
    double cum_bg = 0.0;
    double prev = 0.0;
    for (std::size_t i = 0; i < fg_sorted.size(); ++i) {
        cum_fg += fg_sorted[i];
        cum_bg += 1 - fg_sorted[i];
        const double jac = 1.0 - (gts - cum_fg) / (gts + cum_bg);
        g[i] = jac - prev;
        prev = jac;
    }
    return g;
}

std::vector<std::size_t> sort_desc(std::span<const double> errors) {
    std::vector<std::size_t> order(errors.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
    if (debug::tracking_kinks()) {
        for (auto i : order) debug::note_branch(i);
    }
    return order;
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets, std::int32_t ignore,
                     bool* all_ignored) {
    check_targets(logits, targets, ignore, "cross_entropy");
    const auto n = logits.dim(0);
    const auto k = logits.dim(1);
    const auto x = logits.values();
    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto t = targets[static_cast<std::size_t>(i)];
        if (!is_target(t, ignore, k)) continue;
        const double* row = x.data() + i * k;
        const double m = *std::max_element(row, row + k);
        double s = 0.0;
        for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
        total += m + std::log(s) - row[t];
        ++count;
    }
    if (all_ignored) *all_ignored = count == 0;
    Tensor r = make_tensor({}, {count == 0 ? 0.0 : total / static_cast<double>(count)});
    if (count > 0 && needs_grad({&logits})) {
        std::vector<std::int32_t> t(targets.begin(), targets.end());
        record(r, [xn = logits.node(), t = std::move(t), n, k, ignore, count](std::span<const double> g) {
            auto gx = grad_of(xn);
            const double scale = g[0] / static_cast<double>(count);
            for (std::int64_t i = 0; i < n; ++i) {
                const auto ti = t[static_cast<std::size_t>(i)];
                if (!is_target(ti, ignore, k)) continue;
                const double* row = xn->value.data() + i * k;
                const double m = *std::max_element(row, row + k);
                double s = 0.0;
                for (std::int64_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
                double* grow = gx.data() + i * k;
                for (std::int64_t j = 0; j < k; ++j) grow[j] += scale * (std::exp(row[j] - m) / s - (j == ti ? 1.0 : 0.0));
            }
        });
    }
    return r;
}

double lovasz_class_loss(std::span<const double> errors, std::span<const std::uint8_t> foreground) {
    if (errors.size() != foreground.size()) throw std::invalid_argument("lovasz: errors and labels differ in length");
    const auto order = sort_desc(errors);
    std::vector<std::uint8_t> fg(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) fg[i] = foreground[order[i]];
    const auto g = lovasz_grad(fg);
    double loss = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) loss += errors[order[i]] * g[i];
    return loss;
}

Tensor lovasz_softmax(const Tensor& probs, std::span<const std::int32_t> targets, std::int32_t ignore) {
    check_targets(probs, targets, ignore, "lovasz_softmax");
    const auto n = probs.dim(0);
    const auto k = probs.dim(1);
    const auto p = probs.values();

    std::vector<std::int64_t> rows;
    std::vector<std::uint8_t> present(static_cast<std::size_t>(k), 0);
    for (std::int64_t i = 0; i < n; ++i) {
        const auto t = targets[static_cast<std::size_t>(i)];
        if (!is_target(t, ignore, k)) continue;
        rows.push_back(i);
        present[static_cast<std::size_t>(t)] = 1;
    }
    const auto classes = std::count(present.begin(), present.end(), 1);

    // Per present class: the row of each sorted position and its weight.
    struct ClassTerm {
        std::int64_t cls;
        std::vector<std::int64_t> row;
        std::vector<double> weight;  ///< d loss / d p[row, cls]
    };
    std::vector<ClassTerm> terms;
    double total = 0.0;
    std::vector<double> err(rows.size());
    std::vector<std::uint8_t> fg(rows.size());
    for (std::int64_t c = 0; c < k; ++c) {
        if (!present[static_cast<std::size_t>(c)]) continue;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            fg[r] = targets[static_cast<std::size_t>(rows[r])] == c ? 1 : 0;
            err[r] = std::abs(fg[r] - p[static_cast<std::size_t>(rows[r] * k + c)]);
        }
        const auto order = sort_desc(err);
        std::vector<std::uint8_t> fg_sorted(order.size());
        for (std::size_t i = 0; i < order.size(); ++i) fg_sorted[i] = fg[order[i]];
        const auto g = lovasz_grad(fg_sorted);
        ClassTerm term{c, {}, {}};
        term.row.reserve(order.size());
        term.weight.reserve(order.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            total += err[order[i]] * g[i];
            term.row.push_back(rows[order[i]]);
            term.weight.push_back(fg_sorted[i] ? -g[i] : g[i]);
        }
        terms.push_back(std::move(term));
    }
    const double value = classes == 0 ? 0.0 : total / static_cast<double>(classes);
    Tensor r = make_tensor({}, {value});
    if (classes > 0 && needs_grad({&probs})) {
        record(r, [pn = probs.node(), terms = std::move(terms), k, classes](std::span<const double> g) {
            auto gp = grad_of(pn);
            const double scale = g[0] / static_cast<double>(classes);
            for (const auto& t : terms) {
                for (std::size_t i = 0; i < t.row.size(); ++i) gp[static_cast<std::size_t>(t.row[i] * k + t.cls)] += scale * t.weight[i];
            }
        });
    }
    return r;
}

Tensor completion_rows(const Tensor& completion) {
    if (completion.rank() != 4) throw ShapeError("completion logits must be [K, L, W, H]");
    const auto k = completion.dim(0);
    const auto v = completion.numel() / k;
    std::vector<std::int32_t> index(static_cast<std::size_t>(completion.numel()));
    for (std::int64_t i = 0; i < v; ++i) {
        for (std::int64_t c = 0; c < k; ++c) index[static_cast<std::size_t>(i * k + c)] = static_cast<std::int32_t>(c * v + i);
    }
    return ops::gather(completion, std::move(index), {v, k});
}

std::vector<std::int32_t> completion_targets(const SceneLabelGrid& truth, const VoxelMask* invalid,
                                             bool exclude_invalid) {
    if (invalid && invalid->extents != truth.extents) throw ShapeError("invalid mask extents differ from the grid");
    std::vector<std::int32_t> t(truth.labels.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        const auto l = truth.labels[i];
        const bool masked = exclude_invalid && invalid && invalid->bits[i];
        t[i] = (l == kInvalidLabel || masked) ? kIgnoreIndex : l;
    }
    return t;
}

std::vector<std::int32_t> segmentation_targets(std::span<const std::uint8_t> point_labels, const VoxelAssignment& a) {
    std::vector<std::array<std::uint32_t, 256>> hist(a.voxels.size());
    for (auto& h : hist) h.fill(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto src = static_cast<std::size_t>(a.source[i]);
        if (src >= point_labels.size()) throw std::invalid_argument("point label array shorter than the cloud");
        ++hist[static_cast<std::size_t>(a.point_voxel[i])][point_labels[src]];
    }
    std::vector<std::int32_t> out(a.voxels.size(), kIgnoreIndex);
    for (std::size_t v = 0; v < hist.size(); ++v) {
        const auto& h = hist[v];
        const auto best = std::max_element(h.begin(), h.end()) - h.begin();  // first max = lowest id
        if (best != kEmptyLabel && best != kInvalidLabel) out[v] = static_cast<std::int32_t>(best) - 1;
    }
    return out;
}

LossReport total_loss(const Tensor& completion, const SceneLabelGrid& truth, const VoxelMask* invalid,
                      const Tensor& segmentation, std::span<const std::int32_t> seg_targets,
                      const LossOptions& options) {
    if (completion.rank() != 4 || completion.dim(1) != truth.extents.x || completion.dim(2) != truth.extents.y ||
        completion.dim(3) != truth.extents.z || completion.dim(0) != truth.class_count + 1) {
        throw ShapeError(fmt::format("completion logits {} do not match a {}x{}x{} grid with {} classes",
                                     shape_str(completion.shape()), truth.extents.x, truth.extents.y, truth.extents.z,
                                     truth.class_count));
    }
    LossReport rep;
    const Tensor rows = completion_rows(completion);
    const auto targets = completion_targets(truth, invalid, options.exclude_invalid);
    Tensor com = cross_entropy(rows, targets);
    rep.com_ce = com.item();
    if (options.completion_lovasz) {
        const Tensor lov = lovasz_softmax(ops::softmax_rows(rows), targets);
        rep.com_lovasz = lov.item();
        com = ops::add(com, lov);
    }
    rep.loss_com = com.item();
    Tensor total = ops::scale(com, options.sigma_com);

    if (options.segmentation) {
        if (!segmentation.defined()) throw std::invalid_argument("segmentation loss enabled but no segmentation logits");
        if (segmentation.rank() != 2 || segmentation.dim(1) != truth.class_count) {
            throw ShapeError(fmt::format("segmentation logits {} do not have {} columns", shape_str(segmentation.shape()),
                                         truth.class_count));
        }
        Tensor seg = cross_entropy(segmentation, seg_targets, kIgnoreIndex, &rep.seg_all_ignored);
        rep.seg_ce = seg.item();
        if (options.segmentation_lovasz) {
            const Tensor lov = lovasz_softmax(ops::softmax_rows(segmentation), seg_targets);
            rep.seg_lovasz = lov.item();
            seg = ops::add(seg, lov);
        }
        rep.loss_seg = seg.item();
        total = ops::add(total, ops::scale(seg, options.sigma_seg));
    }
    rep.total = total;
    rep.loss_total = total.item();
    return rep;
}

}  // namespace ssasc
