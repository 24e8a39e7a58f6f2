// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssasc/tensor.hpp"

// Differentiable dense operations. Every op records a backward step on the
// active tape when at least one input requires a gradient.
namespace ssasc::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// sum_i a[i] * w[i] with constant weights; handy for projecting outputs to a scalar.
Tensor dot_const(const Tensor& a, std::span<const double> w);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

/// Same values under a new shape.
Tensor reshape(const Tensor& a, Shape shape);

/// x [N, in] * w[out, in]^T + b[out]. Bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Concatenate along the leading axis; trailing extents must agree.
Tensor concat0(const std::vector<Tensor>& parts);
/// Concatenate rank-2 tensors [N, c_i] along columns.
Tensor concat_cols(const std::vector<Tensor>& parts);

/// out.flat[i] = index[i] < 0 ? 0 : a.flat[index[i]].
Tensor gather(const Tensor& a, std::vector<std::int32_t> index, Shape out_shape);
/// Row gather on [N, C]; negative row ids produce zero rows.
Tensor gather_rows(const Tensor& a, std::vector<std::int32_t> rows);

/// Per-segment, per-channel max of x [N, C] into [segments, C]. Segment ids in
/// [0, segments). Empty segments yield 0. The gradient goes to the first row
/// attaining the maximum in each (segment, channel).
Tensor segment_max(const Tensor& x, std::span<const std::int32_t> segment, std::int64_t segments);

/// Row-wise softmax over [N, K].
Tensor softmax_rows(const Tensor& x);

enum class ChannelLayout {
    RowsByChannel,   ///< [N, C]: channel is the fastest axis
    ChannelMajor,    ///< [C, ...]: channel is the leading axis
};

struct BatchNormState {
    Tensor gamma;
    Tensor beta;
    Tensor running_mean;
    Tensor running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Batch normalization. In training mode, normalizes with the batch
/// statistics (biased variance) and updates the running buffers in place
/// with the unbiased variance. In eval mode uses the running buffers.
Tensor batch_norm(const Tensor& x, const BatchNormState& bn, ChannelLayout layout, bool training);

}  // namespace ssasc::ops

namespace ssasc::debug {

/// While enabled, every piecewise op (relu sign, max/argmax choice, sort
/// order) hashes its branch decisions into a per-thread signature in call
/// order. Gradient checks compare signatures to redraw probes that cross a
/// kink. Switching resets the signature.
void track_kinks(bool on);
bool tracking_kinks();
void note_branch(std::uint64_t choice);
std::uint64_t kink_signature();

}  // namespace ssasc::debug
