// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "ssasc/ops.hpp"
#include "ssasc/rng.hpp"
#include "ssasc/sparse.hpp"
#include "ssasc/tensor.hpp"

namespace ssasc {

/// Batch-norm behaviour: batch statistics in Train, running statistics in Eval.
enum class Mode { Train, Eval };

/// Uniform fan-in initialization: weights in +-gain*sqrt(6/fan_in), biases in
/// +-1/sqrt(fan_in).
std::vector<double> init_weights(Rng& rng, std::size_t count, std::int64_t fan_in, double gain = 1.0);
std::vector<double> init_bias(Rng& rng, std::size_t count, std::int64_t fan_in);

struct BatchNorm {
    ops::BatchNormState state;

    BatchNorm(ParameterSet& params, const std::string& name, std::int64_t channels);
    Tensor forward(const Tensor& x, ops::ChannelLayout layout, Mode mode) const;
};

struct Linear {
    std::int64_t in = 0;
    std::int64_t out = 0;
    Tensor weight;  ///< [out, in]
    Tensor bias;    ///< [out]

    Linear(ParameterSet& params, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
           bool with_bias = true);
    Tensor forward(const Tensor& x) const { return ops::linear(x, weight, bias); }
};

// ---------------------------------------------------------------------------
// Dense 2D

/// Cross-correlation of x [C, H, W] with w [O, C, k, k] and zero padding.
/// Output extent per axis: floor((in + 2*pad - k)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int32_t stride, std::int32_t padding);
/// 2x2, stride 2. Extents must be even.
Tensor max_pool2d(const Tensor& x);
/// Nearest-neighbour 2x upsampling of [C, H, W].
Tensor upsample_nearest2d(const Tensor& x);

struct Conv2dOptions {
    std::int32_t kernel = 3;
    std::int32_t stride = 1;
    std::int32_t padding = 1;
    bool bias = true;
    bool batch_norm = false;
    bool relu = true;
};

struct Conv2dLayer {
    std::int64_t in_ch = 0;
    std::int64_t out_ch = 0;
    Conv2dOptions options;
    Tensor weight;  ///< [out, in, k, k]
    Tensor bias;
    std::optional<BatchNorm> bn;

    Conv2dLayer(ParameterSet& params, const std::string& name, std::int64_t in_ch, std::int64_t out_ch, Rng& rng,
                Conv2dOptions options = {});
    Tensor forward(const Tensor& x, Mode mode) const;
};

// ---------------------------------------------------------------------------
// Sparse 3D

enum class SparseConvMode {
    Submanifold,  ///< outputs on the input coordinate set, odd centered kernel
    Strided,      ///< 2x2x2 stride 2 onto the floor-halved coordinate set
    Inverse,      ///< transpose of Strided: coarse rows back onto the fine set
};

/// Gather-GEMM-scatter over a rulebook. weight is [taps, in, out]. When
/// `transpose` is set, the rulebook's input and output roles swap. Output rows
/// accumulate bias first, then taps in ascending order.
Tensor sparse_conv_features(const Tensor& features, std::shared_ptr<const Rulebook> rulebook, const Tensor& weight,
                            const Tensor& bias, bool transpose);

struct SparseConvOptions {
    SparseConvMode mode = SparseConvMode::Submanifold;
    KernelSize kernel{3, 3, 3};
    bool bias = true;
    bool batch_norm = false;
    bool relu = true;
    double init_gain = 1.0;
};

struct SparseConv3dLayer {
    std::int64_t in_ch = 0;
    std::int64_t out_ch = 0;
    SparseConvOptions options;
    Tensor weight;  ///< [taps, in, out]
    Tensor bias;
    std::optional<BatchNorm> bn;

    SparseConv3dLayer(ParameterSet& params, const std::string& name, std::int64_t in_ch, std::int64_t out_ch,
                      Rng& rng, SparseConvOptions options);

    std::int64_t kernel_weight_count() const { return weight.numel(); }

    /// Submanifold and strided modes.
    SparseVoxelTensor forward(const SparseVoxelTensor& x, Mode mode) const;
    /// Inverse mode: scatter `coarse` onto `fine_set`, whose downsampled set
    /// must be exactly coarse's set.
    SparseVoxelTensor forward_inverse(const SparseVoxelTensor& coarse, const std::shared_ptr<const CoordSet>& fine_set,
                                      Mode mode) const;

  private:
    Tensor finish(Tensor features, Mode mode) const;
};

SparseVoxelTensor sparse_conv3d(const SparseVoxelTensor& input, const SparseConv3dLayer& layer, Mode mode = Mode::Eval);

struct BlockOptions {
    bool batch_norm = false;
    /// Gain on the second conv of each residual path.
    double residual_gain = 0.1;
};

/// Two mirrored asymmetric paths (3x1x3 then 1x3x3, and 1x3x3 then 3x1x3)
/// summed with the identity: out = x + A(x) + B(x).
struct AsymResidualBlock {
    std::int64_t channels = 0;
    SparseConv3dLayer a1, a2, b1, b2;

    AsymResidualBlock(ParameterSet& params, const std::string& name, std::int64_t channels, Rng& rng,
                      BlockOptions options = {});
    SparseVoxelTensor forward(const SparseVoxelTensor& x, Mode mode) const;
    std::int64_t kernel_weight_count() const;
};

/// Asymmetric residual block, then a strided conv to half resolution.
struct AsymDownBlock {
    AsymResidualBlock residual;
    SparseConv3dLayer down;

    AsymDownBlock(ParameterSet& params, const std::string& name, std::int64_t in_ch, std::int64_t out_ch, Rng& rng,
                  BlockOptions options = {});
    SparseVoxelTensor forward(const SparseVoxelTensor& x, Mode mode) const;
};

/// Inverse conv of the coarse features onto the skip's coordinates, added to
/// the skip features, then an asymmetric residual block.
struct AsymUpBlock {
    SparseConv3dLayer up;
    AsymResidualBlock residual;

    AsymUpBlock(ParameterSet& params, const std::string& name, std::int64_t coarse_ch, std::int64_t skip_ch, Rng& rng,
                BlockOptions options = {});
    SparseVoxelTensor forward(const SparseVoxelTensor& coarse, const SparseVoxelTensor& skip, Mode mode) const;
};

/// out = x + sum over axes of sigmoid(conv_axis(x)) * x, with 3x1x1, 1x3x1
/// and 1x1x3 kernels.
struct DdcmBlock {
    SparseConv3dLayer cx, cy, cz;

    DdcmBlock(ParameterSet& params, const std::string& name, std::int64_t channels, Rng& rng,
              BlockOptions options = {});
    SparseVoxelTensor forward(const SparseVoxelTensor& x, Mode mode) const;
};

SparseVoxelTensor asym_residual(const SparseVoxelTensor& x, const AsymResidualBlock& block, Mode mode = Mode::Eval);
SparseVoxelTensor asym_downsample(const SparseVoxelTensor& x, const AsymDownBlock& block, Mode mode = Mode::Eval);
SparseVoxelTensor asym_upsample(const SparseVoxelTensor& x, const SparseVoxelTensor& skip, const AsymUpBlock& block,
                                Mode mode = Mode::Eval);
SparseVoxelTensor ddcm(const SparseVoxelTensor& x, const DdcmBlock& block, Mode mode = Mode::Eval);

/// Elementwise sum of two tensors on the same coordinate set.
SparseVoxelTensor sparse_add(const SparseVoxelTensor& a, const SparseVoxelTensor& b);

}  // namespace ssasc
