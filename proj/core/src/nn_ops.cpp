// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/nn_ops.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <cmath>

#include "record.hpp"

namespace ssasc {

using detail::grad_of;
using detail::needs_grad;
using detail::record;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

struct ConvGeometry {
    std::int64_t c, h, w, o, k, stride, pad, ho, wo;
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const auto spatial = g.ho * g.wo;
    for (std::int64_t ci = 0; ci < g.c; ++ci) {
        for (std::int64_t ky = 0; ky < g.k; ++ky) {
            for (std::int64_t kx = 0; kx < g.k; ++kx) {
                double* row = cols + ((ci * g.k + ky) * g.k + kx) * spatial;
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = oy * g.stride + ky - g.pad;
                    double* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    const double* src = x + (ci * g.h + iy) * g.w;
                    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix = ox * g.stride + kx - g.pad;
                        dst[ox] = (ix < 0 || ix >= g.w) ? 0.0 : src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
    const auto spatial = g.ho * g.wo;
    for (std::int64_t ci = 0; ci < g.c; ++ci) {
        for (std::int64_t ky = 0; ky < g.k; ++ky) {
            for (std::int64_t kx = 0; kx < g.k; ++kx) {
                const double* row = cols + ((ci * g.k + ky) * g.k + kx) * spatial;
                for (std::int64_t oy = 0; oy < g.ho; ++oy) {
                    const auto iy = oy * g.stride + ky - g.pad;
                    if (iy < 0 || iy >= g.h) continue;
                    double* dst = dx + (ci * g.h + iy) * g.w;
                    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
                        const auto ix = ox * g.stride + kx - g.pad;
                        if (ix >= 0 && ix < g.w) dst[ix] += row[oy * g.wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

std::vector<double> init_weights(Rng& rng, std::size_t count, std::int64_t fan_in, double gain) {
    const double bound = gain * std::sqrt(6.0 / static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
    std::vector<double> v(count);
    for (auto& x : v) x = uniform(rng, -bound, bound);
    return v;
}

std::vector<double> init_bias(Rng& rng, std::size_t count, std::int64_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
    std::vector<double> v(count);
    for (auto& x : v) x = uniform(rng, -bound, bound);
    return v;
}

BatchNorm::BatchNorm(ParameterSet& params, const std::string& name, std::int64_t channels) {
    const auto n = static_cast<std::size_t>(channels);
    state.gamma = params.add_parameter(name + ".gamma", {channels}, std::vector<double>(n, 1.0));
    state.beta = params.add_parameter(name + ".beta", {channels}, std::vector<double>(n, 0.0));
    state.running_mean = params.add_buffer(name + ".running_mean", {channels}, std::vector<double>(n, 0.0));
    state.running_var = params.add_buffer(name + ".running_var", {channels}, std::vector<double>(n, 1.0));
}

Tensor BatchNorm::forward(const Tensor& x, ops::ChannelLayout layout, Mode mode) const {
    return ops::batch_norm(x, state, layout, mode == Mode::Train);
}

Linear::Linear(ParameterSet& params, const std::string& name, std::int64_t in_dim, std::int64_t out_dim, Rng& rng,
               bool with_bias)
    : in(in_dim), out(out_dim) {
    weight = params.add_parameter(name + ".weight", {out, in},
                                  init_weights(rng, static_cast<std::size_t>(out * in), in));
    if (with_bias) bias = params.add_parameter(name + ".bias", {out}, init_bias(rng, static_cast<std::size_t>(out), in));
}

// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::int32_t stride, std::int32_t padding) {
    if (x.rank() != 3) throw ShapeError(fmt::format("conv2d: input must be [C, H, W], got {}", shape_str(x.shape())));
    if (w.rank() != 4 || w.dim(2) != w.dim(3)) throw ShapeError("conv2d: weight must be [O, C, k, k]");
    if (w.dim(1) != x.dim(0)) {
        throw ShapeError(fmt::format("conv2d: channel mismatch, input has {} channels, kernel expects {}", x.dim(0),
                                     w.dim(1)));
    }
    ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), stride, padding, 0, 0};
    g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
    if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");
    if (b.defined() && b.numel() != g.o) throw ShapeError("conv2d: bias length mismatch");

    const auto spatial = g.ho * g.wo;
    const auto patch = g.c * g.k * g.k;
    std::vector<double> cols(static_cast<std::size_t>(patch * spatial));
    im2col(x.values().data(), g, cols.data());

    std::vector<double> out(static_cast<std::size_t>(g.o * spatial));
    MapRow y(out.data(), g.o, spatial);
    CMapRow wm(w.values().data(), g.o, patch);
    CMapRow cm(cols.data(), patch, spatial);
    y.noalias() = wm * cm;
    if (b.defined()) {
        Eigen::Map<const Eigen::VectorXd> bv(b.values().data(), g.o);
        y.colwise() += bv;
    }
    cols = {};

    Tensor r = make_tensor({g.o, g.ho, g.wo}, std::move(out));
    if (needs_grad({&x, &w, &b})) {
        record(r, [xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, g](std::span<const double> gout) {
            const auto spatial = g.ho * g.wo;
            const auto patch = g.c * g.k * g.k;
            CMapRow gy(gout.data(), g.o, spatial);
            if (auto gb = grad_of(bn); !gb.empty()) {
                Eigen::Map<Eigen::VectorXd> gbv(gb.data(), g.o);
                gbv += gy.rowwise().sum();
            }
            auto gw = grad_of(wn);
            auto gx = grad_of(xn);
            if (gw.empty() && gx.empty()) return;
            std::vector<double> cols(static_cast<std::size_t>(patch * spatial));
            if (!gw.empty()) {
                im2col(xn->value.data(), g, cols.data());
                MapRow gwm(gw.data(), g.o, patch);
                CMapRow cm(cols.data(), patch, spatial);
                gwm.noalias() += gy * cm.transpose();
            }
            if (!gx.empty()) {
                MapRow dcols(cols.data(), patch, spatial);
                CMapRow wm(wn->value.data(), g.o, patch);
                dcols.noalias() = wm.transpose() * gy;
                col2im_add(cols.data(), g, gx.data());
            }
        });
    }
    return r;
}

Tensor max_pool2d(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("max_pool2d: input must be [C, H, W]");
    const auto c = x.dim(0);
    const auto h = x.dim(1);
    const auto w = x.dim(2);
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError(fmt::format("max_pool2d: odd extents {}", shape_str(x.shape())));
    const auto ho = h / 2;
    const auto wo = w / 2;
    auto xv = x.values();
    std::vector<double> out(static_cast<std::size_t>(c * ho * wo));
    std::vector<std::int32_t> arg(out.size());
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                std::int64_t best = (ch * h + 2 * oy) * w + 2 * ox;
                for (std::int64_t dy = 0; dy < 2; ++dy) {
                    for (std::int64_t dx = 0; dx < 2; ++dx) {
                        const auto idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
                        if (xv[static_cast<std::size_t>(idx)] > xv[static_cast<std::size_t>(best)]) best = idx;
                    }
                }
                const auto o = static_cast<std::size_t>((ch * ho + oy) * wo + ox);
                out[o] = xv[static_cast<std::size_t>(best)];
                arg[o] = static_cast<std::int32_t>(best);
            }
        }
    }
    if (debug::tracking_kinks()) {
        for (auto a : arg) debug::note_branch(static_cast<std::uint64_t>(a));
    }
    Tensor r = make_tensor({c, ho, wo}, std::move(out));
    if (needs_grad({&x})) {
        record(r, [xn = x.node(), arg = std::move(arg)](std::span<const double> g) {
            auto gx = grad_of(xn);
            for (std::size_t o = 0; o < arg.size(); ++o) gx[static_cast<std::size_t>(arg[o])] += g[o];
        });
    }
    return r;
}

Tensor upsample_nearest2d(const Tensor& x) {
    if (x.rank() != 3) throw ShapeError("upsample_nearest2d: input must be [C, H, W]");
    const auto c = x.dim(0);
    const auto h = x.dim(1);
    const auto w = x.dim(2);
    std::vector<std::int32_t> index(static_cast<std::size_t>(c * 4 * h * w));
    std::size_t o = 0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t y = 0; y < 2 * h; ++y) {
            for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
                index[o++] = static_cast<std::int32_t>((ch * h + y / 2) * w + xx / 2);
            }
        }
    }
    return ops::gather(x, std::move(index), {c, 2 * h, 2 * w});
}

Conv2dLayer::Conv2dLayer(ParameterSet& params, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
                         Conv2dOptions opts)
    : in_ch(in), out_ch(out), options(opts) {
    const auto k = options.kernel;
    const auto fan_in = in * k * k;
    weight = params.add_parameter(name + ".weight", {out, in, k, k},
                                  init_weights(rng, static_cast<std::size_t>(out * fan_in), fan_in));
    if (options.bias) bias = params.add_parameter(name + ".bias", {out}, init_bias(rng, static_cast<std::size_t>(out), fan_in));
    if (options.batch_norm) bn.emplace(params, name + ".bn", out);
}

Tensor Conv2dLayer::forward(const Tensor& x, Mode mode) const {
    Tensor y = conv2d(x, weight, bias, options.stride, options.padding);
    if (bn) y = bn->forward(y, ops::ChannelLayout::ChannelMajor, mode);
    if (options.relu) y = ops::relu(y);
    return y;
}

// ---------------------------------------------------------------------------

Tensor sparse_conv_features(const Tensor& features, std::shared_ptr<const Rulebook> rb, const Tensor& weight,
                            const Tensor& bias, bool transpose) {
    const Rulebook& rulebook = *rb;
    if (features.rank() != 2) throw ShapeError("sparse conv: features must be [N, C]");
    if (weight.rank() != 3) throw ShapeError("sparse conv: weight must be [taps, in, out]");
    const auto taps = weight.dim(0);
    const auto cin = weight.dim(1);
    const auto cout = weight.dim(2);
    if (features.dim(1) != cin) {
        throw ShapeError(fmt::format("sparse conv: channel mismatch, input has {} channels, kernel expects {}",
                                     features.dim(1), cin));
    }
    if (static_cast<std::int64_t>(rulebook.in.size()) != taps) throw ShapeError("sparse conv: rulebook tap count mismatch");
    const auto n_in = transpose ? rulebook.output_rows : rulebook.input_rows;
    const auto n_out = transpose ? rulebook.input_rows : rulebook.output_rows;
    if (features.dim(0) != n_in) throw ShapeError("sparse conv: feature rows do not match the rulebook");
    const auto& src_rows = transpose ? rulebook.out : rulebook.in;
    const auto& dst_rows = transpose ? rulebook.in : rulebook.out;

    std::vector<double> out(static_cast<std::size_t>(n_out * cout), 0.0);
    if (bias.defined()) {
        auto bv = bias.values();
        for (std::int64_t i = 0; i < n_out; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * cout);
    }
    auto xv = features.values();
    RowMat gathered;
    RowMat product;
    for (std::int64_t t = 0; t < taps; ++t) {
        const auto& src = src_rows[static_cast<std::size_t>(t)];
        const auto& dst = dst_rows[static_cast<std::size_t>(t)];
        const auto n = static_cast<std::int64_t>(src.size());
        if (n == 0) continue;
        gathered.resize(n, cin);
        for (std::int64_t i = 0; i < n; ++i) {
            std::copy_n(xv.begin() + src[static_cast<std::size_t>(i)] * cin, cin, gathered.row(i).data());
        }
        CMapRow wt(weight.values().data() + t * cin * cout, cin, cout);
        product.noalias() = gathered * wt;
        for (std::int64_t i = 0; i < n; ++i) {
            double* o = out.data() + dst[static_cast<std::size_t>(i)] * cout;
            const double* p = product.row(i).data();
            for (std::int64_t j = 0; j < cout; ++j) o[j] += p[j];
        }
    }

    Tensor r = make_tensor({n_out, cout}, std::move(out));
    if (needs_grad({&features, &weight, &bias})) {
        record(r, [xn = features.node(), wn = weight.node(), bn = bias.defined() ? bias.node() : nullptr, rb, transpose,
                   taps, cin, cout, n_out](std::span<const double> g) {
            const auto& src_rows = transpose ? rb->out : rb->in;
            const auto& dst_rows = transpose ? rb->in : rb->out;
            if (auto gb = grad_of(bn); !gb.empty()) {
                for (std::int64_t i = 0; i < n_out; ++i) {
                    for (std::int64_t j = 0; j < cout; ++j) gb[static_cast<std::size_t>(j)] += g[i * cout + j];
                }
            }
            auto gw = grad_of(wn);
            auto gx = grad_of(xn);
            RowMat gathered, gy, dx;
            for (std::int64_t t = 0; t < taps; ++t) {
                const auto& src = src_rows[static_cast<std::size_t>(t)];
                const auto& dst = dst_rows[static_cast<std::size_t>(t)];
                const auto n = static_cast<std::int64_t>(src.size());
                if (n == 0) continue;
                gy.resize(n, cout);
                for (std::int64_t i = 0; i < n; ++i) {
                    std::copy_n(g.begin() + dst[static_cast<std::size_t>(i)] * cout, cout, gy.row(i).data());
                }
                if (!gw.empty()) {
                    gathered.resize(n, cin);
                    for (std::int64_t i = 0; i < n; ++i) {
                        std::copy_n(xn->value.begin() + src[static_cast<std::size_t>(i)] * cin, cin,
                                    gathered.row(i).data());
                    }
                    MapRow gwt(gw.data() + t * cin * cout, cin, cout);
                    gwt.noalias() += gathered.transpose() * gy;
                }
                if (!gx.empty()) {
                    CMapRow wt(wn->value.data() + t * cin * cout, cin, cout);
                    dx.noalias() = gy * wt.transpose();
                    for (std::int64_t i = 0; i < n; ++i) {
                        double* o = gx.data() + src[static_cast<std::size_t>(i)] * cin;
                        const double* p = dx.row(i).data();
                        for (std::int64_t j = 0; j < cin; ++j) o[j] += p[j];
                    }
                }
            }
        });
    }
    return r;
}

SparseConv3dLayer::SparseConv3dLayer(ParameterSet& params, const std::string& name, std::int64_t in,
                                     std::int64_t out, Rng& rng, SparseConvOptions opts)
    : in_ch(in), out_ch(out), options(opts) {
    if (options.mode != SparseConvMode::Submanifold) options.kernel = {2, 2, 2};
    const auto taps = options.kernel.taps();
    // An inverse conv sees exactly one tap per output voxel.
    const auto fan_in = options.mode == SparseConvMode::Inverse ? in : in * taps;
    weight = params.add_parameter(name + ".weight", {taps, in, out},
                                  init_weights(rng, static_cast<std::size_t>(taps * in * out), fan_in, options.init_gain));
    if (options.bias) bias = params.add_parameter(name + ".bias", {out}, init_bias(rng, static_cast<std::size_t>(out), fan_in));
    if (options.batch_norm) bn.emplace(params, name + ".bn", out);
}

Tensor SparseConv3dLayer::finish(Tensor y, Mode mode) const {
    if (bn) y = bn->forward(y, ops::ChannelLayout::RowsByChannel, mode);
    if (options.relu) y = ops::relu(y);
    return y;
}

SparseVoxelTensor SparseConv3dLayer::forward(const SparseVoxelTensor& x, Mode mode) const {
    switch (options.mode) {
        case SparseConvMode::Submanifold: {
            auto rb = x.coord_set().submanifold_rulebook(options.kernel);
            return x.with_features(finish(sparse_conv_features(x.features(), rb, weight, bias, false), mode));
        }
        case SparseConvMode::Strided: {
            const auto& down = x.coord_set().downsample();
            return {down.coarse, finish(sparse_conv_features(x.features(), down.rulebook, weight, bias, false), mode)};
        }
        case SparseConvMode::Inverse:
            break;
    }
    throw std::logic_error("inverse sparse conv needs a target coordinate set; use forward_inverse");
}

SparseVoxelTensor SparseConv3dLayer::forward_inverse(const SparseVoxelTensor& coarse,
                                                     const std::shared_ptr<const CoordSet>& fine_set, Mode mode) const {
    if (options.mode != SparseConvMode::Inverse) throw std::logic_error("forward_inverse on a non-inverse layer");
    const auto& down = fine_set->downsample();
    if (down.coarse != coarse.coord_set_ptr()) {
        throw SparseError("upsample level mismatch: coarse tensor is not the downsampled set of the skip level");
    }
    return {fine_set, finish(sparse_conv_features(coarse.features(), down.rulebook, weight, bias, true), mode)};
}

SparseVoxelTensor sparse_conv3d(const SparseVoxelTensor& input, const SparseConv3dLayer& layer, Mode mode) {
    return layer.forward(input, mode);
}

SparseVoxelTensor sparse_add(const SparseVoxelTensor& a, const SparseVoxelTensor& b) {
    if (a.coord_set_ptr() != b.coord_set_ptr()) throw SparseError("sparse_add: tensors live on different coordinate sets");
    return a.with_features(ops::add(a.features(), b.features()));
}

namespace {

SparseConvOptions sub(KernelSize k, bool relu, const BlockOptions& o, double gain = 1.0) {
    SparseConvOptions s;
    s.mode = SparseConvMode::Submanifold;
    s.kernel = k;
    s.relu = relu;
    s.batch_norm = o.batch_norm;
    s.init_gain = gain;
    return s;
}

constexpr KernelSize k313{3, 1, 3};
constexpr KernelSize k133{1, 3, 3};

}  // namespace

AsymResidualBlock::AsymResidualBlock(ParameterSet& params, const std::string& name, std::int64_t ch, Rng& rng,
                                     BlockOptions o)
    : channels(ch),
      a1(params, name + ".a1", ch, ch, rng, sub(k313, true, o)),
      a2(params, name + ".a2", ch, ch, rng, sub(k133, false, o, o.residual_gain)),
      b1(params, name + ".b1", ch, ch, rng, sub(k133, true, o)),
      b2(params, name + ".b2", ch, ch, rng, sub(k313, false, o, o.residual_gain)) {}

SparseVoxelTensor AsymResidualBlock::forward(const SparseVoxelTensor& x, Mode mode) const {
    if (x.feature_dim() != channels) {
        throw ShapeError(fmt::format("asymmetric residual block: channel mismatch, input has {} channels, block has {}",
                                     x.feature_dim(), channels));
    }
    const auto a = a2.forward(a1.forward(x, mode), mode);
    const auto b = b2.forward(b1.forward(x, mode), mode);
    return x.with_features(ops::add(ops::add(x.features(), a.features()), b.features()));
}

std::int64_t AsymResidualBlock::kernel_weight_count() const {
    return a1.kernel_weight_count() + a2.kernel_weight_count() + b1.kernel_weight_count() + b2.kernel_weight_count();
}

AsymDownBlock::AsymDownBlock(ParameterSet& params, const std::string& name, std::int64_t in, std::int64_t out,
                             Rng& rng, BlockOptions o)
    : residual(params, name + ".res", in, rng, o),
      down(params, name + ".down", in, out, rng, [&] {
          SparseConvOptions s;
          s.mode = SparseConvMode::Strided;
          s.batch_norm = o.batch_norm;
          return s;
      }()) {}

SparseVoxelTensor AsymDownBlock::forward(const SparseVoxelTensor& x, Mode mode) const {
    return down.forward(residual.forward(x, mode), mode);
}

AsymUpBlock::AsymUpBlock(ParameterSet& params, const std::string& name, std::int64_t coarse_ch, std::int64_t skip_ch,
                         Rng& rng, BlockOptions o)
    : up(params, name + ".up", coarse_ch, skip_ch, rng, [&] {
          SparseConvOptions s;
          s.mode = SparseConvMode::Inverse;
          s.bias = false;
          s.relu = false;
          s.batch_norm = false;
          return s;
      }()),
      residual(params, name + ".res", skip_ch, rng, o) {}

SparseVoxelTensor AsymUpBlock::forward(const SparseVoxelTensor& coarse, const SparseVoxelTensor& skip, Mode mode) const {
    if (skip.feature_dim() != up.out_ch) throw ShapeError("asymmetric upsample: skip channel mismatch");
    const auto lifted = up.forward_inverse(coarse, skip.coord_set_ptr(), mode);
    return residual.forward(sparse_add(lifted, skip), mode);
}

DdcmBlock::DdcmBlock(ParameterSet& params, const std::string& name, std::int64_t ch, Rng& rng, BlockOptions o)
    : cx(params, name + ".x", ch, ch, rng, sub({3, 1, 1}, false, o)),
      cy(params, name + ".y", ch, ch, rng, sub({1, 3, 1}, false, o)),
      cz(params, name + ".z", ch, ch, rng, sub({1, 1, 3}, false, o)) {}

SparseVoxelTensor DdcmBlock::forward(const SparseVoxelTensor& x, Mode mode) const {
    Tensor out = x.features();
    for (const auto* conv : {&cx, &cy, &cz}) {
        const auto gate = ops::sigmoid(conv->forward(x, mode).features());
        out = ops::add(out, ops::mul(gate, x.features()));
    }
    return x.with_features(out);
}

SparseVoxelTensor asym_residual(const SparseVoxelTensor& x, const AsymResidualBlock& block, Mode mode) {
    return block.forward(x, mode);
}

SparseVoxelTensor asym_downsample(const SparseVoxelTensor& x, const AsymDownBlock& block, Mode mode) {
    return block.forward(x, mode);
}

SparseVoxelTensor asym_upsample(const SparseVoxelTensor& x, const SparseVoxelTensor& skip, const AsymUpBlock& block,
                                Mode mode) {
    return block.forward(x, skip, mode);
}

SparseVoxelTensor ddcm(const SparseVoxelTensor& x, const DdcmBlock& block, Mode mode) { return block.forward(x, mode); }

}  // namespace ssasc
