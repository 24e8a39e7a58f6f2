// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/ops.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "record.hpp"
#include "ssasc/rng.hpp"

namespace ssasc::ops {

using detail::grad_of;
using detail::needs_grad;
using detail::record;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()), shape_str(b.shape())));
    }
}

void require_rank2(const Tensor& a, const char* op) {
    if (a.rank() != 2) throw ShapeError(fmt::format("{}: expected rank-2 tensor, got {}", op, shape_str(a.shape())));
}

thread_local bool g_track_kinks = false;
thread_local std::uint64_t g_kink_signature = 0;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    Tensor r = make_tensor(a.shape(), std::move(out));
    if (needs_grad({&a, &b})) {
        record(r, [an = a.node(), bn = b.node()](std::span<const double> g) {
            for (auto* n : {&an, &bn}) {
                auto ga = grad_of(*n);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
            }
        });
    }
    return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    Tensor r = make_tensor(a.shape(), std::move(out));
    if (needs_grad({&a, &b})) {
        record(r, [an = a.node(), bn = b.node()](std::span<const double> g) {
            auto ga = grad_of(an);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bn->value[i];
            auto gb = grad_of(bn);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * an->value[i];
        });
    }
    return r;
}

Tensor scale(const Tensor& a, double s) {
    auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    Tensor r = make_tensor(a.shape(), std::move(out));
    if (needs_grad({&a})) {
        record(r, [an = a.node(), s](std::span<const double> g) {
            auto ga = grad_of(an);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * s;
        });
    }
    return r;
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    Tensor r = make_tensor({1}, {acc});
    if (needs_grad({&a})) {
        record(r, [an = a.node()](std::span<const double> g) {
            auto ga = grad_of(an);
            for (auto& x : ga) x += g[0];
        });
    }
    return r;
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor dot_const(const Tensor& a, std::span<const double> w) {
    if (static_cast<std::int64_t>(w.size()) != a.numel()) throw ShapeError("dot_const: weight length mismatch");
    double acc = 0.0;
    auto av = a.values();
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * w[i];
    Tensor r = make_tensor({1}, {acc});
    if (needs_grad({&a})) {
        record(r, [an = a.node(), w = std::vector<double>(w.begin(), w.end())](std::span<const double> g) {
            auto ga = grad_of(an);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * w[i];
        });
    }
    return r;
}

Tensor relu(const Tensor& a) {
    auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    if (g_track_kinks) {
        for (double v : av) debug::note_branch(v > 0.0 ? 1 : 0);
    }
    Tensor r = make_tensor(a.shape(), std::move(out));
    if (needs_grad({&a})) {
        record(r, [an = a.node()](std::span<const double> g) {
            auto ga = grad_of(an);
            for (std::size_t i = 0; i < ga.size(); ++i) {
                if (an->value[i] > 0.0) ga[i] += g[i];
            }
        });
    }
    return r;
}

Tensor sigmoid(const Tensor& a) {
    auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
    Tensor r = make_tensor(a.shape(), std::move(out));
    if (needs_grad({&a})) {
        record(r, [an = a.node(), rn = r.node()](std::span<const double> g) {
            auto ga = grad_of(an);
            for (std::size_t i = 0; i < ga.size(); ++i) {
                const double s = rn->value[i];
                ga[i] += g[i] * s * (1.0 - s);
            }
        });
    }
    return r;
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError(fmt::format("reshape {} -> {}", shape_str(a.shape()), shape_str(shape)));
    }
    Tensor r = make_tensor(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()));
    if (needs_grad({&a})) {
        record(r, [an = a.node()](std::span<const double> g) {
            auto ga = grad_of(an);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        });
    }
    return r;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank2(x, "linear");
    require_rank2(w, "linear");
    const auto n = x.dim(0);
    const auto in = x.dim(1);
    const auto out_dim = w.dim(0);
    if (w.dim(1) != in) {
        throw ShapeError(fmt::format("linear: input has {} features, weight expects {}", in, w.dim(1)));
    }
    if (b.defined() && b.numel() != out_dim) throw ShapeError("linear: bias length mismatch");

    std::vector<double> out(static_cast<std::size_t>(n * out_dim));
    if (n > 0) {
        MapRow y(out.data(), n, out_dim);
        CMapRow xm(x.values().data(), n, in);
        CMapRow wm(w.values().data(), out_dim, in);
        y.noalias() = xm * wm.transpose();
        if (b.defined()) {
            Eigen::Map<const Eigen::RowVectorXd> bv(b.values().data(), out_dim);
            y.rowwise() += bv;
        }
    }
    Tensor r = make_tensor({n, out_dim}, std::move(out));
    if (needs_grad({&x, &w, &b})) {
        record(r, [xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, n, in,
                   out_dim](std::span<const double> g) {
            CMapRow gy(g.data(), n, out_dim);
            if (auto gx = grad_of(xn); !gx.empty() && n > 0) {
                MapRow gxm(gx.data(), n, in);
                CMapRow wm(wn->value.data(), out_dim, in);
                gxm.noalias() += gy * wm;
            }
            if (auto gw = grad_of(wn); !gw.empty() && n > 0) {
                MapRow gwm(gw.data(), out_dim, in);
                CMapRow xm(xn->value.data(), n, in);
                gwm.noalias() += gy.transpose() * xm;
            }
            if (auto gb = grad_of(bn); !gb.empty() && n > 0) {
                Eigen::Map<Eigen::RowVectorXd> gbv(gb.data(), out_dim);
                gbv += gy.colwise().sum();
            }
        });
    }
    return r;
}

Tensor concat0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat0 of nothing");
    Shape shape = parts.front().shape();
    if (shape.empty()) throw ShapeError("concat0 needs rank >= 1");
    std::int64_t lead = 0;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
            throw ShapeError(fmt::format("concat0: {} does not stack onto {}", shape_str(p.shape()), shape_str(shape)));
        }
        lead += p.dim(0);
        total += static_cast<std::size_t>(p.numel());
    }
    shape[0] = lead;
    std::vector<double> out;
    out.reserve(total);
    bool grad = false;
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
        grad = grad || needs_grad({&p});
    }
    Tensor r = make_tensor(std::move(shape), std::move(out));
    if (grad) {
        std::vector<std::shared_ptr<TensorNode>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        record(r, [nodes = std::move(nodes)](std::span<const double> g) {
            std::size_t offset = 0;
            for (const auto& n : nodes) {
                auto gp = grad_of(n);
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
                offset += n->value.size();
            }
        });
    }
    return r;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols of nothing");
    const auto n = parts.front().dim(0);
    std::int64_t cols = 0;
    bool grad = false;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.dim(0) != n) throw ShapeError("concat_cols: row count mismatch");
        cols += p.dim(1);
        grad = grad || needs_grad({&p});
    }
    std::vector<double> out(static_cast<std::size_t>(n * cols));
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const auto c = p.dim(1);
        auto pv = p.values();
        for (std::int64_t i = 0; i < n; ++i) {
            std::copy_n(pv.begin() + i * c, c, out.begin() + i * cols + offset);
        }
        offset += c;
    }
    Tensor r = make_tensor({n, cols}, std::move(out));
    if (grad) {
        std::vector<std::shared_ptr<TensorNode>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        record(r, [nodes = std::move(nodes), n, cols](std::span<const double> g) {
            std::int64_t off = 0;
            for (const auto& node : nodes) {
                const auto c = node->shape[1];
                if (auto gp = grad_of(node); !gp.empty()) {
                    for (std::int64_t i = 0; i < n; ++i) {
                        for (std::int64_t j = 0; j < c; ++j) gp[i * c + j] += g[i * cols + off + j];
                    }
                }
                off += c;
            }
        });
    }
    return r;
}

Tensor gather(const Tensor& a, std::vector<std::int32_t> index, Shape out_shape) {
    if (shape_numel(out_shape) != static_cast<std::int64_t>(index.size())) {
        throw ShapeError("gather: index length does not match output shape");
    }
    auto av = a.values();
    std::vector<double> out(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto k = index[i];
        if (k >= static_cast<std::int64_t>(av.size())) throw std::out_of_range("gather: index out of range");
        out[i] = k < 0 ? 0.0 : av[static_cast<std::size_t>(k)];
    }
    Tensor r = make_tensor(std::move(out_shape), std::move(out));
    if (needs_grad({&a})) {
        record(r, [an = a.node(), index = std::move(index)](std::span<const double> g) {
            auto ga = grad_of(an);
            for (std::size_t i = 0; i < index.size(); ++i) {
                if (index[i] >= 0) ga[static_cast<std::size_t>(index[i])] += g[i];
            }
        });
    }
    return r;
}

Tensor gather_rows(const Tensor& a, std::vector<std::int32_t> rows) {
    require_rank2(a, "gather_rows");
    const auto n = a.dim(0);
    const auto c = a.dim(1);
    const auto m = static_cast<std::int64_t>(rows.size());
    auto av = a.values();
    std::vector<double> out(static_cast<std::size_t>(m * c), 0.0);
    for (std::int64_t i = 0; i < m; ++i) {
        const auto k = rows[static_cast<std::size_t>(i)];
        if (k >= n) throw std::out_of_range("gather_rows: row out of range");
        if (k >= 0) std::copy_n(av.begin() + k * c, c, out.begin() + i * c);
    }
    Tensor r = make_tensor({m, c}, std::move(out));
    if (needs_grad({&a})) {
        record(r, [an = a.node(), rows = std::move(rows), c](std::span<const double> g) {
            auto ga = grad_of(an);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const auto k = rows[i];
                if (k < 0) continue;
                for (std::int64_t j = 0; j < c; ++j) ga[k * c + j] += g[static_cast<std::int64_t>(i) * c + j];
            }
        });
    }
    return r;
}

Tensor segment_max(const Tensor& x, std::span<const std::int32_t> segment, std::int64_t segments) {
    require_rank2(x, "segment_max");
    const auto n = x.dim(0);
    const auto c = x.dim(1);
    if (static_cast<std::int64_t>(segment.size()) != n) throw ShapeError("segment_max: one segment id per row");
    auto xv = x.values();
    std::vector<double> out(static_cast<std::size_t>(segments * c), 0.0);
    std::vector<std::int32_t> argmax(out.size(), -1);
    for (std::int64_t i = 0; i < n; ++i) {
        const auto s = segment[static_cast<std::size_t>(i)];
        if (s < 0 || s >= segments) throw std::out_of_range("segment_max: segment id out of range");
        for (std::int64_t j = 0; j < c; ++j) {
            const auto o = static_cast<std::size_t>(s * c + j);
            const double v = xv[static_cast<std::size_t>(i * c + j)];
            // Strict comparison keeps the first maximal row.
            if (argmax[o] < 0 || v > out[o]) {
                out[o] = v;
                argmax[o] = static_cast<std::int32_t>(i);
            }
        }
    }
    if (debug::tracking_kinks()) {
        for (auto a : argmax) debug::note_branch(static_cast<std::uint64_t>(a));
    }
    Tensor r = make_tensor({segments, c}, std::move(out));
    if (needs_grad({&x})) {
        record(r, [xn = x.node(), argmax = std::move(argmax), c](std::span<const double> g) {
            auto gx = grad_of(xn);
            for (std::size_t o = 0; o < argmax.size(); ++o) {
                if (argmax[o] < 0) continue;
                gx[static_cast<std::size_t>(argmax[o] * c) + o % static_cast<std::size_t>(c)] += g[o];
            }
        });
    }
    return r;
}

Tensor softmax_rows(const Tensor& x) {
    require_rank2(x, "softmax_rows");
    const auto n = x.dim(0);
    const auto k = x.dim(1);
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::int64_t i = 0; i < n; ++i) {
        const double* row = xv.data() + i * k;
        double* o = out.data() + i * k;
        const double m = *std::max_element(row, row + k);
        double z = 0.0;
        for (std::int64_t j = 0; j < k; ++j) {
            o[j] = std::exp(row[j] - m);
            z += o[j];
        }
        for (std::int64_t j = 0; j < k; ++j) o[j] /= z;
    }
    Tensor r = make_tensor({n, k}, std::move(out));
    if (needs_grad({&x})) {
        record(r, [xn = x.node(), rn = r.node(), n, k](std::span<const double> g) {
            auto gx = grad_of(xn);
            const auto& p = rn->value;
            for (std::int64_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < k; ++j) dot += g[i * k + j] * p[i * k + j];
                for (std::int64_t j = 0; j < k; ++j) gx[i * k + j] += p[i * k + j] * (g[i * k + j] - dot);
            }
        });
    }
    return r;
}

Tensor batch_norm(const Tensor& x, const BatchNormState& bn, ChannelLayout layout, bool training) {
    if (x.rank() < 2) throw ShapeError("batch_norm needs rank >= 2");
    const auto c = bn.gamma.numel();
    std::int64_t count = 0;  // elements per channel
    std::int64_t channel_stride = 0;
    std::int64_t elem_stride = 0;
    if (layout == ChannelLayout::RowsByChannel) {
        if (x.rank() != 2 || x.dim(1) != c) throw ShapeError("batch_norm: [N, C] layout mismatch");
        count = x.dim(0);
        channel_stride = 1;
        elem_stride = c;
    } else {
        if (x.dim(0) != c) throw ShapeError("batch_norm: channel-major layout mismatch");
        count = x.numel() / c;
        channel_stride = count;
        elem_stride = 1;
    }
    auto xv = x.values();
    std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
    std::vector<double> inv_std(static_cast<std::size_t>(c), 0.0);
    const bool use_batch = training && count > 1;
    for (std::int64_t ch = 0; ch < c; ++ch) {
        double m = 0.0;
        double var = 0.0;
        if (use_batch) {
            for (std::int64_t i = 0; i < count; ++i) m += xv[ch * channel_stride + i * elem_stride];
            m /= static_cast<double>(count);
            for (std::int64_t i = 0; i < count; ++i) {
                const double d = xv[ch * channel_stride + i * elem_stride] - m;
                var += d * d;
            }
            var /= static_cast<double>(count);
            auto rm = bn.running_mean.node()->value.data();
            auto rv = bn.running_var.node()->value.data();
            const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
            rm[ch] = (1.0 - bn.momentum) * rm[ch] + bn.momentum * m;
            rv[ch] = (1.0 - bn.momentum) * rv[ch] + bn.momentum * unbiased;
        } else {
            m = bn.running_mean.values()[static_cast<std::size_t>(ch)];
            var = bn.running_var.values()[static_cast<std::size_t>(ch)];
        }
        mean[static_cast<std::size_t>(ch)] = m;
        inv_std[static_cast<std::size_t>(ch)] = 1.0 / std::sqrt(var + bn.eps);
    }
    auto gv = bn.gamma.values();
    auto bv = bn.beta.values();
    std::vector<double> xhat(xv.size());
    std::vector<double> out(xv.size());
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t i = 0; i < count; ++i) {
            const auto o = static_cast<std::size_t>(ch * channel_stride + i * elem_stride);
            xhat[o] = (xv[o] - mean[static_cast<std::size_t>(ch)]) * inv_std[static_cast<std::size_t>(ch)];
            out[o] = gv[static_cast<std::size_t>(ch)] * xhat[o] + bv[static_cast<std::size_t>(ch)];
        }
    }
    Tensor r = make_tensor(x.shape(), std::move(out));
    if (needs_grad({&x, &bn.gamma, &bn.beta})) {
        record(r, [xn = x.node(), gn = bn.gamma.node(), bn_ = bn.beta.node(), xhat = std::move(xhat),
                   inv_std = std::move(inv_std), c, count, channel_stride, elem_stride,
                   use_batch](std::span<const double> g) {
            auto gx = grad_of(xn);
            auto gg = grad_of(gn);
            auto gb = grad_of(bn_);
            const auto& gamma = gn->value;
            for (std::int64_t ch = 0; ch < c; ++ch) {
                double sum_g = 0.0;
                double sum_gx = 0.0;
                for (std::int64_t i = 0; i < count; ++i) {
                    const auto o = static_cast<std::size_t>(ch * channel_stride + i * elem_stride);
                    sum_g += g[o];
                    sum_gx += g[o] * xhat[o];
                }
                if (!gg.empty()) gg[static_cast<std::size_t>(ch)] += sum_gx;
                if (!gb.empty()) gb[static_cast<std::size_t>(ch)] += sum_g;
                if (gx.empty()) continue;
                const double k = gamma[static_cast<std::size_t>(ch)] * inv_std[static_cast<std::size_t>(ch)];
                const double inv_n = 1.0 / static_cast<double>(count);
                for (std::int64_t i = 0; i < count; ++i) {
                    const auto o = static_cast<std::size_t>(ch * channel_stride + i * elem_stride);
                    if (use_batch) {
                        gx[o] += k * (g[o] - inv_n * sum_g - xhat[o] * inv_n * sum_gx);
                    } else {
                        gx[o] += k * g[o];
                    }
                }
            }
        });
    }
    return r;
}

}  // namespace ssasc::ops

namespace ssasc::debug {

void track_kinks(bool on) {
    ops::g_track_kinks = on;
    ops::g_kink_signature = 0;
}

bool tracking_kinks() { return ops::g_track_kinks; }

void note_branch(std::uint64_t choice) {
    if (!ops::g_track_kinks) return;
    ops::g_kink_signature = (ops::g_kink_signature ^ mix64(choice)) * 0x100000001B3ull;
}

std::uint64_t kink_signature() { return ops::g_kink_signature; }

}  // namespace ssasc::debug
