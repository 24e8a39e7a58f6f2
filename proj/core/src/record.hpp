// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <initializer_list>
#include <utility>

#include "ssasc/tensor.hpp"

namespace ssasc::detail {

inline bool needs_grad(std::initializer_list<const Tensor*> inputs) {
    if (Tape::active() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t != nullptr && t->defined() && t->requires_grad()) return true;
    }
    return false;
}

/// Attach a backward step to `out`. The step receives the output gradient and
/// is skipped when nothing downstream produced one.
template <class Fn>
void record(Tensor& out, Fn&& fn) {
    out.set_requires_grad(true);
    Tape::active()->record([node = out.node(), fn = std::forward<Fn>(fn)]() mutable {
        if (!node->grad_touched) return;
        fn(std::span<const double>(node->grad));
    });
}

/// Gradient buffer of an input, or an empty span when it needs none.
inline std::span<double> grad_of(const std::shared_ptr<TensorNode>& node) {
    if (!node || !node->requires_grad) return {};
    return node->grad_buffer();
}

}  // namespace ssasc::detail
