// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#include "ssasc/tensor.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace ssasc {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError(fmt::format("negative extent in shape {}", shape_str(shape)));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

std::span<double> TensorNode::grad_buffer() {
    if (!grad_touched) {
        grad.assign(value.size(), 0.0);
        grad_touched = true;
    }
    return grad;
}

Tensor make_tensor(Shape shape, std::vector<double> values) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values) {
    return dense_from_values(std::move(shape), std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
    auto n = static_cast<std::size_t>(shape_numel(shape));
    return make_tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return make_tensor({1}, {v}); }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError(fmt::format("item() on tensor of shape {}", shape_str(shape())));
    return node_->value[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) throw ShapeError("index rank does not match tensor rank");
    std::int64_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i < 0 || i >= s[axis]) throw std::out_of_range("tensor index out of range");
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->value[static_cast<std::size_t>(flat)];
}

Tensor Tensor::detach() const { return make_tensor(shape(), node_->value); }

Tensor dense_from_values(Shape shape, std::vector<double> values) {
    for (auto d : shape) {
        if (d <= 0) throw ShapeError(fmt::format("non-positive extent in shape {}", shape_str(shape)));
    }
    const auto n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(values.size())) {
        throw ShapeError(fmt::format("shape {} needs {} values, got {}", shape_str(shape), n, values.size()));
    }
    return make_tensor(std::move(shape), std::move(values));
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw ShapeError("backward needs a scalar loss");
    }
    if (consumed_) throw std::logic_error("tape already replayed; record a new graph per backward pass");
    consumed_ = true;
    if (!loss.requires_grad()) return;
    auto g = loss.node()->grad_buffer();
    g[0] += 1.0;
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
}

void backward(const Tensor& loss) {
    Tape* tape = Tape::active();
    if (tape == nullptr) throw std::logic_error("backward called with no active tape");
    tape->backward(loss);
}

void ParameterSet::check_unique(const std::string& name) const {
    auto same = [&](const NamedTensor& t) { return t.name == name; };
    if (std::any_of(params_.begin(), params_.end(), same) || std::any_of(buffers_.begin(), buffers_.end(), same)) {
        throw std::invalid_argument(fmt::format("duplicate parameter name '{}'", name));
    }
}

Tensor ParameterSet::add_parameter(std::string name, Shape shape, std::vector<double> values) {
    check_unique(name);
    Tensor t = dense_from_values(std::move(shape), std::move(values));
    t.set_requires_grad(true);
    params_.push_back({std::move(name), t});
    return t;
}

Tensor ParameterSet::add_buffer(std::string name, Shape shape, std::vector<double> values) {
    check_unique(name);
    Tensor t = dense_from_values(std::move(shape), std::move(values));
    buffers_.push_back({std::move(name), t});
    return t;
}

std::size_t ParameterSet::parameter_count() const { return params_.size(); }

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.tensor.numel());
    return n;
}

const Tensor* ParameterSet::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p.tensor;
    }
    for (const auto& b : buffers_) {
        if (b.name == name) return &b.tensor;
    }
    return nullptr;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) {
        p.tensor.node()->grad.clear();
        p.tensor.node()->grad_touched = false;
    }
}

}  // namespace ssasc
