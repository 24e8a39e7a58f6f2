// Copyright Contributors to the ssasc Project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssasc {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Storage behind a Tensor handle. Gradient storage is allocated lazily, the
/// first time something accumulates into it.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool grad_touched = false;

    std::span<double> grad_buffer();
};

/// Dense row-major 64-bit tensor with value semantics for the handle and
/// shared storage. Copies alias the same node, the way autograd frameworks do.
class Tensor {
  public:
    Tensor() = default;

    static Tensor from_values(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

    std::span<const double> values() const { return node_->value; }
    /// Direct write access; only meaningful for leaves (parameters, inputs).
    std::span<double> mutable_values() { return node_->value; }
    double item() const;
    double at(std::initializer_list<std::int64_t> index) const;

    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    std::span<const double> grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad_touched; }

    const std::shared_ptr<TensorNode>& node() const { return node_; }

    /// Fresh leaf holding a copy of the values, outside any graph.
    Tensor detach() const;

  private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;

    friend Tensor make_tensor(Shape, std::vector<double>);
};

Tensor make_tensor(Shape shape, std::vector<double> values);

/// Throws ShapeError when product(shape) != values.size().
Tensor dense_from_values(Shape shape, std::vector<double> values);

/// Eager reverse-mode recorder. Operations append their backward closure while
/// running forward, so recording order is already a topological order.
///
/// Policy: a tape replays once. Calling backward a second time throws.
/// Parameter gradients accumulate across tapes until ParameterSet::zero_grad.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
    std::size_t size() const { return steps_.size(); }
    bool consumed() const { return consumed_; }

    void backward(const Tensor& loss);

    /// The tape operations on this thread record into, or nullptr.
    static Tape* active();

  private:
    friend class TapeScope;
    std::vector<std::function<void()>> steps_;
    bool consumed_ = false;
};

/// Makes `tape` the active tape for the current thread for the scope lifetime.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* previous_;
};

/// Shorthand for the common single-graph case.
void backward(const Tensor& loss);

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Registry of trainable leaves (and non-trainable buffers such as batch-norm
/// running statistics). Registration order is the checkpoint order.
class ParameterSet {
  public:
    Tensor add_parameter(std::string name, Shape shape, std::vector<double> values);
    Tensor add_buffer(std::string name, Shape shape, std::vector<double> values);

    const std::vector<NamedTensor>& parameters() const { return params_; }
    const std::vector<NamedTensor>& buffers() const { return buffers_; }
    std::size_t parameter_count() const;
    std::size_t scalar_count() const;

    const Tensor* find(const std::string& name) const;

    void zero_grad();

  private:
    void check_unique(const std::string& name) const;
    std::vector<NamedTensor> params_;
    std::vector<NamedTensor> buffers_;
};

}  // namespace ssasc
