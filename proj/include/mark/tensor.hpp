// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mark/errors.hpp"

namespace mark {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
std::vector<size_t> row_major_strides(const Shape& shape);

/// Disables graph recording for its lifetime (thread-local, nestable).
/// Forward passes executed under a guard produce plain value tensors.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// True when graph recording is active on this thread.
bool grad_enabled();

/// Shared storage + graph record behind a Tensor handle.
///
/// Values are stored as 32-bit floats (the canonical representation that
/// checkpoints, hashes, and the optimizer see).  Operation outputs keep an
/// additional 64-bit mirror of the freshly computed values so that losses
/// and gradients are evaluated in double precision end to end; leaves
/// (parameters, inputs) have no mirror — their 32-bit data is the value.
struct TensorNode {
    Shape shape;
    std::vector<float> data;     ///< canonical 32-bit storage, row-major
    std::vector<double> data64;  ///< wide mirror on op outputs; empty on leaves
    std::vector<float> grad;     ///< persistent gradient, lazily allocated
    std::vector<double> grad64;  ///< transient accumulator inside backward()
    std::vector<float> velocity; ///< SGD momentum state, lazily allocated
    bool requires_grad = false;

    /// Grad-requiring inputs, recorded for graph traversal.
    std::vector<std::shared_ptr<TensorNode>> parents;
    /// Accumulates this node's grad64 into the parents' grad64 buffers.
    std::function<void(const TensorNode&)> backprop;

    double wide(size_t i) const {
        return data64.empty() ? static_cast<double>(data[i]) : data64[i];
    }
};

/// Value-semantic handle over a shared TensorNode.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data,
                            bool requires_grad = false);
    static Tensor scalar(float value);

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const { return checked()->shape; }
    size_t rank() const { return checked()->shape.size(); }
    size_t dim(size_t axis) const;
    size_t numel() const { return checked()->data.size(); }

    std::vector<float>& data() { return checked()->data; }
    const std::vector<float>& data() const { return checked()->data; }

    bool requires_grad() const { return checked()->requires_grad; }
    void set_requires_grad(bool value);

    bool has_grad() const { return !checked()->grad.empty(); }
    std::vector<float>& grad();
    const std::vector<float>& grad() const;
    /// Zeroes the gradient buffer (allocating it if absent).
    void zero_grad();

    /// Scalar value; throws contract_error unless numel() == 1.
    float item() const;
    /// Scalar value from the wide mirror when present.
    double item64() const;

    float at(std::initializer_list<size_t> idx) const;

    /// Deep copy of the 32-bit values into a fresh leaf (no graph history,
    /// no gradient, no optimizer state).
    Tensor clone(bool requires_grad) const;

    std::shared_ptr<TensorNode>& node() { return node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }

private:
    const std::shared_ptr<TensorNode>& checked() const;
    std::shared_ptr<TensorNode> node_;
};

/// Reverse-mode sweep from a scalar loss.  Accumulates into the `grad`
/// array of every grad-requiring tensor reachable from `loss`; gradients
/// add up across calls until cleared with zero_grad().
void backward(const Tensor& loss);

/// Throws numeric_error if any element is NaN/Inf.  `what` names the
/// producer for the error message.
void assert_finite(const Tensor& t, const std::string& what);

} // namespace mark
