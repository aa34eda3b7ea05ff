// SPDX-License-Identifier: Apache-2.0
#include "mark/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mark {

namespace {
thread_local int g_no_grad_depth = 0;
} // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<size_t> row_major_strides(const Shape& shape) {
    std::vector<size_t> strides(shape.size(), 1);
    for (size_t i = shape.size(); i-- > 1;)
        strides[i - 1] = strides[i] * shape[i];
    return strides;
}

static void validate_shape(const Shape& shape) {
    for (size_t d : shape)
        if (d == 0) throw shape_error("tensor dimension must be positive, got shape " + shape_str(shape));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    validate_shape(shape);
    auto node = std::make_shared<TensorNode>();
    node->data.assign(shape_numel(shape), value);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    validate_shape(shape);
    if (shape_numel(shape) != data.size())
        throw shape_error("data length " + std::to_string(data.size()) +
                          " does not match shape " + shape_str(shape));
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(float value) { return from_data({1}, {value}); }

const std::shared_ptr<TensorNode>& Tensor::checked() const {
    if (!node_) throw contract_error("operation on an undefined tensor");
    return node_;
}

size_t Tensor::dim(size_t axis) const {
    const auto& s = checked()->shape;
    if (axis >= s.size())
        throw shape_error("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    return s[axis];
}

void Tensor::set_requires_grad(bool value) {
    auto& n = checked();
    if (value && n->backprop)
        throw contract_error("cannot mark an op output as a gradient leaf");
    n->requires_grad = value;
}

std::vector<float>& Tensor::grad() {
    auto& n = checked();
    if (n->grad.empty())
        throw contract_error("tensor has no gradient (backward not run, or grad cleared)");
    return n->grad;
}

const std::vector<float>& Tensor::grad() const {
    return const_cast<Tensor*>(this)->grad();
}

void Tensor::zero_grad() {
    auto& n = checked();
    n->grad.assign(n->data.size(), 0.0f);
}

float Tensor::item() const {
    const auto& n = checked();
    if (n->data.size() != 1)
        throw contract_error("item() on non-scalar tensor of shape " + shape_str(n->shape));
    return n->data[0];
}

double Tensor::item64() const {
    const auto& n = checked();
    if (n->data.size() != 1)
        throw contract_error("item64() on non-scalar tensor of shape " + shape_str(n->shape));
    return n->wide(0);
}

float Tensor::at(std::initializer_list<size_t> idx) const {
    const auto& n = checked();
    if (idx.size() != n->shape.size())
        throw shape_error("index rank " + std::to_string(idx.size()) +
                          " does not match shape " + shape_str(n->shape));
    auto strides = row_major_strides(n->shape);
    size_t flat = 0, axis = 0;
    for (size_t i : idx) {
        if (i >= n->shape[axis])
            throw shape_error("index out of range on axis " + std::to_string(axis) +
                              " for shape " + shape_str(n->shape));
        flat += i * strides[axis];
        ++axis;
    }
    return n->data[flat];
}

Tensor Tensor::clone(bool requires_grad) const {
    const auto& n = checked();
    auto copy = std::make_shared<TensorNode>();
    copy->shape = n->shape;
    copy->data = n->data;
    copy->requires_grad = requires_grad;
    return Tensor(std::move(copy));
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw contract_error("backward: undefined tensor");
    TensorNode* root = loss.node().get();
    if (shape_numel(root->shape) != 1)
        throw contract_error("backward: root must be scalar, got shape " + shape_str(root->shape));
    if (!root->requires_grad)
        throw contract_error("backward: root does not require grad (no graph was recorded)");

    // Iterative post-order DFS; the reversed finish order is a topological
    // order with every consumer visited before its inputs.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    struct Frame {
        TensorNode* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    seen.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorNode* p = f.node->parents[f.next_parent++].get();
            if (seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    for (TensorNode* n : order) n->grad64.assign(n->data.size(), 0.0);
    root->grad64[0] = 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backprop) n->backprop(*n);
    }

    // Commit the wide accumulators into the persistent 32-bit gradients.
    for (TensorNode* n : order) {
        if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0f);
        for (size_t i = 0; i < n->grad.size(); ++i) {
            double g = static_cast<double>(n->grad[i]) + n->grad64[i];
            if (!std::isfinite(g))
                throw numeric_error("backward produced a non-finite gradient");
            n->grad[i] = static_cast<float>(g);
        }
        n->grad64 = {};
    }
}

void assert_finite(const Tensor& t, const std::string& what) {
    const auto& n = t.node();
    if (!n) throw contract_error("assert_finite: undefined tensor");
    for (size_t i = 0; i < n->data.size(); ++i)
        if (!std::isfinite(n->wide(i)))
            throw numeric_error(what + " produced a non-finite value at index " + std::to_string(i));
}

} // namespace mark
