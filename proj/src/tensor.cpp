#include "mtca/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace mtca {

namespace {

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const Shape& shape) {
    for (auto dim : shape) {
        if (dim == 0) {
            throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
        }
    }
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ',';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (element_count(shape_) != data_.size()) {
        throw DimensionError("shape " + shape_string(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::row(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({1, n}, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, std::vector<double>{value}); }

bool Tensor::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) {
        throw NumericError("non-finite value in leaf tensor");
    }
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    if (!value.all_finite()) {
        throw NumericError(std::string("non-finite value produced by ") + op);
    }
    bool needs_grad = false;
    for (const auto& in : inputs) {
        check_owned(in);
        needs_grad = needs_grad || nodes_[in.id()].requires_grad;
    }
    Node node;
    node.op = op;
    node.value = std::move(value);
    node.requires_grad = needs_grad;
    if (needs_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const {
    check_owned(v);
    return nodes_[v.id()].value;
}

Tensor Tape::grad(Var v) const {
    check_owned(v);
    const auto& node = nodes_[v.id()];
    if (node.has_grad) return node.grad;
    return Tensor(node.value.shape(), 0.0);
}

std::span<double> Tape::grad_buffer(std::size_t id) {
    auto& node = nodes_[id];
    if (!node.requires_grad) return {};
    if (!node.has_grad) {
        node.grad = Tensor(node.value.shape(), 0.0);
        node.has_grad = true;
    }
    return node.grad.values();
}

void Tape::backward(Var loss) {
    check_owned(loss);
    if (backward_done_) {
        throw TapeError("backward() called twice without reset()");
    }
    if (loss.value().size() != 1) {
        throw TapeError("backward() requires a scalar loss, got shape " + shape_string(loss.value().shape()));
    }
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    grad_buffer(loss.id())[0] = 1.0;

    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        auto& node = nodes_[i];
        if (!node.has_grad) continue;
        if (!node.grad.all_finite()) {
            throw NumericError(std::string("non-finite gradient at ") + node.op);
        }
        if (node.backward) node.backward(*this, i);
    }
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

void Tape::check_owned(Var v) const {
    if (v.tape_ != this || v.id_ >= nodes_.size()) {
        throw TapeError("variable does not belong to this tape");
    }
}

}  // namespace mtca
