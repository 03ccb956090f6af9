#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mtca/error.hpp"

namespace mtca {

using Shape = std::vector<std::size_t>;

// Dense row-major tensor of 64-bit reals. Rank-1 tensors behave as a single
// row wherever an operation expects a matrix.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    static Tensor row(std::vector<double> values);
    static Tensor scalar(double value);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t rows() const noexcept {
        if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
        return data_.size() / shape_.back();
    }
    std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool all_finite() const noexcept;
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

std::string shape_string(const Shape& shape);

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives and
// has not been reset.
class Var {
public:
    Var() = default;

    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    const Tensor& value() const;
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Reverse-mode computation tape. Nodes are appended in evaluation order, so
// the node vector is already a topological order; backward() walks it once in
// reverse. Gradients accumulate additively at fan-out.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var leaf(Tensor value, bool requires_grad = true);

    // Appends an operation node. `fn` runs during backward only if some input
    // requires a gradient. Throws NumericError on non-finite output.
    Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
    Var record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn);

    const Tensor& value(Var v) const;
    const Tensor& value_at(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
    bool requires_grad_at(std::size_t id) const { return nodes_[id].requires_grad; }

    // Gradient of the last backward() loss w.r.t. `v`; zeros when unreached.
    Tensor grad(Var v) const;

    // Incoming gradient of node `id` during backward.
    const Tensor& grad_at(std::size_t id) const { return nodes_[id].grad; }
    // Accumulation buffer for input `id`; empty when the input needs no grad.
    std::span<double> grad_buffer(std::size_t id);

    void backward(Var loss);
    void reset();

    std::size_t size() const noexcept { return nodes_.size(); }
    bool backward_done() const noexcept { return backward_done_; }

private:
    struct Node {
        const char* op = "leaf";
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
    };

    void check_owned(Var v) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace mtca
