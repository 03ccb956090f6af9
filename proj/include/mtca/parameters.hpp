#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mtca/tensor.hpp"

namespace mtca {

// Named tensors in a fixed canonical order. Flattening concatenates them in
// that order, which defines the parameter vector θ.
class ParameterSet {
public:
    void add(std::string name, Tensor value);

    std::size_t size() const noexcept { return tensors_.size(); }
    const std::string& name(std::size_t i) const { return names_.at(i); }
    const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }
    Tensor& operator[](std::size_t i) { return tensors_.at(i); }
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);
    std::size_t index_of(std::string_view name) const;
    bool contains(std::string_view name) const noexcept;

    std::size_t element_count() const noexcept;
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);
    // Offset of tensor i inside the flattened vector.
    std::size_t offset(std::size_t i) const;

    bool same_layout(const ParameterSet& other) const noexcept;
    friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> tensors_;
};

}  // namespace mtca
