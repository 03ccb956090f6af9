#include "mtca/parameters.hpp"

#include <algorithm>

namespace mtca {

void ParameterSet::add(std::string name, Tensor value) {
    if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
    names_.push_back(std::move(name));
    tensors_.push_back(std::move(value));
}

std::size_t ParameterSet::index_of(std::string_view name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw ConfigError("unknown parameter: " + std::string(name));
    return static_cast<std::size_t>(it - names_.begin());
}

bool ParameterSet::contains(std::string_view name) const noexcept {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const Tensor& ParameterSet::at(std::string_view name) const { return tensors_[index_of(name)]; }
Tensor& ParameterSet::at(std::string_view name) { return tensors_[index_of(name)]; }

std::size_t ParameterSet::element_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
}

std::vector<double> ParameterSet::flatten() const {
    std::vector<double> flat;
    flat.reserve(element_count());
    for (const auto& t : tensors_) flat.insert(flat.end(), t.values().begin(), t.values().end());
    return flat;
}

void ParameterSet::assign(std::span<const double> flat) {
    if (flat.size() != element_count()) {
        throw DimensionError("parameter vector has " + std::to_string(flat.size()) + " values, expected " +
                             std::to_string(element_count()));
    }
    std::size_t pos = 0;
    for (auto& t : tensors_) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), t.size(), t.values().begin());
        pos += t.size();
    }
}

std::size_t ParameterSet::offset(std::size_t i) const {
    std::size_t pos = 0;
    for (std::size_t k = 0; k < i; ++k) pos += tensors_.at(k).size();
    return pos;
}

bool ParameterSet::same_layout(const ParameterSet& other) const noexcept {
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
        if (tensors_[i].shape() != other.tensors_[i].shape()) return false;
    }
    return true;
}

}  // namespace mtca
