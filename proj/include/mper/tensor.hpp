#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mper/volume.hpp"

namespace mper {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Raised whenever an operation produces NaN or Inf.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <typename T>
void ensure_finite(std::span<const T> values, const char* op) {
    for (const T& v : values)
        if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": produced a non-finite value");
}

/// Dense row-major tensor (last axis fastest).
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(element_count(shape_), fill) {}
    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != element_count(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
    }

    [[nodiscard]] const Shape& shape() const { return shape_; }
    [[nodiscard]] std::size_t rank() const { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] std::span<T> data() { return data_; }
    [[nodiscard]] std::span<const T> data() const { return data_; }
    [[nodiscard]] std::vector<T>& values() { return data_; }
    [[nodiscard]] const std::vector<T>& values() const { return data_; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    template <typename U>
    [[nodiscard]] BasicTensor<U> cast() const {
        return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

    static std::size_t element_count(const Shape& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

/// Channel-major stack of 3D grids; within a channel x is fastest.
template <typename T>
struct FeatureMap {
    std::size_t channels = 0;
    Dims dims;
    std::vector<T> data;

    FeatureMap() = default;
    FeatureMap(std::size_t c, Dims d, T fill = T{0})
        : channels(c), dims(d), data(c * d.voxels(), fill) {}

    [[nodiscard]] std::size_t voxels() const { return dims.voxels(); }
    [[nodiscard]] std::span<T> channel(std::size_t c) {
        return std::span<T>(data).subspan(c * voxels(), voxels());
    }
    [[nodiscard]] std::span<const T> channel(std::size_t c) const {
        return std::span<const T>(data).subspan(c * voxels(), voxels());
    }
};

}  // namespace mper
