#ifndef PCBB_TENSOR_HPP
#define PCBB_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pcbb/errors.hpp"

namespace pcbb::nn {

// Dense row-major tensor of doubles. Shapes are plain dimension lists;
// layer code interprets them as [C,D,H,W], [M,N], or flat vectors.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)),
          data_(element_count(shape_), fill) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (element_count(shape_) != data_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
        }
    }

    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    static std::string shape_string(const std::vector<std::size_t>& shape) {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << "x";
            os << shape[i];
        }
        os << "]";
        return os.str();
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor reshaped(std::vector<std::size_t> new_shape) const {
        if (element_count(new_shape) != data_.size()) {
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                             shape_string(new_shape));
        }
        return Tensor(std::move(new_shape), data_);
    }

    void add_in_place(const Tensor& other) {
        if (!same_shape(other)) {
            throw ShapeError("shape mismatch in add: " + shape_string(shape_) +
                             " vs " + shape_string(other.shape_));
        }
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

}  // namespace pcbb::nn

#endif  // PCBB_TENSOR_HPP
