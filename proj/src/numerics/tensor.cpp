#include "balancedit/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "balancedit/common/error.hpp"

namespace balancedit::numerics {

namespace {

std::size_t extent_product(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) {
            fail(ErrorKind::shape, "tensor extents must be positive, got " + shape_string(shape));
        }
        n *= e;
    }
    return n;
}

}  // namespace

std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        s += (i ? "x" : "") + std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    data_.assign(extent_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != extent_product(shape_)) {
        fail(ErrorKind::shape, "data length " + std::to_string(data_.size()) + " does not match shape " +
                                   shape_string(shape_));
    }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            fail(ErrorKind::shape, "ragged matrix literal");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

std::size_t Tensor::rows() const { return shape_.size() == 1 ? 1 : shape_.at(0); }

std::size_t Tensor::cols() const { return shape_.size() == 1 ? shape_[0] : shape_.at(1); }

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Parameter::Parameter(std::string name, Tensor value)
    : name(std::move(name)), value(std::move(value)), grad(this->value.shape()) {}

}  // namespace balancedit::numerics
