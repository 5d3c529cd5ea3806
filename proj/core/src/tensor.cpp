#include "fitpath/tensor.hpp"

#include <cassert>
#include <cmath>
#include <cstring>
#include <sstream>

#include "fitpath/errors.hpp"

namespace fitpath {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    for (auto d : shape_) {
        if (d <= 0) throw ShapeError("tensor: non-positive extent in shape " + shape_str(shape_));
    }
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw ShapeError("tensor: shape " + shape_str(shape_) + " does not match data length " +
                         std::to_string(data_.size()));
    }
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = value;
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vec(std::initializer_list<double> values) {
    return Tensor({static_cast<std::int64_t>(values.size())}, std::vector<double>(values));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& x : t.data_) x = dist(rng);
    return t;
}

double& Tensor::at(std::initializer_list<std::int64_t> idx) {
    assert(idx.size() == shape_.size());
    std::int64_t flat = 0;
    size_t axis = 0;
    for (auto i : idx) {
        assert(i >= 0 && i < shape_[axis]);
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return data_[static_cast<size_t>(flat)];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
    return const_cast<Tensor*>(this)->at(idx);
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::fabs(x));
    return m;
}

double Tensor::sum() const {
    double s = 0.0;
    for (double x : data_) s += x;
    return s;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

double sq_norm(const Tensor& t) {
    double s = 0.0;
    for (double x : t.data()) s += x * x;
    return s;
}

double sq_norm_diff(const Tensor& a, const Tensor& b) {
    assert(a.numel() == b.numel());
    double s = 0.0;
    auto da = a.data(), db = b.data();
    for (size_t i = 0; i < da.size(); ++i) {
        double d = da[i] - db[i];
        s += d * d;
    }
    return s;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

}  // namespace fitpath
