#ifndef FITPATH_TENSOR_HPP
#define FITPATH_TENSOR_HPP

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fitpath/rng.hpp"

namespace fitpath {

using Shape = std::vector<std::int64_t>;

// Keep flags for pruning: one entry per weight, 1 = survives, 0 = masked to
// zero. Stored unpacked in memory; bit-packed only on disk.
using KeepMask = std::vector<std::uint8_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of f64. The engine stays in double precision
// end-to-end; low bit-widths are simulated by rounding values onto a grid,
// never by changing the storage type.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor vec(std::initializer_list<double> values);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t extent(int axis) const { return shape_[static_cast<size_t>(axis)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Row-major multi-index access; bounds enforced in debug builds only.
    double& at(std::initializer_list<std::int64_t> idx);
    double at(std::initializer_list<std::int64_t> idx) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    double max_abs() const;
    double sum() const;

    Tensor reshaped(Shape shape) const;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Small non-differentiable helpers used across modules.
double sq_norm(const Tensor& t);
double sq_norm_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace fitpath

#endif
