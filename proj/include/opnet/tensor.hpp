#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace opnet {

/// Extents of a dense (batch, channel, height, width) tensor.
struct Shape {
    std::size_t b = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    std::size_t numel() const { return b * c * h * w; }
    std::size_t plane() const { return h * w; }
    std::array<std::size_t, 4> extents() const { return {b, c, h, w}; }

    friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);
std::ostream& operator<<(std::ostream& os, const Shape& s);

/// Dense 4-D array of doubles in row-major (B, C, H, W) order.
///
/// Per-batch matrices (similarity and weight matrices) are stored as
/// tensors of shape (B, 1, rows, cols) so that each row is contiguous.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros(Shape shape) { return Tensor(shape); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }
    static Tensor constant(Shape shape, double value) { return Tensor(shape, value); }
    /// Standard-normal fill.
    static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
    /// Uniform fill on [lo, hi).
    static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }

    std::size_t index(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
        return ((b * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    double& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
        return data_[index(b, c, h, w)];
    }
    double at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[index(b, c, h, w)];
    }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& storage() { return data_; }

    /// Contiguous (h, w) plane of channel c in batch b.
    std::span<double> plane(std::size_t b, std::size_t c);
    std::span<const double> plane(std::size_t b, std::size_t c) const;

    bool all_finite() const;
    double max_abs() const;

    Tensor& operator+=(const Tensor& other);
    Tensor& operator*=(double s);

    /// Bitwise equality of shape and payload.
    bool identical(const Tensor& other) const;

private:
    Shape shape_{};
    std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, Tensor t);

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

/// Shape of a per-batch (rows x cols) matrix stored as a tensor.
inline Shape matrix_shape(std::size_t batch, std::size_t rows, std::size_t cols) {
    return {batch, 1, rows, cols};
}

}  // namespace opnet
