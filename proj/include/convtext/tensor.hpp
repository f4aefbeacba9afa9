#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "convtext/error.hpp"

namespace convtext {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array with a shape tag.
///
/// Rank 1 is a vector, rank 2 is (length x channels), rank 3 is a
/// convolution kernel (width x in_channels x out_channels).
template <typename Real = double>
class Tensor {
 public:
  using value_type = Real;

  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw Error("tensor data length " + std::to_string(data_.size()) +
                  " does not match shape " + shape_str(shape_));
    }
  }

  /// Builds a rows x cols matrix from nested rows.
  static Tensor matrix(const std::vector<std::vector<Real>>& rows) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    std::vector<Real> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
      if (r.size() != cols) throw Error("ragged matrix rows");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(data));
  }

  static Tensor vector(std::vector<Real> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  const std::vector<Real>& values() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }

  Real& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const Real& operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }

  Real& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const Real& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::span<Real> row(std::size_t i) {
    return std::span<Real>(data_).subspan(i * shape_[1], shape_[1]);
  }
  std::span<const Real> row(std::size_t i) const {
    return std::span<const Real>(data_).subspan(i * shape_[1], shape_[1]);
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw Error("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  Tensor& operator+=(const Tensor& other) {
    require_same_shape(other, "operator+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(Real s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const Tensor& other, const char* where) const {
    if (shape_ != other.shape_) {
      throw Error(std::string(where) + ": shape mismatch " + shape_str(shape_) +
                  " vs " + shape_str(other.shape_));
    }
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](Real v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<Real> data_;
};

template <typename Real>
Real max_abs_diff(const Tensor<Real>& a, const Tensor<Real>& b) {
  a.require_same_shape(b, "max_abs_diff");
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace detail {

inline void write_f64_le(std::ostream& os, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline double read_f64_le(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) throw Error("truncated tensor data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t{buf[i]} << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

/// Writes `shape: d0 d1 ...\n` then little-endian float64 values, row-major.
template <typename Real>
void write_tensor(std::ostream& os, const Tensor<Real>& t) {
  os << "shape:";
  for (auto d : t.shape()) os << ' ' << d;
  os << '\n';
  for (Real v : t.data()) detail::write_f64_le(os, static_cast<double>(v));
}

template <typename Real = double>
Tensor<Real> read_tensor(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error("missing tensor header");
  if (line.rfind("shape:", 0) != 0) throw Error("bad tensor header: " + line);
  std::istringstream hs(line.substr(6));
  Shape shape;
  std::size_t d;
  while (hs >> d) shape.push_back(d);
  if (!hs.eof()) throw Error("bad tensor header: " + line);
  std::vector<Real> data(shape_size(shape));
  for (auto& v : data) v = static_cast<Real>(detail::read_f64_le(is));
  return Tensor<Real>(std::move(shape), std::move(data));
}

}  // namespace convtext
