#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ntkprune {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

// Dense row-major tensor of 64-bit reals. Plain value type; all layout is
// explicit so files and flattened views mean the same thing everywhere.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor full(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t d) const { return shape_[d]; }
  std::size_t size() const { return data_.size(); }
  bool is_scalar() const { return data_.size() == 1; }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 accessors; bounds are the caller's responsibility.
  double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at2(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }

  const std::vector<double>& values() const { return data_; }
  std::vector<double>& values() { return data_; }

  void fill(double v) { data_.assign(data_.size(), v); }

  // Throws NumericError naming `op` if any entry is NaN or infinite.
  void check_finite(const char* op) const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace ntkprune
