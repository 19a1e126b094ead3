#ifndef MRP_TENSOR_HPP
#define MRP_TENSOR_HPP

#include <cstddef>
#include <span>
#include <vector>

namespace mrp {

/// Dense row-major tensor of doubles. Rank 1 tensors are viewed as column
/// vectors wherever a matrix view is needed.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor filled(std::size_t rows, std::size_t cols, double value);
  static Tensor column(std::vector<double> values);
  static Tensor scalar(double value);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  /// Column `c` copied out as a rank-2 [rows, 1] tensor.
  Tensor col(std::size_t c) const;
  bool all_finite() const noexcept;

  bool operator==(const Tensor& other) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Stack column vectors side by side into a [rows, n] matrix.
Tensor hstack(std::span<const Tensor> columns);

}  // namespace mrp

#endif  // MRP_TENSOR_HPP
