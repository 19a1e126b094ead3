#include "mrp/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "mrp/error.hpp"

namespace mrp {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::unbound_input: return "unbound_input";
    case ErrorCode::non_scalar_output: return "non_scalar_output";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::domain: return "domain";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::io_error: return "io_error";
    case ErrorCode::config_error: return "config_error";
  }
  return "unknown";
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) {
    throw Error(ErrorCode::shape_mismatch, "tensor shape must have at least one extent");
  }
  std::size_t n = 1;
  for (std::size_t e : shape_) {
    if (e == 0) throw Error(ErrorCode::shape_mismatch, "tensor extents must be positive");
    n *= e;
  }
  if (n != data_.size()) {
    throw Error(ErrorCode::shape_mismatch,
                "tensor data length " + std::to_string(data_.size()) +
                    " does not match shape product " + std::to_string(n));
  }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return filled(rows, cols, 0.0); }

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double value) {
  return Tensor({rows, cols}, std::vector<double>(rows * cols, value));
}

Tensor Tensor::column(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n, 1}, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor({1, 1}, {value}); }

std::size_t Tensor::rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }

std::size_t Tensor::cols() const noexcept {
  if (shape_.size() < 2) return shape_.empty() ? 0 : 1;
  return std::accumulate(shape_.begin() + 1, shape_.end(), std::size_t{1}, std::multiplies<>());
}

Tensor Tensor::col(std::size_t c) const {
  std::vector<double> out(rows());
  for (std::size_t r = 0; r < rows(); ++r) out[r] = (*this)(r, c);
  return column(std::move(out));
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor hstack(std::span<const Tensor> columns) {
  if (columns.empty()) throw Error(ErrorCode::shape_mismatch, "hstack of zero columns");
  const std::size_t rows = columns.front().size();
  Tensor out = Tensor::zeros(rows, columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].size() != rows) {
      throw Error(ErrorCode::shape_mismatch, "hstack: column " + std::to_string(c) +
                                                 " has length " +
                                                 std::to_string(columns[c].size()));
    }
    for (std::size_t r = 0; r < rows; ++r) out(r, c) = columns[c][r];
  }
  return out;
}

}  // namespace mrp
