#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace create {

/// Dense row-major array of 64-bit floats. Rank 0 (scalar), 1 or 2 in practice.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor row_major(std::size_t rows, std::size_t cols, std::initializer_list<double> vals);
  static Tensor vec(std::initializer_list<double> vals);

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return numel() == 1 && shape.size() <= 1; }

  /// Rows/cols treat a rank-1 tensor of length n as n x 1.
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double& at(std::size_t i) { return data[i]; }
  double at(std::size_t i) const { return data[i]; }
  double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

/// numel consistency check; throws Error on mismatch.
void check_tensor(const Tensor& t, const char* where);

}  // namespace create
