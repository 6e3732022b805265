#include "create/tensor.hpp"

#include <cmath>
#include <numeric>

#include "create/errors.hpp"

namespace create {

namespace {
std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  check_tensor(*this, "Tensor");
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::row_major(std::size_t rows, std::size_t cols, std::initializer_list<double> vals) {
  return Tensor({rows, cols}, std::vector<double>(vals));
}

Tensor Tensor::vec(std::initializer_list<double> vals) {
  std::vector<double> v(vals);
  const std::size_t n = v.size();  // read before the move: evaluation order is unspecified
  return Tensor({n}, std::move(v));
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void check_tensor(const Tensor& t, const char* where) {
  if (shape_numel(t.shape) != t.data.size())
    throw Error(std::string(where) + ": shape " + shape_str(t.shape) + " does not match " +
                std::to_string(t.data.size()) + " elements");
}

}  // namespace create
