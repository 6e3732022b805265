#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "create/tensor.hpp"

namespace create {

namespace detail {
struct Node;
/// Test instrumentation: when set, the tanh backward rule is deliberately
/// wrong so gradient-check failure reporting can be exercised.
extern bool g_tanh_backward_fault;
}  // namespace detail

/// A value in the computation graph. Copies share the underlying node.
/// Leaves created with parameter() accumulate gradients on backward();
/// leaves created with constant() do not.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const;
  Tensor& value_mut();  // leaves only; invalidates nothing, graphs are per-step
  const std::vector<std::size_t>& shape() const { return value().shape; }
  std::size_t numel() const { return value().numel(); }

  bool requires_grad() const;
  void set_requires_grad(bool on);  // leaves only

  /// Accumulated gradient; zeros if backward never reached this node.
  Tensor grad() const;
  void zero_grad();

  detail::Node* node() const { return node_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

Var parameter(Tensor value);
Var constant(Tensor value);
Var scalar_const(double v);

/// While alive, newly built ops record no graph (values only).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// ---- primitive operations -------------------------------------------------
// All shapes are explicit; no implicit broadcasting. Every op validates
// operand shapes and rejects non-finite outputs.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var negate(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// x: n x in, w: out x in, b: out  ->  n x out rows of x.w^T + b.
Var linear(const Var& x, const Var& w, const Var& b);

Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var reciprocal(const Var& a);

Var sum(const Var& a);   // scalar
Var mean(const Var& a);  // scalar
Var row_sum(const Var& a);          // n x m -> n
Var row_squared_norm(const Var& a); // n x m -> n, sum_j a[i][j]^2

Var softmax_rows(const Var& a);      // max-shifted, rows sum to 1
Var log_softmax_rows(const Var& a);  // max-shifted

/// out[i] = a[i][idx[i]].
Var pick_per_row(const Var& a, const std::vector<std::size_t>& idx);
/// Column index-select; cols may repeat or reorder.
Var select_cols(const Var& a, const std::vector<std::size_t>& cols);
/// Concatenate n-vectors / n x m_k matrices along columns.
Var concat_cols(const std::vector<Var>& parts);
/// out[i][j] = a[i][j] * s[i].
Var scale_rows(const Var& a, const Var& s);

/// Row-wise log sum_j mask[i][j]*exp(a[i][j]), max-shifted over unmasked
/// entries. mask is a constant 0/1 matrix; rows with an empty mask yield 0
/// and propagate no gradient.
Var masked_row_lse(const Var& a, const Tensor& mask);

/// Per-row score (e2 - e1) / (emax - e1) from the two smallest entries and
/// the largest; 0 when all entries of a row are equal. Needs >= 2 columns.
/// Differentiable wherever the selected order statistics are unique.
Var confusion_scores(const Var& errors);

/// Reverse-mode sweep from a scalar output over its recorded graph.
/// Gradients accumulate into every reachable node that requires them.
void backward(const Var& output);

void zero_grads(std::span<Var> params);

}  // namespace create
