#pragma once

#include <functional>
#include <span>
#include <vector>

#include "create/autodiff.hpp"

namespace create {

/// SGD with momentum and coupled weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
/// Velocity buffers are zero-initialized per parameter and persist across
/// steps; the state is bound to the parameter list given at construction.
class SgdState {
 public:
  SgdState(double learning_rate, double momentum, double weight_decay, std::span<const Var> params);

  void set_learning_rate(double lr) { learning_rate_ = lr; }
  double learning_rate() const { return learning_rate_; }

  /// One update from the parameters' accumulated gradients.
  void step(std::span<Var> params);

  const Tensor& velocity(std::size_t i) const { return velocity_[i]; }

 private:
  double learning_rate_;
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t param_index = 0;  // where the max occurred
  std::size_t entry_index = 0;
};

/// Max over all parameter entries of
///   |analytic - central_difference| / max(|analytic|, |central_difference|, 1e-12)
/// where the central difference uses the given step. loss_fn must rebuild the
/// loss from the parameters' current values on every call.
double gradient_check(const std::function<Var()>& loss_fn, std::span<Var> params, double step);
GradCheckReport gradient_check_detailed(const std::function<Var()>& loss_fn,
                                        std::span<Var> params, double step);

}  // namespace create
