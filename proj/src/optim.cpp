#include "create/optim.hpp"

#include <cmath>

#include "create/errors.hpp"

namespace create {

SgdState::SgdState(double learning_rate, double momentum, double weight_decay,
                   std::span<const Var> params)
    : learning_rate_(learning_rate), momentum_(momentum), weight_decay_(weight_decay) {
  if (learning_rate <= 0.0) throw Error("SgdState: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw Error("SgdState: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw Error("SgdState: weight decay must be nonnegative");
  velocity_.reserve(params.size());
  for (const Var& p : params) velocity_.push_back(Tensor::zeros(p.value().shape));
}

void SgdState::step(std::span<Var> params) {
  if (params.size() != velocity_.size())
    throw Error("SgdState: parameter list does not match the state");
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k].value_mut();
    Tensor g = params[k].grad();
    if (!g.same_shape(p)) throw ShapeError("sgd_step", p.shape, g.shape);
    Tensor& v = velocity_[k];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      v.data[i] = momentum_ * v.data[i] + g.data[i] + weight_decay_ * p.data[i];
      p.data[i] -= learning_rate_ * v.data[i];
    }
  }
}

double gradient_check(const std::function<Var()>& loss_fn, std::span<Var> params, double step) {
  return gradient_check_detailed(loss_fn, params, step).max_rel_error;
}

GradCheckReport gradient_check_detailed(const std::function<Var()>& loss_fn,
                                        std::span<Var> params, double step) {
  if (step <= 0.0) throw Error("gradient_check: step must be positive");

  zero_grads(params);
  Var loss = loss_fn();
  backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const Var& p : params) analytic.push_back(p.grad());

  double probe = [&] {
    NoGradGuard ng;
    return loss_fn().value().data[0];
  }();
  if (!std::isfinite(probe)) throw NonFiniteError("gradient_check");

  GradCheckReport report;
  NoGradGuard ng;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& values = params[k].value_mut();
    for (std::size_t i = 0; i < values.numel(); ++i) {
      double saved = values.data[i];
      values.data[i] = saved + step;
      double up = loss_fn().value().data[0];
      values.data[i] = saved - step;
      double down = loss_fn().value().data[0];
      values.data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw Error("gradient_check: non-finite loss while perturbing parameter " +
                    std::to_string(k) + " entry " + std::to_string(i));
      double fd = (up - down) / (2.0 * step);
      double an = analytic[k].data[i];
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-12});
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.param_index = k;
        report.entry_index = i;
      }
    }
  }
  return report;
}

}  // namespace create
