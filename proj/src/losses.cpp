#include "create/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "create/errors.hpp"

namespace create {

void LossConfig::validate() const {
  if (!(alpha > 0.0)) throw Error("loss alpha must be positive");
  if (!(tau_d > 0.0)) throw Error("loss tau_d must be positive");
  if (!(tau_r > 0.0)) throw Error("loss tau_r must be positive");
  if (!(beta >= 0.0)) throw Error("loss beta must be non-negative");
  if (!(lambda >= 0.0)) throw Error("loss lambda must be non-negative");
}

Var ce_loss(const Var& probs, const std::vector<int>& labels) {
  const auto& shape = probs.shape();
  if (shape.size() != 2) throw Error("ce_loss expects an n x C probability matrix");
  const std::size_t n = shape[0], c = shape[1];
  if (n == 0) throw Error("ce_loss on an empty batch");
  if (labels.size() != n)
    throw Error("ce_loss: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(n) + " rows");
  const Tensor& p = probs.value();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw Error("ce_loss: label " + std::to_string(labels[i]) + " outside [0, " +
                  std::to_string(c) + ")");
    idx[i] = static_cast<std::size_t>(labels[i]);
    double row_sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) row_sum += p.at(i, j);
    if (std::abs(row_sum - 1.0) > 1e-9)
      throw Error("ce_loss: probability row " + std::to_string(i) + " sums to " +
                  std::to_string(row_sum));
  }
  Var picked = pick_per_row(probs, idx);
  for (std::size_t i = 0; i < n; ++i) {
    if (picked.value().at(i) < 1e-300)
      throw Error("ce_loss: target probability underflow at row " + std::to_string(i));
  }
  return negate(mean(log(picked)));
}

Var kd_loss(const Var& errors_new, const Tensor& errors_old, double alpha, double tau_d) {
  if (!(alpha > 0.0) || !(tau_d > 0.0)) throw Error("kd_loss: alpha and tau_d must be positive");
  const auto& shape = errors_new.shape();
  if (shape.size() != 2) throw Error("kd_loss expects an n x C_old error matrix");
  if (errors_old.shape != shape) throw ShapeError("kd_loss", shape, errors_old.shape);
  const std::size_t n = shape[0], c_old = shape[1];
  if (c_old == 0) return scalar_const(0.0);
  if (n == 0) throw Error("kd_loss on an empty batch");

  // Frozen-model target: tempered error-softmax, computed stably per row.
  const double k = -alpha / tau_d;
  Tensor q = Tensor::zeros({n, c_old});
  for (std::size_t i = 0; i < n; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c_old; ++j) hi = std::max(hi, k * errors_old.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < c_old; ++j) {
      q.at(i, j) = std::exp(k * errors_old.at(i, j) - hi);
      z += q.at(i, j);
    }
    for (std::size_t j = 0; j < c_old; ++j) q.at(i, j) /= z;
  }

  Var logp = log_softmax_rows(scale(errors_new, k));
  return negate(mean(row_sum(mul(constant(std::move(q)), logp))));
}

double confusion_score(std::span<const double> error_row) {
  if (error_row.size() < 2) throw Error("confusion_score needs at least two classes");
  double e1 = std::numeric_limits<double>::infinity();
  double e2 = std::numeric_limits<double>::infinity();
  double emax = -std::numeric_limits<double>::infinity();
  for (double e : error_row) {
    if (!std::isfinite(e)) throw Error("confusion_score: non-finite error value");
    if (e < e1) {
      e2 = e1;
      e1 = e;
    } else if (e < e2) {
      e2 = e;
    }
    emax = std::max(emax, e);
  }
  const double den = emax - e1;
  if (den <= 0.0) return 0.0;  // all errors equal
  return (e2 - e1) / den;
}

double confusion_weight(double score, double beta) {
  if (!std::isfinite(score) || !std::isfinite(beta))
    throw Error("confusion_weight: non-finite input");
  return 1.0 + std::exp(-beta * score);
}

namespace {

Var contrastive_core(const LatentFn& latents, const std::vector<int>& labels,
                     const Var* weights, const LossConfig& cfg) {
  cfg.validate();
  const std::size_t n = labels.size();
  if (n == 0) throw Error("contrastive loss on an empty batch");

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) throw Error("contrastive loss: negative label");
    by_class[labels[i]].push_back(i);
  }

  Var loss;
  for (const auto& [class_id, members] : by_class) {
    const std::size_t cnt = members.size();
    if (cnt < 2) continue;  // no positives: the class contributes nothing

    Var z = latents(static_cast<std::size_t>(class_id));
    if (z.shape().size() != 2 || z.shape()[0] != n)
      throw Error("latent codes for class " + std::to_string(class_id) +
                  " do not cover the batch");
    if (cfg.normalize_latents) z = scale_rows(z, reciprocal(sqrt(row_squared_norm(z))));

    Var sims = scale(matmul(z, transpose(z)), 1.0 / cfg.tau_r);

    Tensor denom_mask = Tensor::zeros({n, n});
    Tensor pos_mask = Tensor::zeros({n, n});
    for (std::size_t a : members) {
      for (std::size_t s = 0; s < n; ++s)
        if (s != a || cfg.include_anchor) denom_mask.at(a, s) = 1.0;
      for (std::size_t p : members)
        if (p != a) pos_mask.at(a, p) = 1.0;
    }

    Var lse = masked_row_lse(sims, denom_mask);
    Var pos_mean = scale(row_sum(mul(sims, constant(std::move(pos_mask)))),
                         1.0 / static_cast<double>(cnt - 1));
    // Non-anchor rows are identically zero in both terms.
    Var per_anchor = sub(lse, pos_mean);
    if (weights) per_anchor = mul(per_anchor, *weights);
    Var term = scale(sum(per_anchor), 1.0 / static_cast<double>(cnt));
    loss = loss.defined() ? add(loss, term) : term;
  }
  return loss.defined() ? loss : scalar_const(0.0);
}

}  // namespace

Var cst_loss(const LatentFn& latents, const std::vector<int>& labels, const LossConfig& cfg) {
  return contrastive_core(latents, labels, nullptr, cfg);
}

Var cr_loss(const LatentFn& latents, const std::vector<int>& labels, const Var& errors,
            const LossConfig& cfg) {
  const auto& shape = errors.shape();
  if (shape.size() != 2 || shape[0] != labels.size())
    throw Error("cr_loss: error matrix does not match the batch");
  if (shape[1] < 2) throw Error("cr_loss needs at least two classes of errors");
  Var scores = confusion_scores(errors);
  Var w = add_scalar(exp(scale(scores, -cfg.beta)), 1.0);
  return contrastive_core(latents, labels, &w, cfg);
}

Var total_loss(const Var& ce, const std::optional<Var>& kd, const std::optional<Var>& cr,
               double lambda) {
  if (!ce.defined() || !ce.value().is_scalar()) throw Error("total_loss: ce must be a scalar");
  Var out = ce;
  if (kd) out = add(out, *kd);
  if (cr && lambda != 0.0) out = add(out, scale(*cr, lambda));
  return out;
}

}  // namespace create
