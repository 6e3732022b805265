#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "create/autodiff.hpp"

namespace create {

struct LossConfig {
  double alpha = 0.1;   // error-softmax sharpness
  double tau_d = 2.0;   // distillation temperature
  double tau_r = 0.1;   // contrastive temperature
  double beta = 2.0;    // confusion weight sharpness
  double lambda = 1.0;  // weight of the separation term
  bool normalize_latents = false;
  bool include_anchor = false;  // keep the anchor inside its own denominator

  void validate() const;
};

/// Mean cross-entropy of row-stochastic probabilities against integer labels.
Var ce_loss(const Var& probs, const std::vector<int>& labels);

/// Distillation over the first C_old error columns: cross-entropy between the
/// frozen model's tempered error-softmax (target) and the current one,
/// averaged over the batch. Zero old classes yield an exact 0.
Var kd_loss(const Var& errors_new, const Tensor& errors_old, double alpha, double tau_d);

/// Value-level confusion score of one error row: (e2 - e1) / (emax - e1) with
/// e1 <= e2 the two smallest entries; 0 when the row is constant.
double confusion_score(std::span<const double> error_row);
/// w = 1 + exp(-beta * s), in (1, 2].
double confusion_weight(double score, double beta);

/// Per-class latent codes of one batch (class id -> n x l codes).
using LatentFn = std::function<Var(std::size_t class_id)>;

/// Subspace contrastive loss: every sample anchors in its own class's latent
/// space; positives are same-class batch mates. Classes with one sample in
/// the batch contribute nothing.
Var cst_loss(const LatentFn& latents, const std::vector<int>& labels, const LossConfig& cfg);

/// Confusion-weighted variant: anchors are scaled by w = 1 + exp(-beta * s)
/// where s is the (differentiable) confusion score of the sample's error row.
Var cr_loss(const LatentFn& latents, const std::vector<int>& labels, const Var& errors,
            const LossConfig& cfg);

/// L = L_CE + L_KD + lambda * L_CR; omitted parts count as zero.
Var total_loss(const Var& ce, const std::optional<Var>& kd, const std::optional<Var>& cr,
               double lambda);

}  // namespace create
