#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "create/autodiff.hpp"
#include "create/errors.hpp"
#include "create/gradcheck.hpp"
#include "create/losses.hpp"
#include "create/model.hpp"
#include "create/rng.hpp"
#include "test_util.hpp"

using namespace create;

namespace {

// Independent scalar recomputation of the subspace contrastive loss: for each
// class with >= 2 batch members, every member anchors against its positives
// over a denominator of all other samples, in that class's latent codes;
// weights (if given) multiply per-anchor terms before the per-class mean.
double contrastive_oracle(const std::vector<Tensor>& z_by_class, const std::vector<int>& labels,
                          const Tensor* errors, double tau_r, double beta) {
  const std::size_t n = labels.size();
  double total = 0.0;
  for (int c : std::set<int>(labels.begin(), labels.end())) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < n; ++i)
      if (labels[i] == c) members.push_back(i);
    if (members.size() < 2) continue;

    const Tensor& z = z_by_class[static_cast<std::size_t>(c)];
    const std::size_t width = z.cols();
    auto sim = [&](std::size_t a, std::size_t k) {
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += z.at(a, j) * z.at(k, j);
      return dot / tau_r;
    };

    double class_term = 0.0;
    for (std::size_t a : members) {
      double shift = -1e300;
      for (std::size_t k = 0; k < n; ++k)
        if (k != a) shift = std::max(shift, sim(a, k));
      double denom = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        if (k != a) denom += std::exp(sim(a, k) - shift);

      double anchor = 0.0;
      for (std::size_t p : members)
        if (p != a) anchor -= sim(a, p) - (shift + std::log(denom));
      anchor /= static_cast<double>(members.size() - 1);

      double w = 1.0;
      if (errors) {
        std::vector<double> row(errors->cols());
        for (std::size_t j = 0; j < row.size(); ++j) row[j] = errors->at(a, j);
        w = confusion_weight(confusion_score(row), beta);
      }
      class_term += w * anchor;
    }
    total += class_term / static_cast<double>(members.size());
  }
  return total;
}

LatentFn constant_latents(const std::vector<Tensor>& z_by_class) {
  return [&z_by_class](std::size_t class_id) { return constant(z_by_class[class_id]); };
}

}  // namespace

TEST_CASE("losses: cross entropy basics") {
  Var one_hot = constant(Tensor::row_major(2, 2, {1.0, 0.0, 0.0, 1.0}));
  CHECK(ce_loss(one_hot, {0, 1}).value().at(0) == 0.0);

  Var uniform = constant(Tensor::full({3, 4}, 0.25));
  CHECK(std::fabs(ce_loss(uniform, {0, 1, 3}).value().at(0) - std::log(4.0)) <= 1e-12);

  // two-class closed form from the error softmax at alpha = 0.1
  Var p = predict_proba(constant(Tensor::row_major(1, 2, {1.0, 2.0})), 0.1);
  const double sigma = 1.0 / (1.0 + std::exp(-0.1));
  CHECK(std::fabs(ce_loss(p, {0}).value().at(0) + std::log(sigma)) <= 1e-12);

  CHECK_THROWS_AS(ce_loss(one_hot, {0}), Error);     // label count mismatch
  CHECK_THROWS_AS(ce_loss(one_hot, {0, 2}), Error);  // label out of range
}

TEST_CASE("losses: distillation vanishes at equality") {
  Rng rng(19);
  Tensor eps = rand_tensor(rng, {4, 3}, 0.2, 3.0);
  const double alpha = 0.7, tau = 2.0;
  Var eps_new = parameter(eps);
  Var kd = kd_loss(eps_new, eps, alpha, tau);

  // the value is the target entropy...
  double entropy = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < 3; ++j) denom += std::exp(-alpha * eps.at(i, j) / tau);
    for (std::size_t j = 0; j < 3; ++j) {
      const double q = std::exp(-alpha * eps.at(i, j) / tau) / denom;
      entropy -= q * std::log(q);
    }
  }
  entropy /= 4.0;
  CHECK(std::fabs(kd.value().at(0) - entropy) <= 1e-12);

  // ...and the gradient with respect to the new errors is zero
  backward(kd);
  for (double g : eps_new.grad().data) CHECK(std::fabs(g) <= 1e-10);
}

TEST_CASE("losses: distillation closed forms") {
  // a single old class carries no information
  Var eps_new = constant(Tensor::row_major(3, 1, {0.5, 1.0, 2.0}));
  Tensor eps_old = Tensor::row_major(3, 1, {2.0, 1.0, 0.5});
  CHECK(kd_loss(eps_new, eps_old, 0.1, 2.0).value().at(0) == 0.0);

  // two classes, swapped errors: -q ln(1-q) - (1-q) ln q with q = 1/(1+e^{-0.05})
  Var swapped = constant(Tensor::row_major(1, 2, {1.0, 0.0}));
  Tensor target = Tensor::row_major(1, 2, {0.0, 1.0});
  const double q = 1.0 / (1.0 + std::exp(-0.05));
  const double expected = -q * std::log(1.0 - q) - (1.0 - q) * std::log(q);
  CHECK(std::fabs(kd_loss(swapped, target, 0.1, 2.0).value().at(0) - expected) <= 1e-12);
}

TEST_CASE("losses: confusion score") {
  CHECK(confusion_score(std::vector<double>{1.0, 1.0, 5.0}) == 0.0);
  CHECK(confusion_score(std::vector<double>{1.0, 2.0, 5.0}) == 0.25);
  CHECK(confusion_score(std::vector<double>{1.0, 5.0}) == 1.0);
  CHECK(confusion_score(std::vector<double>{3.0, 3.0, 3.0}) == 0.0);  // degenerate
  CHECK_THROWS_AS(confusion_score(std::vector<double>{1.0}), Error);

  // invariant under positive affine maps of the whole row
  Rng rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> row(4);
    for (double& v : row) v = rng.uniform(0.0, 5.0);
    const double s = confusion_score(row);
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
    std::vector<double> mapped = row;
    for (double& v : mapped) v = 3.7 * v + 0.9;
    CHECK(std::fabs(confusion_score(mapped) - s) <= 1e-12);
  }
}

TEST_CASE("losses: confusion weight") {
  CHECK(confusion_weight(0.0, 2.0) == 2.0);
  CHECK(std::fabs(confusion_weight(0.25, 2.0) - (1.0 + std::exp(-0.5))) <= 1e-12);
  for (double beta : {0.5, 2.0}) {
    double prev = confusion_weight(0.0, beta);
    for (double s = 0.1; s <= 1.0; s += 0.1) {
      const double w = confusion_weight(s, beta);
      CHECK(w < prev);  // strictly decreasing
      CHECK(w > 1.0);
      CHECK(w <= 2.0);
      prev = w;
    }
    CHECK(std::fabs(confusion_weight(1.0, beta) - (1.0 + std::exp(-beta))) <= 1e-12);
  }
}

TEST_CASE("losses: contrastive corner cases") {
  LossConfig cfg;
  cfg.tau_r = 0.25;

  // singleton classes have no positives anywhere
  Rng rng(1);
  std::vector<Tensor> z = {rand_tensor(rng, {3, 2}), Tensor::zeros({3, 2}),
                           Tensor::zeros({3, 2})};
  CHECK(cst_loss(constant_latents(z), {0, 1, 2}, cfg).value().at(0) == 0.0);

  // one positive pair, identical codes, no negatives: numerator == denominator
  std::vector<Tensor> pair_z = {Tensor::row_major(2, 2, {0.4, -0.2, 0.4, -0.2})};
  CHECK(std::fabs(cst_loss(constant_latents(pair_z), {0, 0}, cfg).value().at(0)) <= 1e-15);

  CHECK_THROWS_AS(cst_loss(constant_latents(z), {}, cfg), Error);
}

TEST_CASE("losses: contrastive losses match a brute-force oracle") {
  LossConfig cfg;
  cfg.tau_r = 0.3;
  cfg.beta = 2.0;

  const std::vector<int> labels = {0, 0, 1};
  std::vector<Tensor> z = {
      Tensor::row_major(3, 2, {0.5, 0.1, 0.6, -0.2, -0.4, 0.3}),
      Tensor::row_major(3, 2, {-0.1, 0.7, 0.2, 0.2, 0.8, -0.5}),
  };
  Tensor eps = Tensor::row_major(3, 2, {0.4, 1.2, 0.9, 0.3, 1.5, 0.8});

  const double plain = cst_loss(constant_latents(z), labels, cfg).value().at(0);
  CHECK(std::fabs(plain - contrastive_oracle(z, labels, nullptr, cfg.tau_r, cfg.beta)) <= 1e-10);

  const double weighted =
      cr_loss(constant_latents(z), labels, constant(eps), cfg).value().at(0);
  CHECK(std::fabs(weighted - contrastive_oracle(z, labels, &eps, cfg.tau_r, cfg.beta)) <= 1e-10);

  // a fully confused anchor (s = 0) is weighted strictly harder
  CHECK(weighted != plain);
}

TEST_CASE("losses: tightening a positive pair lowers the loss") {
  LossConfig cfg;
  cfg.tau_r = 0.3;
  const std::vector<int> labels = {0, 0, 1};
  auto loss_at = [&](double t) {
    std::vector<Tensor> z = {
        Tensor::row_major(3, 2, {0.5, 0.0, t, 0.0, -0.5, 0.3}),
        Tensor::zeros({3, 2}),
    };
    return cst_loss(constant_latents(z), labels, cfg).value().at(0);
  };
  CHECK(loss_at(0.6) < loss_at(0.4));
}

TEST_CASE("losses: total objective composition") {
  Var ce = scalar_const(0.7);
  Var kd = scalar_const(0.4);
  Var cr = scalar_const(0.3);

  CHECK(total_loss(ce, kd, cr, 0.0).value().at(0) == 0.7 + 0.4);
  CHECK(std::fabs(total_loss(ce, std::nullopt, cr, 0.5).value().at(0) - (0.7 + 0.5 * 0.3)) <=
        1e-15);
  CHECK(total_loss(scalar_const(0.0), scalar_const(0.0), scalar_const(0.0), 1.0)
            .value()
            .at(0) == 0.0);
}

TEST_CASE("losses: gradient battery over random configurations") {
  const GradCheckBattery battery = run_gradcheck_battery(1, 6);
  CHECK(battery.all_pass());
  for (const char* name : {"L_CE", "L_KD", "L_CST", "L_CR", "total"})
    CHECK(battery.worst(name) <= battery.tolerance);
}
