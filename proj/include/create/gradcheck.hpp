#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "create/optim.hpp"

namespace create {

struct GradCheckCase {
  std::string loss_name;  // L_CE | L_KD | L_CST | L_CR | total
  int config_index = 0;
  GradCheckReport report;
  bool pass = false;
};

struct GradCheckBattery {
  double tolerance = 1e-4;
  double step = 1e-5;
  std::vector<GradCheckCase> cases;

  bool all_pass() const;
  /// Largest relative error over all configurations of one loss.
  double worst(const std::string& loss_name) const;
};

/// Checks every loss (and their weighted sum) against central finite
/// differences on `num_configs` random small models and batches.
GradCheckBattery run_gradcheck_battery(std::uint64_t seed, int num_configs = 20);

}  // namespace create
