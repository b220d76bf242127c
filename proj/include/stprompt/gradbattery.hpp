#pragma once

#include <string>
#include <vector>

#include "stprompt/gradcheck.hpp"

namespace stprompt::ad {

struct BatteryResult {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t kink_flagged = 0;
  bool pass = false;
};

// Finite-difference verification of every registered differentiable op plus
// a tiny end-to-end forecaster (R=4, d=8, one block). Deterministic.
std::vector<BatteryResult> run_gradient_battery(double tol = 1e-4);

}  // namespace stprompt::ad
