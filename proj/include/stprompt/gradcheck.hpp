#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stprompt/tensor.hpp"

namespace stprompt::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t kink_flagged = 0;  // coordinates excluded for kink proximity
  std::vector<std::string> notes;

  bool pass(double tol = 1e-4) const { return max_rel_err < tol; }
};

// Central finite differences against reverse-mode gradients. `fn` must build
// a scalar from the given leaves each time it is called (fresh tape per
// evaluation); it must be deterministic, so any dropout inside needs a fixed
// seed. Coordinates where a probe step crosses a relu/abs kink are reported
// and excluded from the error maximum rather than failed.
GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                           std::vector<Tensor> inputs, double eps = 1e-3);

// RF = 1 + sum_l (K-1) * dilation_l.
std::size_t receptive_field(std::size_t kernel, const std::vector<std::size_t>& dilations);

// Stacked-inception variant: RF = 1 + max_kernel * (2^layers - 1).
std::size_t inception_receptive_field(std::size_t max_kernel, std::size_t layers);

}  // namespace stprompt::ad
