#pragma once

#include <cstdint>
#include <string>

#include "stprompt/params.hpp"
#include "stprompt/tensor.hpp"

namespace stprompt {

// Residual temporal editor: a valid convolution compresses the input window
// from `window` to `window - kernel + 1` steps, an affine time map restores
// the original length, and a zero-initialized output projection makes the
// untrained network an exact identity.
struct PromptConfig {
  std::size_t d_hidden = 32;
  std::size_t tcn_layers = 2;   // embedding + temporal conv
  std::size_t mlp_layers = 2;   // time restoration + output projection
  std::size_t kernel = 7;       // valid conv span over the time axis
  double dropout_rate = 0.1;    // active in train mode only
  bool zero_init_output = true;
  std::size_t window = 12;      // T_tun, the edited window length
  std::size_t n_features = 1;

  std::size_t compressed() const { return window - kernel + 1; }  // T'_tun
  void validate() const;

  std::string serialize() const;
  static PromptConfig parse(const std::string& text);
};

class PromptNet {
 public:
  PromptNet(PromptConfig cfg, std::uint64_t seed);

  const PromptConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // X: [R, T, F] or [B, R, T, F]; output has the same shape. Regions are
  // edited independently. dropout_seed only matters in train mode.
  ad::Tensor forward(const ad::Tensor& x, bool train_mode, std::uint64_t dropout_seed = 0);

  // ||h(X) - X||_F / (||X||_F + 1e-12), evaluated in eval mode.
  double edit_magnitude(const ad::Tensor& x);

  PromptNet clone() const;
  std::string describe() const;  // per-layer shapes and counts

 private:
  PromptNet() = default;
  PromptConfig cfg_;
  ParamStore params_;
};

// Preliminary residual editor used for ablations: H = TCN(X), Z = relu(WH+b),
// X~ = X + UZ. U is zero-initialized so the editor starts as the identity.
class SimpleEditor {
 public:
  SimpleEditor(std::size_t n_features, std::size_t d_hidden, std::uint64_t seed,
               std::size_t kernel = 3, double dropout_rate = 0.1);

  ad::Tensor forward(const ad::Tensor& x, bool train_mode, std::uint64_t dropout_seed = 0);
  ParamStore& params() { return params_; }

 private:
  std::size_t f_, d_, kernel_;
  double dropout_rate_;
  ParamStore params_;
  ad::BatchNorm1d bn1_, bn2_;
};

struct ToyFitReport {
  double pre_mae = 0.0;   // identity-edit error before tuning
  double post_mae = 0.0;  // error after `steps` of gradient descent
  double edit_magnitude = 0.0;
  bool lag_exceeds_span = false;
  std::size_t steps_run = 0;
};

// Single-node lag-correction study: inputs are the series delayed by
// `lag` steps, references are the undelayed series over the same windows;
// the prompt is tuned to cancel the delay. A lag beyond the conv span is
// reported as a warning, not an error.
ToyFitReport toy_phase_fit(PromptNet& net, const std::vector<double>& series, std::size_t lag,
                           std::size_t steps, double lr = 1e-2, Warnings* warnings = nullptr);

}  // namespace stprompt
