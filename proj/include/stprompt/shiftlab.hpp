#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stprompt/pipeline.hpp"

namespace stprompt {

struct SyntheticSpec {
  std::size_t n_nodes = 10;   // R
  std::size_t n_steps = 1600;  // T
  std::size_t n_features = 1;
  std::size_t period = 288;   // daily cycle length P
  double amp_lo = 0.8, amp_hi = 1.2;
  double noise_std = 0.05;
  double coupling = 0.2;      // neighbor-mean contribution
  enum class Topology { ring, geometric } topology = Topology::ring;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Synthetic {
  StTensor x;
  SensorGraph graph;
};

// Per-node sinusoids with random amplitude/phase, plus a neighbor-mean
// coupling term and Gaussian noise; bitwise deterministic under seed.
Synthetic gen_synthetic(const SyntheticSpec& spec);

struct ShiftSpec {
  enum class Kind { phase_lag, amplitude_scale, mixed } kind = Kind::phase_lag;
  std::size_t lag = 0;     // steps
  double scale = 1.0;      // multiplicative factor
  Range applied;           // {0,0} means the whole time axis

  void validate() const;
};

// phase: x'(t) = x(t - lag) with leading-edge fill; amplitude: x' = scale*x;
// mixed composes both. Only the applied range changes.
StTensor apply_shift(const StTensor& x, const ShiftSpec& shift);

// Empirical W1 on the line: mean gap of sorted samples for equal counts,
// inverse-CDF midpoint quadrature otherwise.
double wasserstein1_1d(std::vector<double> a, std::vector<double> b);

struct LipschitzEstimate {
  double value = 0.0;       // empirical lower bound
  std::size_t arg_i = 0, arg_j = 0;
  std::size_t pairs_used = 0;
};

// max over sampled probe pairs of ||f(x)-f(x')|| / ||x-x'||; coincident
// pairs are skipped.
LipschitzEstimate estimate_lipschitz(
    const std::function<std::vector<double>(const std::vector<double>&)>& fn,
    const std::vector<std::vector<double>>& probes, std::size_t n_pairs, std::uint64_t seed = 0);

struct StabilityRecord {
  double epsilon = 0.0;  // mean per-feature W1 between pre and tun values
  double lip_g = 0.0;
  double lip_h = 0.0;
  double gap = 0.0;      // mean prediction L2 gap over paired windows
  bool bound_holds = false;  // gap <= lip_g * lip_h * epsilon (diagnostic only)
};

// Lower-bound Lipschitz estimates cannot certify the product inequality, so
// the outcome is recorded, never asserted.
StabilityRecord stability_probe(BackboneModel& frozen_model, PromptNet& prompt,
                                const DataView& pre_data, const Range& pre,
                                const DataView& tun_data, const Range& tun);

struct ArmResult {
  std::string arm;  // prompt | finetune | scratch
  std::size_t scale = 0;
  std::uint64_t seed = 0;
  std::size_t trainable_params = 0;
  std::size_t optimizer_state_bytes = 0;
  std::size_t steps = 0;
  double seconds = 0.0;
  double mae = 0.0, rmse = 0.0, mape = 0.0;
  bool diverged = false;
  std::string batch_digest;
};

struct BenchReport {
  std::vector<ArmResult> rows;
  bool parallel = false;

  std::string to_csv() const;      // scale,arm,seed,params,state_bytes,steps,seconds,mae,rmse,mape
  std::string ratios_csv() const;  // per (scale, seed): speedups and param ratio
};

struct BenchOptions {
  std::vector<std::string> arms = {"prompt", "finetune", "scratch"};
  std::vector<std::size_t> scales = {10};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  SyntheticSpec data;                  // n_nodes overridden per scale
  BackboneConfig backbone;             // n_nodes overridden per scale
  PromptConfig prompt;
  TrainConfig pretrain_cfg;
  TrainConfig tune_cfg;
  ShiftSpec shift;                     // task distribution shift
  bool parallel_arms = false;
};

// Runs every requested arm per (scale, seed) on the synthetic shift task
// with identical batching and stopping rules. Diverged arms are recorded,
// not dropped.
BenchReport run_bench(const BenchOptions& options);

// Pure shape accounting used by scaling checks: no training involved.
struct ParamFootprint {
  std::size_t scale = 0;
  std::size_t prompt_params = 0;
  std::size_t backbone_params = 0;
  std::size_t prompt_state_bytes = 0;
  std::size_t finetune_state_bytes = 0;
};
ParamFootprint arm_param_footprint(std::size_t scale, const BackboneConfig& backbone_template,
                                   const PromptConfig& prompt_cfg);

struct ShiftStudyConfig {
  SyntheticSpec data;
  BackboneConfig backbone;
  PromptConfig prompt;
  TrainConfig pretrain_cfg;
  TrainConfig tune_cfg;
  ShiftSpec shift;
  std::size_t max_tune_steps = 200;
  std::size_t tun_tail = 288;
  std::uint64_t seed = 1;
  // true: references stay clean while inputs drift (sensing-pipeline lag);
  // false: the whole deployment distribution shifts, targets included
  // (e.g. demand growth rescaling every series).
  bool clean_targets = true;
};

struct ShiftRecoveryReport {
  double clean_mae = 0.0;           // frozen baseline on the clean task
  double shifted_frozen_mae = 0.0;  // frozen baseline on the corrupted-input task
  double tuned_mae = 0.0;           // composite after prompt tuning
  double degradation_gap = 0.0;
  double recovery_fraction = 0.0;   // (shifted_frozen - tuned) / gap
  std::size_t tune_steps = 0;
  double edit_magnitude = 0.0;
};

// Corrupted-input recovery study: the shift distorts the model's inputs
// while references stay clean, mirroring a sensing-pipeline drift; the
// prompt is tuned on the shifted tuning slice and scored on the test slice.
ShiftRecoveryReport shift_recovery_study(const ShiftStudyConfig& cfg);

}  // namespace stprompt
