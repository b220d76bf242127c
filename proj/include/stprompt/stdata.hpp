#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stprompt/common.hpp"
#include "stprompt/graph.hpp"

namespace stprompt {

// Raw ingested readings; missing values are NaN sentinels.
struct RawSeries {
  std::vector<std::string> sensor_ids;       // sorted ascending
  std::vector<std::int64_t> timestamps;      // strictly increasing
  std::vector<std::string> feature_names;
  std::vector<double> values;                // sensor x time x feature

  std::size_t n_sensors() const { return sensor_ids.size(); }
  std::size_t n_steps() const { return timestamps.size(); }
  std::size_t n_features() const { return feature_names.size(); }
  double& at(std::size_t s, std::size_t t, std::size_t f) {
    return values[(s * n_steps() + t) * n_features() + f];
  }
  double at(std::size_t s, std::size_t t, std::size_t f) const {
    return values[(s * n_steps() + t) * n_features() + f];
  }
  std::size_t missing_count() const;
};

// Dense finite tensor over (region, time, feature) with optional recorded
// normalization statistics.
struct StTensor {
  std::size_t R = 0, T = 0, F = 0;
  std::vector<double> data;                // R x T x F
  std::vector<double> mu, sigma;           // per feature, set when normalized
  bool normalized = false;

  StTensor() = default;
  StTensor(std::size_t r, std::size_t t, std::size_t f)
      : R(r), T(t), F(f), data(r * t * f, 0.0) {}

  double& at(std::size_t r, std::size_t t, std::size_t f) {
    return data[(r * T + t) * F + f];
  }
  double at(std::size_t r, std::size_t t, std::size_t f) const {
    return data[(r * T + t) * F + f];
  }
  void check_finite() const;
};

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;  // half open
  std::size_t len() const { return end - begin; }
  bool empty() const { return end <= begin; }
};

// Four contiguous chronological ranges: pre | tun | val | tst, where tun is
// the trailing slice of the training window.
struct SplitPlan {
  Range pre, tun, val, tst;
};

struct ForecastBatch {
  std::size_t B = 0, R = 0, L_in = 0, L_out = 0, F = 0;
  std::vector<double> inputs;   // B x R x L_in x F
  std::vector<double> targets;  // B x R x L_out x F
  std::vector<std::int64_t> origin_times;
};

struct AnomalyMask {
  struct Flag {
    std::size_t sensor, timestep, feature;
  };
  std::vector<Flag> flags;
  void save(const std::string& path) const;  // sensor,timestamp,feature triples
};

// Column mapping for delimited readings files. Empty feature list selects
// every column that is not the sensor id or timestamp.
struct ReadingsSchema {
  std::string sensor_col = "sensor_id";
  std::string time_col = "timestamp";
  std::vector<std::string> feature_cols;
};

// Header row `sensor_id,timestamp,<feature...>`, one row per
// (sensor, timestamp); empty or unparseable cells become missing markers,
// duplicated (sensor, timestamp) rows resolve last-write-wins.
RawSeries load_readings(const std::string& path, const ReadingsSchema& schema = {});

// Neighbor/time weighted average over a trailing window with weights
// w_k ~ exp(-decay*k), normalized to sum 1 over available terms so constants
// are fixed points. A node with no neighbor data falls back to its own past.
// literal_mode applies the raw un-normalized weighting (1/|N|)(1/window)
// sum_k exp(-decay*k) x and exists for diagnostics only.
StTensor impute_missing(const RawSeries& raw, const SensorGraph& graph, double decay = 0.1,
                        std::size_t window = 288, bool literal_mode = false);

// Hour-of-week z-score filter: entries with |z| > z_thresh within their
// (sensor, feature, hour-of-week) bucket are flagged and re-imputed.
// Buckets with fewer than 2 samples are skipped with a warning. Zero-variance
// buckets define z = 0.
std::pair<StTensor, AnomalyMask> remove_anomalies(const StTensor& x, const SensorGraph& graph,
                                                  double z_thresh = 5.0,
                                                  std::size_t week_period = 2016,
                                                  Warnings* warnings = nullptr);

// Per-feature standardization over all (r, t). Zero stds clamp to 1 with a
// warning. denormalize inverts using the recorded statistics.
StTensor normalize(const StTensor& x, Warnings* warnings = nullptr);
StTensor denormalize(const StTensor& x);

// Standardizes with externally supplied statistics (e.g. shifted deployment
// data normalized with the training-era stats).
StTensor normalize_with(const StTensor& x, const std::vector<double>& mu,
                        const std::vector<double>& sigma);

// Training-split augmentation: random contiguous segment masking (expected
// masked fraction ~ mask_rate) plus per-block temporal warping by a factor in
// [1-warp_pct, 1+warp_pct] with linear resampling. Pure function of
// (input, seed).
StTensor augment(const StTensor& x, double mask_rate = 0.2, double warp_pct = 0.15,
                 std::size_t warp_window = 24, std::uint64_t seed = 0);

SplitPlan split_chronological(std::size_t T, double f_train = 0.6, double f_val = 0.2,
                              double f_tst = 0.2, std::size_t tun_tail = 288);

std::size_t window_count(std::size_t range_len, std::size_t l_in, std::size_t l_out,
                         std::size_t stride);

// Origins of supervised windows fully inside `range`; empty plus a warning
// when the range is too short.
std::vector<std::size_t> window_origins(const Range& range, std::size_t l_in, std::size_t l_out,
                                        std::size_t stride = 1, Warnings* warnings = nullptr);

// Materializes one batch from window origins (inputs [o, o+L_in), targets
// [o+L_in, o+L_in+L_out)).
ForecastBatch gather_windows(const StTensor& x, const std::vector<std::size_t>& origins,
                             std::size_t l_in, std::size_t l_out);

// Streaming view over a range: yields batches of at most batch_size windows.
class WindowStream {
 public:
  WindowStream(const StTensor& x, const Range& range, std::size_t l_in, std::size_t l_out,
               std::size_t stride = 1, std::size_t batch_size = 1, Warnings* warnings = nullptr);
  bool next(ForecastBatch& out);
  void reset() { pos_ = 0; }
  std::size_t total_windows() const { return origins_.size(); }

 private:
  const StTensor& x_;
  std::vector<std::size_t> origins_;
  std::size_t l_in_, l_out_, batch_size_;
  std::size_t pos_ = 0;
};

// Binary tensor file (float64 payload) used by the CLI between stages.
void save_tensor(const StTensor& x, const std::string& path);
StTensor load_tensor(const std::string& path);

}  // namespace stprompt
