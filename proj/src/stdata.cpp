#include "stprompt/stdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace stprompt {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

bool is_missing(double v) { return std::isnan(v); }

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

std::optional<double> parse_cell(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    while (used < s.size() && std::isspace(static_cast<unsigned char>(s[used]))) ++used;
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (...) {
    return std::nullopt;
  }
}

// Shared imputation core over an R x T x F buffer with NaN markers. Reads
// only originally observed values, so results are order-independent.
void impute_nan_buffer(std::vector<double>& buf, std::size_t R, std::size_t T, std::size_t F,
                       const SensorGraph& graph, double decay, std::size_t window,
                       bool literal_mode) {
  if (window < 1) throw ConfigError("imputation window must be >= 1");
  if (graph.n() != R) {
    throw DataError("graph node count " + std::to_string(graph.n()) +
                    " does not match sensor count " + std::to_string(R));
  }
  const std::vector<double> src = buf;
  auto at = [&](std::size_t r, std::size_t t, std::size_t f) {
    return src[(r * T + t) * F + f];
  };
  std::vector<std::string> failures;
  for (std::size_t r = 0; r < R; ++r) {
    const auto& nbrs = graph.neighbors(r);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t f = 0; f < F; ++f) {
        if (!is_missing(at(r, t, f))) continue;
        double wsum = 0.0, acc = 0.0;
        for (std::size_t j : nbrs) {
          for (std::size_t k = 0; k < window && k <= t; ++k) {
            const double v = at(j, t - k, f);
            if (is_missing(v)) continue;
            const double w = std::exp(-decay * static_cast<double>(k));
            acc += w * v;
            wsum += w;
          }
        }
        if (literal_mode) {
          // raw formula: averages over the neighborhood and the full window
          // without renormalizing to the available terms
          buf[(r * T + t) * F + f] =
              nbrs.empty() ? kMissing
                           : acc / (static_cast<double>(nbrs.size()) *
                                    static_cast<double>(window));
          if (nbrs.empty()) {
            failures.push_back("(t=" + std::to_string(t) + ",i=" + std::to_string(r) + ")");
          }
          continue;
        }
        if (wsum == 0.0) {
          // no neighbor data: fall back to the node's own past
          for (std::size_t k = 1; k <= window && k <= t; ++k) {
            const double v = at(r, t - k, f);
            if (is_missing(v)) continue;
            const double w = std::exp(-decay * static_cast<double>(k));
            acc += w * v;
            wsum += w;
          }
        }
        if (wsum == 0.0) {
          failures.push_back("(t=" + std::to_string(t) + ",i=" + std::to_string(r) + ")");
          continue;
        }
        buf[(r * T + t) * F + f] = acc / wsum;
      }
    }
  }
  if (!failures.empty()) {
    std::string msg = "unimputable entries:";
    for (std::size_t i = 0; i < failures.size() && i < 16; ++i) msg += " " + failures[i];
    if (failures.size() > 16) msg += " ... (" + std::to_string(failures.size()) + " total)";
    throw DataError(msg);
  }
}

}  // namespace

std::size_t RawSeries::missing_count() const {
  std::size_t n = 0;
  for (double v : values) n += is_missing(v) ? 1 : 0;
  return n;
}

void StTensor::check_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError("StTensor contains non-finite entries");
  }
}

RawSeries load_readings(const std::string& path, const ReadingsSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open readings file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError("zero sensors: empty readings file " + path);
  const auto cols = split_csv_row(header);

  auto col_index = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (cols[i] == name) return i;
    }
    return std::nullopt;
  };
  const auto sensor_idx = col_index(schema.sensor_col);
  const auto time_idx = col_index(schema.time_col);
  if (!sensor_idx || !time_idx) {
    throw DataError("readings header missing '" + schema.sensor_col + "' or '" +
                    schema.time_col + "' column");
  }

  std::vector<std::pair<std::string, std::size_t>> feature_cols;  // name, column
  if (schema.feature_cols.empty()) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i != *sensor_idx && i != *time_idx) feature_cols.emplace_back(cols[i], i);
    }
  } else {
    for (const auto& name : schema.feature_cols) {
      const auto idx = col_index(name);
      if (!idx) throw DataError("feature column not found: " + name);
      feature_cols.emplace_back(name, *idx);
    }
  }
  if (feature_cols.empty()) throw DataError("readings file has no feature columns");

  struct Row {
    std::string sensor;
    std::int64_t time;
    std::vector<double> feats;
  };
  std::vector<Row> rows;
  std::set<std::string> sensors;
  std::set<std::int64_t> times;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_row(line);
    if (cells.size() < cols.size()) throw DataError("short row in readings file: " + line);
    Row row;
    row.sensor = cells[*sensor_idx];
    try {
      row.time = std::stoll(cells[*time_idx]);
    } catch (...) {
      throw DataError("unparseable timestamp in row: " + line);
    }
    row.feats.reserve(feature_cols.size());
    for (const auto& [name, idx] : feature_cols) {
      const auto v = parse_cell(cells[idx]);
      row.feats.push_back(v ? *v : kMissing);
    }
    sensors.insert(row.sensor);
    times.insert(row.time);
    rows.push_back(std::move(row));
  }
  if (sensors.empty()) throw DataError("zero sensors in readings file " + path);

  RawSeries out;
  out.sensor_ids.assign(sensors.begin(), sensors.end());
  out.timestamps.assign(times.begin(), times.end());
  for (const auto& [name, idx] : feature_cols) out.feature_names.push_back(name);
  out.values.assign(out.n_sensors() * out.n_steps() * out.n_features(), kMissing);

  std::map<std::string, std::size_t> sensor_pos;
  for (std::size_t i = 0; i < out.sensor_ids.size(); ++i) sensor_pos[out.sensor_ids[i]] = i;
  std::map<std::int64_t, std::size_t> time_pos;
  for (std::size_t i = 0; i < out.timestamps.size(); ++i) time_pos[out.timestamps[i]] = i;

  // file order, so duplicated (sensor, timestamp) rows resolve last-write-wins
  for (const auto& row : rows) {
    const std::size_t s = sensor_pos[row.sensor];
    const std::size_t t = time_pos[row.time];
    for (std::size_t f = 0; f < row.feats.size(); ++f) out.at(s, t, f) = row.feats[f];
  }
  for (std::size_t i = 1; i < out.timestamps.size(); ++i) {
    if (out.timestamps[i] <= out.timestamps[i - 1]) {
      throw DataError("non-monotone timestamps after dedup");
    }
  }
  return out;
}

StTensor impute_missing(const RawSeries& raw, const SensorGraph& graph, double decay,
                        std::size_t window, bool literal_mode) {
  StTensor out(raw.n_sensors(), raw.n_steps(), raw.n_features());
  out.data = raw.values;
  impute_nan_buffer(out.data, out.R, out.T, out.F, graph, decay, window, literal_mode);
  out.check_finite();
  return out;
}

std::pair<StTensor, AnomalyMask> remove_anomalies(const StTensor& x, const SensorGraph& graph,
                                                  double z_thresh, std::size_t week_period,
                                                  Warnings* warnings) {
  if (z_thresh <= 0.0) throw ConfigError("z_thresh must be positive");
  if (week_period < 1) throw ConfigError("week_period must be >= 1");
  x.check_finite();

  const std::size_t step = std::max<std::size_t>(1, week_period / 168);
  const std::size_t n_buckets = (week_period + step - 1) / step;

  AnomalyMask mask;
  StTensor out = x;
  std::size_t skipped_buckets = 0;
  std::vector<std::vector<std::size_t>> bucket_members(n_buckets);
  for (std::size_t t = 0; t < x.T; ++t) bucket_members[(t % week_period) / step].push_back(t);

  for (std::size_t r = 0; r < x.R; ++r) {
    for (std::size_t f = 0; f < x.F; ++f) {
      for (std::size_t b = 0; b < n_buckets; ++b) {
        const auto& members = bucket_members[b];
        if (members.size() < 2) {
          if (!members.empty()) ++skipped_buckets;
          continue;
        }
        double mean = 0.0;
        for (std::size_t t : members) mean += x.at(r, t, f);
        mean /= static_cast<double>(members.size());
        double var = 0.0;
        for (std::size_t t : members) {
          const double d = x.at(r, t, f) - mean;
          var += d * d;
        }
        var /= static_cast<double>(members.size());
        const double sd = std::sqrt(var);
        if (sd == 0.0) continue;  // constant bucket: z defined as 0
        for (std::size_t t : members) {
          const double z = (x.at(r, t, f) - mean) / sd;
          if (std::fabs(z) > z_thresh) {
            mask.flags.push_back({r, t, f});
            out.at(r, t, f) = kMissing;
          }
        }
      }
    }
  }
  if (skipped_buckets > 0) {
    warn(warnings, "remove_anomalies: skipped " + std::to_string(skipped_buckets / (x.R * x.F)) +
                       " hour-of-week buckets with < 2 samples");
  }
  if (!mask.flags.empty()) {
    impute_nan_buffer(out.data, out.R, out.T, out.F, graph, 0.1, 288, false);
  }
  out.check_finite();
  return {std::move(out), std::move(mask)};
}

void AnomalyMask::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write anomaly mask: " + path);
  out << "sensor,timestamp,feature\n";
  for (const auto& f : flags) out << f.sensor << "," << f.timestep << "," << f.feature << "\n";
}

StTensor normalize(const StTensor& x, Warnings* warnings) {
  x.check_finite();
  StTensor out = x;
  out.mu.assign(x.F, 0.0);
  out.sigma.assign(x.F, 1.0);
  const double n = static_cast<double>(x.R * x.T);
  for (std::size_t f = 0; f < x.F; ++f) {
    double mean = 0.0;
    for (std::size_t r = 0; r < x.R; ++r) {
      for (std::size_t t = 0; t < x.T; ++t) mean += x.at(r, t, f);
    }
    mean /= n;
    double var = 0.0;
    for (std::size_t r = 0; r < x.R; ++r) {
      for (std::size_t t = 0; t < x.T; ++t) {
        const double d = x.at(r, t, f) - mean;
        var += d * d;
      }
    }
    var /= n;
    double sd = std::sqrt(var);
    if (sd == 0.0) {
      warn(warnings, "normalize: feature " + std::to_string(f) + " has zero std, clamped to 1");
      sd = 1.0;
    }
    out.mu[f] = mean;
    out.sigma[f] = sd;
    for (std::size_t r = 0; r < x.R; ++r) {
      for (std::size_t t = 0; t < x.T; ++t) out.at(r, t, f) = (x.at(r, t, f) - mean) / sd;
    }
  }
  out.normalized = true;
  return out;
}

StTensor normalize_with(const StTensor& x, const std::vector<double>& mu,
                        const std::vector<double>& sigma) {
  if (mu.size() != x.F || sigma.size() != x.F) {
    throw ShapeError("normalize_with: statistics must have one entry per feature");
  }
  x.check_finite();
  StTensor out = x;
  for (std::size_t f = 0; f < x.F; ++f) {
    if (sigma[f] <= 0.0) throw ConfigError("normalize_with: sigma must be positive");
    for (std::size_t r = 0; r < x.R; ++r) {
      for (std::size_t t = 0; t < x.T; ++t) out.at(r, t, f) = (x.at(r, t, f) - mu[f]) / sigma[f];
    }
  }
  out.mu = mu;
  out.sigma = sigma;
  out.normalized = true;
  return out;
}

StTensor denormalize(const StTensor& x) {
  if (!x.normalized) throw ContractError("denormalize on a tensor without recorded statistics");
  StTensor out = x;
  for (std::size_t f = 0; f < x.F; ++f) {
    for (std::size_t r = 0; r < x.R; ++r) {
      for (std::size_t t = 0; t < x.T; ++t) {
        out.at(r, t, f) = x.at(r, t, f) * x.sigma[f] + x.mu[f];
      }
    }
  }
  out.normalized = false;
  out.mu.clear();
  out.sigma.clear();
  return out;
}

StTensor augment(const StTensor& x, double mask_rate, double warp_pct, std::size_t warp_window,
                 std::uint64_t seed) {
  if (mask_rate < 0.0 || mask_rate >= 1.0) throw ConfigError("mask_rate must be in [0,1)");
  if (warp_pct < 0.0 || warp_pct >= 1.0) throw ConfigError("warp_pct must be in [0,1)");
  StTensor out = x;
  Rng rng(seed);

  if (mask_rate > 0.0) {
    const std::size_t seg_len = 12;
    const std::size_t total = x.R * x.T;
    const std::size_t n_segments =
        static_cast<std::size_t>(std::ceil(mask_rate * static_cast<double>(total) /
                                           static_cast<double>(seg_len)));
    for (std::size_t s = 0; s < n_segments; ++s) {
      const std::size_t r = rng.index(x.R);
      const std::size_t t0 = rng.index(x.T);
      for (std::size_t t = t0; t < std::min(t0 + seg_len, x.T); ++t) {
        for (std::size_t f = 0; f < x.F; ++f) out.at(r, t, f) = 0.0;
      }
    }
  }

  if (warp_pct > 0.0 && warp_window > 0) {
    const std::size_t block = 2 * warp_window;
    if (x.T >= block) {
      const std::size_t per_sensor = std::max<std::size_t>(1, x.T / (4 * warp_window));
      for (std::size_t r = 0; r < x.R; ++r) {
        for (std::size_t b = 0; b < per_sensor; ++b) {
          const std::size_t t0 = rng.index(x.T - block + 1);
          const double factor = 1.0 + warp_pct * (2.0 * rng.uniform() - 1.0);
          std::vector<double> orig(block * x.F);
          for (std::size_t i = 0; i < block; ++i) {
            for (std::size_t f = 0; f < x.F; ++f) orig[i * x.F + f] = out.at(r, t0 + i, f);
          }
          for (std::size_t i = 0; i < block; ++i) {
            double pos = static_cast<double>(i) / factor;
            if (pos > static_cast<double>(block - 1)) pos = static_cast<double>(block - 1);
            const std::size_t lo = static_cast<std::size_t>(pos);
            const std::size_t hi = std::min(lo + 1, block - 1);
            const double frac = pos - static_cast<double>(lo);
            for (std::size_t f = 0; f < x.F; ++f) {
              out.at(r, t0 + i, f) =
                  (1.0 - frac) * orig[lo * x.F + f] + frac * orig[hi * x.F + f];
            }
          }
        }
      }
    }
  }
  return out;
}

SplitPlan split_chronological(std::size_t T, double f_train, double f_val, double f_tst,
                              std::size_t tun_tail) {
  if (std::fabs(f_train + f_val + f_tst - 1.0) > 1e-9) {
    throw ConfigError("split fractions must sum to 1");
  }
  const auto train_end = static_cast<std::size_t>(std::floor(f_train * static_cast<double>(T)));
  const auto val_len = static_cast<std::size_t>(std::floor(f_val * static_cast<double>(T)));
  if (tun_tail > train_end) throw ConfigError("tun_tail exceeds the training window");

  SplitPlan plan;
  plan.pre = {0, train_end - tun_tail};
  plan.tun = {train_end - tun_tail, train_end};
  plan.val = {train_end, train_end + val_len};
  plan.tst = {train_end + val_len, T};
  if (plan.pre.empty()) throw DataError("empty pre range");
  if (plan.tun.empty()) throw DataError("empty tun range");
  if (plan.val.empty()) throw DataError("empty val range");
  if (plan.tst.empty()) throw DataError("empty tst range");
  return plan;
}

std::size_t window_count(std::size_t range_len, std::size_t l_in, std::size_t l_out,
                         std::size_t stride) {
  if (range_len < l_in + l_out) return 0;
  return (range_len - l_in - l_out) / stride + 1;
}

std::vector<std::size_t> window_origins(const Range& range, std::size_t l_in, std::size_t l_out,
                                        std::size_t stride, Warnings* warnings) {
  if (l_in == 0 || l_out == 0) throw ConfigError("window lengths must be positive");
  if (stride == 0) throw ConfigError("stride must be >= 1");
  std::vector<std::size_t> origins;
  const std::size_t count = window_count(range.len(), l_in, l_out, stride);
  if (count == 0) {
    warn(warnings, "window range [" + std::to_string(range.begin) + "," +
                       std::to_string(range.end) + ") shorter than L_in+L_out; no samples");
    return origins;
  }
  origins.reserve(count);
  for (std::size_t i = 0; i < count; ++i) origins.push_back(range.begin + i * stride);
  return origins;
}

ForecastBatch gather_windows(const StTensor& x, const std::vector<std::size_t>& origins,
                             std::size_t l_in, std::size_t l_out) {
  ForecastBatch batch;
  batch.B = origins.size();
  batch.R = x.R;
  batch.L_in = l_in;
  batch.L_out = l_out;
  batch.F = x.F;
  batch.inputs.resize(batch.B * x.R * l_in * x.F);
  batch.targets.resize(batch.B * x.R * l_out * x.F);
  for (std::size_t b = 0; b < batch.B; ++b) {
    const std::size_t o = origins[b];
    if (o + l_in + l_out > x.T) throw ShapeError("window exceeds tensor length");
    batch.origin_times.push_back(static_cast<std::int64_t>(o));
    for (std::size_t r = 0; r < x.R; ++r) {
      for (std::size_t t = 0; t < l_in; ++t) {
        for (std::size_t f = 0; f < x.F; ++f) {
          batch.inputs[((b * x.R + r) * l_in + t) * x.F + f] = x.at(r, o + t, f);
        }
      }
      for (std::size_t t = 0; t < l_out; ++t) {
        for (std::size_t f = 0; f < x.F; ++f) {
          batch.targets[((b * x.R + r) * l_out + t) * x.F + f] = x.at(r, o + l_in + t, f);
        }
      }
    }
  }
  return batch;
}

WindowStream::WindowStream(const StTensor& x, const Range& range, std::size_t l_in,
                           std::size_t l_out, std::size_t stride, std::size_t batch_size,
                           Warnings* warnings)
    : x_(x),
      origins_(window_origins(range, l_in, l_out, stride, warnings)),
      l_in_(l_in),
      l_out_(l_out),
      batch_size_(batch_size) {
  if (batch_size_ == 0) throw ConfigError("batch size must be >= 1");
}

bool WindowStream::next(ForecastBatch& out) {
  if (pos_ >= origins_.size()) return false;
  const std::size_t take = std::min(batch_size_, origins_.size() - pos_);
  std::vector<std::size_t> chunk(origins_.begin() + std::ptrdiff_t(pos_),
                                 origins_.begin() + std::ptrdiff_t(pos_ + take));
  out = gather_windows(x_, chunk, l_in_, l_out_);
  pos_ += take;
  return true;
}

void save_tensor(const StTensor& x, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write tensor file: " + path);
  out.precision(17);
  out << "sttns 1\n" << x.R << " " << x.T << " " << x.F << " " << (x.normalized ? 1 : 0) << "\n";
  if (x.normalized) {
    for (std::size_t f = 0; f < x.F; ++f) out << x.mu[f] << " " << x.sigma[f] << "\n";
  }
  out << "data\n";
  out.write(reinterpret_cast<const char*>(x.data.data()),
            std::streamsize(x.data.size() * sizeof(double)));
  if (!out) throw DataError("tensor write failed: " + path);
}

StTensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tensor file: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "sttns" || version != 1) throw DataError("not a tensor file: " + path);
  std::size_t R = 0, T = 0, F = 0;
  int normalized = 0;
  in >> R >> T >> F >> normalized;
  StTensor x(R, T, F);
  if (normalized) {
    x.normalized = true;
    x.mu.resize(F);
    x.sigma.resize(F);
    for (std::size_t f = 0; f < F; ++f) in >> x.mu[f] >> x.sigma[f];
  }
  std::string tag;
  in >> tag;
  if (tag != "data") throw DataError("tensor file missing data section");
  in.ignore(1, '\n');
  in.read(reinterpret_cast<char*>(x.data.data()), std::streamsize(x.data.size() * sizeof(double)));
  if (std::size_t(in.gcount()) != x.data.size() * sizeof(double)) {
    throw DataError("tensor file truncated");
  }
  return x;
}

}  // namespace stprompt
