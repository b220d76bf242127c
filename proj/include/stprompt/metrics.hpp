#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stprompt/common.hpp"

namespace stprompt {

// Forecast error report with per-node-then-average aggregation: every metric
// is computed for each node first, then averaged across nodes.
struct MetricReport {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;
  double weighted_mae = 0.0;            // horizon-decayed
  std::vector<double> per_horizon_mae;  // length Q
  std::vector<double> per_node_mae;     // length R

  std::string to_csv() const;  // scope,horizon,node,metric,value rows
};

// Flat views: y and yhat are indexed [node][sample] with equal counts per
// node (dense desk-scale layout).
double mae(const std::vector<double>& y, const std::vector<double>& yhat);
double rmse(const std::vector<double>& y, const std::vector<double>& yhat);
double mape(const std::vector<double>& y, const std::vector<double>& yhat, double eps = 1.0);

// sum_h w_h mae_h / sum_h w_h with w_h = decay^h.
double horizon_weighted_mae(const std::vector<double>& per_horizon_mae, double decay = 0.95);

// y, yhat: B x R x Q x F forecast arrays.
MetricReport evaluate_forecast(const std::vector<double>& y, const std::vector<double>& yhat,
                               std::size_t B, std::size_t R, std::size_t Q, std::size_t F,
                               double mape_eps = 1.0, double horizon_decay = 0.95);

}  // namespace stprompt
