#include "stprompt/metrics.hpp"

#include <cmath>
#include <sstream>

namespace stprompt {

namespace {

void check_shapes(const std::vector<double>& y, const std::vector<double>& yhat) {
  if (y.size() != yhat.size()) throw ShapeError("metric inputs differ in size");
  if (y.empty()) throw ShapeError("metric inputs are empty");
}

}  // namespace

double mae(const std::vector<double>& y, const std::vector<double>& yhat) {
  check_shapes(y, yhat);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::fabs(y[i] - yhat[i]);
  return acc / static_cast<double>(y.size());
}

double rmse(const std::vector<double>& y, const std::vector<double>& yhat) {
  check_shapes(y, yhat);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - yhat[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(y.size()));
}

double mape(const std::vector<double>& y, const std::vector<double>& yhat, double eps) {
  check_shapes(y, yhat);
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    acc += std::fabs(y[i] - yhat[i]) / std::max(y[i], eps);
  }
  return acc / static_cast<double>(y.size());
}

double horizon_weighted_mae(const std::vector<double>& per_horizon_mae, double decay) {
  if (per_horizon_mae.empty()) throw ShapeError("horizon_weighted_mae: empty horizon list");
  if (decay <= 0.0 || decay > 1.0) throw ConfigError("decay must be in (0,1]");
  double num = 0.0, den = 0.0, w = 1.0;
  for (double m : per_horizon_mae) {
    if (!std::isfinite(m)) throw NumericError("non-finite per-horizon value");
    num += w * m;
    den += w;
    w *= decay;
  }
  return num / den;
}

MetricReport evaluate_forecast(const std::vector<double>& y, const std::vector<double>& yhat,
                               std::size_t B, std::size_t R, std::size_t Q, std::size_t F,
                               double mape_eps, double horizon_decay) {
  if (y.size() != B * R * Q * F) throw ShapeError("evaluate_forecast: bad y size");
  check_shapes(y, yhat);

  auto idx = [&](std::size_t b, std::size_t r, std::size_t q, std::size_t f) {
    return ((b * R + r) * Q + q) * F + f;
  };

  MetricReport rep;
  rep.per_node_mae.assign(R, 0.0);
  rep.per_horizon_mae.assign(Q, 0.0);
  std::vector<double> per_node_rmse(R, 0.0), per_node_mape(R, 0.0);
  std::vector<std::vector<double>> node_horizon(R, std::vector<double>(Q, 0.0));

  const double per_node_count = static_cast<double>(B * Q * F);
  const double per_horizon_count = static_cast<double>(B * F);
  for (std::size_t r = 0; r < R; ++r) {
    double abs_acc = 0.0, sq_acc = 0.0, pct_acc = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t q = 0; q < Q; ++q) {
        for (std::size_t f = 0; f < F; ++f) {
          const double truth = y[idx(b, r, q, f)];
          const double pred = yhat[idx(b, r, q, f)];
          const double d = std::fabs(truth - pred);
          abs_acc += d;
          sq_acc += d * d;
          pct_acc += d / std::max(truth, mape_eps);
          node_horizon[r][q] += d / per_horizon_count;
        }
      }
    }
    rep.per_node_mae[r] = abs_acc / per_node_count;
    per_node_rmse[r] = std::sqrt(sq_acc / per_node_count);
    per_node_mape[r] = pct_acc / per_node_count;
  }

  for (std::size_t r = 0; r < R; ++r) {
    rep.mae += rep.per_node_mae[r];
    rep.rmse += per_node_rmse[r];
    rep.mape += per_node_mape[r];
    for (std::size_t q = 0; q < Q; ++q) rep.per_horizon_mae[q] += node_horizon[r][q];
  }
  const double nr = static_cast<double>(R);
  rep.mae /= nr;
  rep.rmse /= nr;
  rep.mape /= nr;
  for (auto& v : rep.per_horizon_mae) v /= nr;
  rep.weighted_mae = horizon_weighted_mae(rep.per_horizon_mae, horizon_decay);
  return rep;
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "scope,horizon,node,metric,value\n";
  os << "all,,,mae," << mae << "\n";
  os << "all,,,rmse," << rmse << "\n";
  os << "all,,,mape," << mape << "\n";
  os << "all,,,weighted_mae," << weighted_mae << "\n";
  for (std::size_t q = 0; q < per_horizon_mae.size(); ++q) {
    os << "horizon," << q << ",,mae," << per_horizon_mae[q] << "\n";
  }
  for (std::size_t r = 0; r < per_node_mae.size(); ++r) {
    os << "node,," << r << ",mae," << per_node_mae[r] << "\n";
  }
  return os.str();
}

}  // namespace stprompt
