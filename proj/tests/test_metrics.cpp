#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "stprompt/common.hpp"
#include "stprompt/metrics.hpp"

using namespace stprompt;

TEST_CASE("mae and rmse hand examples") {
  CHECK(mae({1.0, 1.0}, {1.0, 1.0}) == 0.0);
  CHECK(rmse({1.0, 1.0}, {1.0, 1.0}) == 0.0);

  // residuals {+1, -1}
  CHECK(mae({1.0, -1.0}, {0.0, 0.0}) == doctest::Approx(1.0));
  CHECK(rmse({1.0, -1.0}, {0.0, 0.0}) == doctest::Approx(1.0));

  // residuals {0, 2}
  CHECK(mae({0.0, 2.0}, {0.0, 0.0}) == doctest::Approx(1.0));
  CHECK(rmse({0.0, 2.0}, {0.0, 0.0}) == doctest::Approx(std::sqrt(2.0)));

  CHECK_THROWS_AS(mae({1.0}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("mape with clamped denominator") {
  CHECK(mape({10.0}, {9.0}) == doctest::Approx(0.1));
  CHECK(mape({0.5}, {0.0}) == doctest::Approx(0.5));  // max(0.5, 1) = 1
  CHECK(mape({10.0}, {10.0}) == 0.0);
}

TEST_CASE("horizon-weighted mae") {
  CHECK(horizon_weighted_mae({3.0, 3.0, 3.0}, 0.95) == doctest::Approx(3.0));
  CHECK(horizon_weighted_mae({1.0, 2.0}, 0.95) ==
        doctest::Approx((1.0 + 0.95 * 2.0) / 1.95).epsilon(1e-9));
  CHECK(horizon_weighted_mae({1.0, 2.0}, 0.95) == doctest::Approx(1.48718).epsilon(1e-5));
  CHECK(horizon_weighted_mae({1.0, 2.0, 3.0}, 1.0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(horizon_weighted_mae({}, 0.95), ShapeError);
}

TEST_CASE("scale behavior") {
  Rng rng(4);
  std::vector<double> y(50), yh(50);
  for (std::size_t i = 0; i < 50; ++i) {
    y[i] = rng.uniform(2.0, 9.0);
    yh[i] = y[i] + rng.normal();
  }
  const double a = 3.7;
  std::vector<double> ya(50), yha(50);
  for (std::size_t i = 0; i < 50; ++i) {
    ya[i] = a * y[i];
    yha[i] = a * yh[i];
  }
  CHECK(mae(ya, yha) == doctest::Approx(a * mae(y, yh)).epsilon(1e-12));
  // mape invariance holds here because min(y) >= 1 before and after scaling
  CHECK(mape(ya, yha) == doctest::Approx(mape(y, yh)).epsilon(1e-12));
}

TEST_CASE("forecast report aggregation") {
  // B=2, R=2, Q=2, F=1 with known residuals
  const std::size_t B = 2, R = 2, Q = 2, F = 1;
  std::vector<double> y(B * R * Q * F, 10.0);
  std::vector<double> yh = y;
  auto idx = [&](std::size_t b, std::size_t r, std::size_t q) { return (b * R + r) * Q + q; };
  yh[idx(0, 0, 0)] = 11.0;  // node 0 residuals: 1,0,0,0 -> mae 0.25
  yh[idx(1, 1, 1)] = 8.0;   // node 1 residuals: 0,0,0,2 -> mae 0.5

  MetricReport rep = evaluate_forecast(y, yh, B, R, Q, F);
  CHECK(rep.per_node_mae[0] == doctest::Approx(0.25));
  CHECK(rep.per_node_mae[1] == doctest::Approx(0.5));
  CHECK(rep.mae == doctest::Approx(0.375));
  // per-node mean reproduces the scalar
  CHECK((rep.per_node_mae[0] + rep.per_node_mae[1]) / 2.0 ==
        doctest::Approx(rep.mae).epsilon(1e-9));
  // per-horizon: h0 residuals {1,0,0,0} -> 0.25 ; h1 {0,0,0,2} -> 0.5
  CHECK(rep.per_horizon_mae[0] == doctest::Approx(0.25));
  CHECK(rep.per_horizon_mae[1] == doctest::Approx(0.5));
  CHECK(rep.weighted_mae ==
        doctest::Approx((0.25 + 0.95 * 0.5) / 1.95).epsilon(1e-9));
  CHECK(rep.rmse >= rep.mae);

  const std::string csv = rep.to_csv();
  CHECK(csv.find("scope,horizon,node,metric,value") == 0);
  CHECK(csv.find("all,,,mae,") != std::string::npos);
}

TEST_CASE("rmse >= mae on random reports") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.index(64);
    std::vector<double> y(n), yh(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.normal() * 10.0;
      yh[i] = y[i] + rng.normal() * rng.uniform(0.0, 5.0);
    }
    CHECK(rmse(y, yh) >= mae(y, yh) - 1e-12);
  }
}

TEST_CASE("per-node-then-average equals flat average for equal counts") {
  Rng rng(12);
  const std::size_t B = 3, R = 4, Q = 5, F = 1;
  std::vector<double> y(B * R * Q * F), yh(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = rng.normal();
    yh[i] = y[i] + rng.normal();
  }
  MetricReport rep = evaluate_forecast(y, yh, B, R, Q, F);
  CHECK(rep.mae == doctest::Approx(mae(y, yh)).epsilon(1e-9));
}
