#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "stprompt/stdata.hpp"

using namespace stprompt;

namespace {

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path);
  out << body;
}

SensorGraph two_node_graph() {
  Mat a(2, 2);
  a.at(0, 1) = 1.0;
  a.at(1, 0) = 1.0;
  return SensorGraph(2, a);
}

StTensor from_values(std::size_t R, std::size_t T, std::vector<double> v) {
  StTensor x(R, T, 1);
  x.data = std::move(v);
  return x;
}

}  // namespace

TEST_CASE("load_readings basics") {
  const std::string path = "readings_test.csv";

  SUBCASE("blank cell becomes exactly one missing marker") {
    write_file(path,
               "sensor_id,timestamp,speed\n"
               "a,0,60\na,1,\na,2,58\n"
               "b,0,55\nb,1,54\nb,2,53\n");
    RawSeries raw = load_readings(path);
    CHECK(raw.n_sensors() == 2);
    CHECK(raw.n_steps() == 3);
    CHECK(raw.missing_count() == 1);
    CHECK(std::isnan(raw.at(0, 1, 0)));
    CHECK(raw.at(1, 1, 0) == 54.0);
  }
  SUBCASE("empty file reports zero sensors") {
    write_file(path, "");
    CHECK_THROWS_WITH_AS(load_readings(path), doctest::Contains("zero sensors"), DataError);
    write_file(path, "sensor_id,timestamp,speed\n");
    CHECK_THROWS_WITH_AS(load_readings(path), doctest::Contains("zero sensors"), DataError);
  }
  SUBCASE("duplicated timestamp row resolves last-write-wins") {
    write_file(path,
               "sensor_id,timestamp,speed\n"
               "a,0,60\na,1,61\na,1,99\na,2,62\n");
    RawSeries raw = load_readings(path);
    CHECK(raw.n_steps() == 3);  // 4 rows, one duplicate
    CHECK(raw.at(0, 1, 0) == 99.0);
  }
  SUBCASE("unparseable cell becomes a missing marker") {
    write_file(path, "sensor_id,timestamp,speed\na,0,oops\na,1,50\n");
    RawSeries raw = load_readings(path);
    CHECK(raw.missing_count() == 1);
  }
  std::remove(path.c_str());
}

TEST_CASE("impute_missing") {
  SensorGraph g = two_node_graph();

  SUBCASE("constant neighbor history imputes the constant") {
    const double c = 7.25;
    RawSeries raw;
    raw.sensor_ids = {"a", "b"};
    raw.feature_names = {"speed"};
    raw.timestamps = {0, 1, 2, 3, 4};
    raw.values.assign(10, c);
    raw.at(0, 3, 0) = std::numeric_limits<double>::quiet_NaN();
    StTensor out = impute_missing(raw, g, 0.1, 288);
    CHECK(out.at(0, 3, 0) == doctest::Approx(c).epsilon(1e-12));
  }

  SUBCASE("literal mode matches the direct 288-term summation oracle") {
    const double c = 3.0;
    const std::size_t T = 400;
    RawSeries raw;
    raw.sensor_ids = {"a", "b"};
    raw.feature_names = {"speed"};
    for (std::size_t t = 0; t < T; ++t) raw.timestamps.push_back(std::int64_t(t));
    raw.values.assign(2 * T, c);
    raw.at(0, 350, 0) = std::numeric_limits<double>::quiet_NaN();
    StTensor out = impute_missing(raw, g, 0.1, 288, /*literal_mode=*/true);

    // oracle: c * (1/288) * sum_{k=0}^{287} exp(-0.1 k), one neighbor
    double expect = 0.0;
    for (int k = 0; k < 288; ++k) expect += std::exp(-0.1 * k);
    expect *= c / 288.0;
    CHECK(out.at(0, 350, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(out.at(0, 350, 0) == doctest::Approx(c * 0.03649).epsilon(1e-3));
  }

  SUBCASE("no missing entries: output bit-identical") {
    RawSeries raw;
    raw.sensor_ids = {"a", "b"};
    raw.feature_names = {"speed"};
    raw.timestamps = {0, 1, 2};
    raw.values = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    StTensor out = impute_missing(raw, g);
    CHECK(out.data == raw.values);
  }

  SUBCASE("self-history fallback when the node has no neighbors") {
    Mat a(2, 2);
    a.at(1, 0) = 1.0;  // node 0 has no out-neighbors
    SensorGraph lonely(2, a);
    RawSeries raw;
    raw.sensor_ids = {"a", "b"};
    raw.feature_names = {"speed"};
    raw.timestamps = {0, 1, 2};
    raw.values = {5.0, 5.0, std::numeric_limits<double>::quiet_NaN(), 1.0, 1.0, 1.0};
    StTensor out = impute_missing(raw, lonely);
    CHECK(out.at(0, 2, 0) == doctest::Approx(5.0));
  }

  SUBCASE("no neighbors and no past data is an error naming the entry") {
    Mat a(2, 2);
    a.at(1, 0) = 1.0;
    SensorGraph lonely(2, a);
    RawSeries raw;
    raw.sensor_ids = {"a", "b"};
    raw.feature_names = {"speed"};
    raw.timestamps = {0, 1};
    raw.values = {std::numeric_limits<double>::quiet_NaN(), 5.0, 1.0, 1.0};
    CHECK_THROWS_WITH_AS(impute_missing(raw, lonely), doctest::Contains("(t=0,i=0)"), DataError);
  }
}

TEST_CASE("remove_anomalies") {
  SensorGraph g = two_node_graph();

  SUBCASE("constant series yields zero flags") {
    StTensor x = from_values(2, 48, std::vector<double>(96, 4.0));
    auto [out, mask] = remove_anomalies(x, g, 5.0, 24);
    CHECK(mask.flags.empty());
    CHECK(out.data == x.data);
  }

  SUBCASE("single extreme entry is flagged, verified by brute-force z") {
    const std::size_t buckets = 24, per_bucket = 50;
    const std::size_t T = buckets * per_bucket;
    StTensor x(2, T, 1);
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t t = 0; t < T; ++t) x.at(r, t, 0) = (t % 2 == 0) ? 1.0 : -1.0;
    }
    const std::size_t hot = 24 * 7 + 3;  // bucket 3
    x.at(0, hot, 0) = 12.0;

    // brute-force z for every member of that bucket
    std::vector<double> vals;
    for (std::size_t t = 3; t < T; t += 24) vals.push_back(x.at(0, t, 0));
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= double(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= double(vals.size());
    const double sd = std::sqrt(var);
    REQUIRE(std::fabs((12.0 - mean) / sd) > 5.0);
    std::size_t expect_flags = 0;
    for (double v : vals) expect_flags += std::fabs((v - mean) / sd) > 5.0 ? 1 : 0;
    REQUIRE(expect_flags == 1);

    auto [out, mask] = remove_anomalies(x, g, 5.0, 24);
    REQUIRE(mask.flags.size() == 1);
    CHECK(mask.flags[0].sensor == 0);
    CHECK(mask.flags[0].timestep == hot);
    CHECK(out.at(0, hot, 0) != 12.0);  // replaced by imputation
  }

  SUBCASE("infinite threshold disables the filter") {
    Rng rng(2);
    StTensor x(2, 48, 1);
    for (auto& v : x.data) v = rng.normal();
    auto [out, mask] = remove_anomalies(x, g, std::numeric_limits<double>::infinity(), 24);
    CHECK(mask.flags.empty());
    CHECK(out.data == x.data);
  }

  SUBCASE("short buckets are skipped with a warning") {
    StTensor x = from_values(2, 30, std::vector<double>(60, 1.0));
    Warnings w;
    remove_anomalies(x, g, 5.0, 24, &w);  // buckets 6..23 have 1 sample
    REQUIRE(w.size() == 1);
    CHECK(w[0].find("buckets") != std::string::npos);
  }
}

TEST_CASE("normalize and denormalize") {
  SUBCASE("values {0,2} map to {-1,+1}") {
    StTensor x = from_values(1, 2, {0.0, 2.0});
    StTensor n = normalize(x);
    CHECK(n.at(0, 0, 0) == doctest::Approx(-1.0));
    CHECK(n.at(0, 1, 0) == doctest::Approx(1.0));
    CHECK(n.mu[0] == doctest::Approx(1.0));
    CHECK(n.sigma[0] == doctest::Approx(1.0));
  }
  SUBCASE("constant feature clamps sigma with a warning") {
    StTensor x = from_values(2, 3, std::vector<double>(6, 9.0));
    Warnings w;
    StTensor n = normalize(x, &w);
    CHECK(w.size() == 1);
    for (double v : n.data) CHECK(v == 0.0);
    CHECK(n.sigma[0] == 1.0);
  }
  SUBCASE("round trip is exact to 1e-6 relative") {
    Rng rng(77);
    StTensor x(3, 50, 2);
    for (auto& v : x.data) v = rng.uniform(-40.0, 90.0);
    StTensor back = denormalize(normalize(x));
    double max_abs = 0.0, max_err = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
      max_abs = std::max(max_abs, std::fabs(x.data[i]));
      max_err = std::max(max_err, std::fabs(back.data[i] - x.data[i]));
    }
    CHECK(max_err < 1e-6 * (1.0 + max_abs));
  }
  SUBCASE("normalize_with uses the supplied statistics") {
    StTensor x = from_values(1, 2, {10.0, 20.0});
    StTensor n = normalize_with(x, {10.0}, {5.0});
    CHECK(n.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(n.at(0, 1, 0) == doctest::Approx(2.0));
    CHECK(denormalize(n).at(0, 1, 0) == doctest::Approx(20.0));
  }
}

TEST_CASE("augment") {
  Rng rng(3);
  StTensor x(2, 96, 1);
  for (auto& v : x.data) v = rng.normal();

  SUBCASE("zero rates are the identity") {
    StTensor out = augment(x, 0.0, 0.0, 24, 42);
    CHECK(out.data == x.data);
  }
  SUBCASE("mask_rate = 1 is rejected") {
    CHECK_THROWS_AS(augment(x, 1.0, 0.0, 24, 1), ConfigError);
  }
  SUBCASE("fixed seed is bit-deterministic") {
    StTensor a = augment(x, 0.2, 0.15, 24, 99);
    StTensor b = augment(x, 0.2, 0.15, 24, 99);
    CHECK(a.data == b.data);
    StTensor c = augment(x, 0.2, 0.15, 24, 100);
    CHECK(a.data != c.data);
  }
  SUBCASE("masking zeroes roughly the requested fraction") {
    StTensor big(4, 2000, 1);
    for (auto& v : big.data) v = 1.0;
    StTensor out = augment(big, 0.2, 0.0, 24, 5);
    std::size_t zeros = 0;
    for (double v : out.data) zeros += v == 0.0 ? 1 : 0;
    const double frac = double(zeros) / double(out.data.size());
    CHECK(frac > 0.10);
    CHECK(frac < 0.30);
  }
}

TEST_CASE("split_chronological") {
  SUBCASE("T=100 with tun_tail=20") {
    SplitPlan p = split_chronological(100, 0.6, 0.2, 0.2, 20);
    CHECK(p.pre.begin == 0);
    CHECK(p.pre.end == 40);
    CHECK(p.tun.begin == 40);
    CHECK(p.tun.end == 60);
    CHECK(p.val.begin == 60);
    CHECK(p.val.end == 80);
    CHECK(p.tst.begin == 80);
    CHECK(p.tst.end == 100);
  }
  SUBCASE("tun_tail = 0 is an empty tun range") {
    CHECK_THROWS_WITH_AS(split_chronological(100, 0.6, 0.2, 0.2, 0),
                         doctest::Contains("empty tun range"), DataError);
  }
  SUBCASE("two-week tail on a 52116-step series") {
    SplitPlan p = split_chronological(52116, 0.6, 0.2, 0.2, 4032);
    CHECK(p.tun.len() == 4032);
    CHECK(p.tun.end == std::size_t(std::floor(0.6 * 52116)));
  }
  SUBCASE("fractions must sum to one") {
    CHECK_THROWS_AS(split_chronological(100, 0.5, 0.2, 0.2, 10), ConfigError);
  }
}

TEST_CASE("window counting and enumeration") {
  SUBCASE("counts match the formula") {
    CHECK(window_count(24, 12, 12, 1) == 1);
    CHECK(window_count(25, 12, 12, 1) == 2);
    CHECK(window_count(23, 12, 12, 1) == 0);
  }
  SUBCASE("short range yields empty stream plus warning") {
    Warnings w;
    auto origins = window_origins({0, 23}, 12, 12, 1, &w);
    CHECK(origins.empty());
    CHECK(w.size() == 1);
  }
  SUBCASE("no window crosses a split boundary (exhaustive, T<=200)") {
    for (std::size_t T : {100u, 137u, 200u}) {
      SplitPlan p = split_chronological(T, 0.6, 0.2, 0.2, T / 10);
      for (const Range* r : {&p.pre, &p.tun, &p.val, &p.tst}) {
        for (std::size_t origin : window_origins(*r, 6, 4)) {
          CHECK(origin >= r->begin);
          CHECK(origin + 6 + 4 <= r->end);
        }
      }
    }
  }
  SUBCASE("gathered batches carry the right values and origins") {
    Rng rng(1);
    StTensor x(2, 40, 1);
    for (std::size_t t = 0; t < 40; ++t) {
      x.at(0, t, 0) = double(t);
      x.at(1, t, 0) = 100.0 + double(t);
    }
    ForecastBatch b = gather_windows(x, {3, 7}, 4, 2);
    CHECK(b.B == 2);
    CHECK(b.origin_times == std::vector<std::int64_t>{3, 7});
    // window 0, node 0: inputs t=3..6, targets t=7..8
    CHECK(b.inputs[0] == 3.0);
    CHECK(b.inputs[3] == 6.0);
    CHECK(b.targets[0] == 7.0);
    CHECK(b.targets[1] == 8.0);
    // window 1, node 1
    CHECK(b.inputs[((1 * 2 + 1) * 4 + 0) * 1] == 107.0);
  }
  SUBCASE("window stream batches the origins") {
    StTensor x(1, 30, 1);
    WindowStream stream(x, {0, 30}, 5, 5, 1, 8);
    CHECK(stream.total_windows() == 21);
    ForecastBatch b;
    std::size_t seen = 0, batches = 0;
    while (stream.next(b)) {
      seen += b.B;
      ++batches;
    }
    CHECK(seen == 21);
    CHECK(batches == 3);
  }
}

TEST_CASE("tensor file round trip") {
  Rng rng(11);
  StTensor x(3, 17, 2);
  for (auto& v : x.data) v = rng.normal();
  StTensor n = normalize(x);
  const std::string path = "tensor_io_test.bin";
  save_tensor(n, path);
  StTensor back = load_tensor(path);
  CHECK(back.R == 3);
  CHECK(back.T == 17);
  CHECK(back.F == 2);
  CHECK(back.normalized);
  CHECK(back.data == n.data);
  CHECK(back.mu == n.mu);
  CHECK(back.sigma == n.sigma);
  std::remove(path.c_str());
}
