#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "stprompt/shiftlab.hpp"

using namespace stprompt;
using ad::Tensor;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec spec;
  spec.n_nodes = 4;
  spec.n_steps = 480;
  spec.period = 24;
  spec.noise_std = 0.0;
  spec.coupling = 0.0;
  spec.seed = 5;
  return spec;
}

// Sample autocorrelation of one node's series at a given lag.
double autocorr(const StTensor& x, std::size_t node, std::size_t lag) {
  double mean = 0.0;
  for (std::size_t t = 0; t < x.T; ++t) mean += x.at(node, t, 0);
  mean /= double(x.T);
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t + lag < x.T; ++t) {
    num += (x.at(node, t, 0) - mean) * (x.at(node, t + lag, 0) - mean);
  }
  for (std::size_t t = 0; t < x.T; ++t) {
    den += (x.at(node, t, 0) - mean) * (x.at(node, t, 0) - mean);
  }
  return num / den;
}

}  // namespace

TEST_CASE("synthetic generator") {
  SUBCASE("pure sinusoids peak in autocorrelation at the period") {
    Synthetic syn = gen_synthetic(small_spec());
    for (std::size_t r = 0; r < syn.x.R; ++r) {
      const double at_period = autocorr(syn.x, r, 24);
      for (std::size_t lag : {5u, 11u, 17u}) {
        CHECK(at_period > autocorr(syn.x, r, lag));
      }
      CHECK(at_period > 0.9);
    }
  }
  SUBCASE("fixed seed reproduces the tensor bitwise") {
    SyntheticSpec spec = small_spec();
    spec.noise_std = 0.1;
    Synthetic a = gen_synthetic(spec);
    Synthetic b = gen_synthetic(spec);
    CHECK(a.x.data == b.x.data);
    spec.seed = 6;
    Synthetic c = gen_synthetic(spec);
    CHECK(a.x.data != c.x.data);
  }
  SUBCASE("single node has no edges and still generates") {
    SyntheticSpec spec = small_spec();
    spec.n_nodes = 1;
    spec.coupling = 0.5;  // exercised against an empty neighborhood
    Synthetic syn = gen_synthetic(spec);
    CHECK(syn.graph.n() == 1);
    CHECK(syn.graph.neighbors(0).empty());
    syn.x.check_finite();
  }
  SUBCASE("geometric topology is deterministic and weighted") {
    SyntheticSpec spec = small_spec();
    spec.topology = SyntheticSpec::Topology::geometric;
    spec.n_nodes = 12;
    Synthetic a = gen_synthetic(spec);
    Synthetic b = gen_synthetic(spec);
    CHECK(a.x.data == b.x.data);
    CHECK(a.graph.edges().size() == b.graph.edges().size());
  }
}

TEST_CASE("apply_shift") {
  Synthetic syn = gen_synthetic(small_spec());

  SUBCASE("zero lag and unit scale is the identity") {
    ShiftSpec s;
    s.kind = ShiftSpec::Kind::mixed;
    s.lag = 0;
    s.scale = 1.0;
    StTensor out = apply_shift(syn.x, s);
    CHECK(out.data == syn.x.data);
  }
  SUBCASE("amplitude doubling doubles the peak") {
    ShiftSpec s;
    s.kind = ShiftSpec::Kind::amplitude_scale;
    s.scale = 2.0;
    StTensor out = apply_shift(syn.x, s);
    double max_in = 0.0, max_out = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      max_in = std::max(max_in, std::fabs(syn.x.data[i]));
      max_out = std::max(max_out, std::fabs(out.data[i]));
    }
    CHECK(max_out == doctest::Approx(2.0 * max_in).epsilon(1e-12));
  }
  SUBCASE("half-period lag anti-correlates with the original") {
    ShiftSpec s;
    s.kind = ShiftSpec::Kind::phase_lag;
    s.lag = 12;  // period 24
    StTensor out = apply_shift(syn.x, s);
    // correlation over the steady region (skip the edge fill)
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t t = 50; t < syn.x.T; ++t) {
      const double a = syn.x.at(0, t, 0);
      const double b = out.at(0, t, 0);
      num += a * b;
      da += a * a;
      db += b * b;
    }
    CHECK(num / std::sqrt(da * db) < -0.99);
  }
  SUBCASE("amplitude scaling composes with its inverse") {
    ShiftSpec up;
    up.kind = ShiftSpec::Kind::amplitude_scale;
    up.scale = 1.3;
    ShiftSpec down = up;
    down.scale = 1.0 / 1.3;
    StTensor round = apply_shift(apply_shift(syn.x, up), down);
    double max_err = 0.0;
    for (std::size_t i = 0; i < round.data.size(); ++i) {
      max_err = std::max(max_err, std::fabs(round.data[i] - syn.x.data[i]));
    }
    CHECK(max_err < 1e-9);
  }
  SUBCASE("lag fills the leading edge with the range's first value") {
    ShiftSpec s;
    s.kind = ShiftSpec::Kind::phase_lag;
    s.lag = 3;
    s.applied = {100, 200};
    StTensor out = apply_shift(syn.x, s);
    CHECK(out.at(0, 99, 0) == syn.x.at(0, 99, 0));   // untouched before range
    CHECK(out.at(0, 100, 0) == syn.x.at(0, 100, 0));  // edge fill
    CHECK(out.at(0, 102, 0) == syn.x.at(0, 100, 0));
    CHECK(out.at(0, 150, 0) == syn.x.at(0, 147, 0));
    CHECK(out.at(0, 250, 0) == syn.x.at(0, 250, 0));  // untouched after range
  }
}

TEST_CASE("wasserstein1_1d") {
  SUBCASE("identical samples give zero") {
    CHECK(wasserstein1_1d({1.0, 5.0, 2.0}, {2.0, 1.0, 5.0}) == 0.0);
  }
  SUBCASE("translation by c gives exactly |c|") {
    Rng rng(1);
    std::vector<double> a(100);
    for (auto& v : a) v = rng.normal();
    std::vector<double> b = a;
    for (auto& v : b) v += 3.25;
    CHECK(wasserstein1_1d(a, b) == doctest::Approx(3.25).epsilon(1e-12));
  }
  SUBCASE("order statistics example") {
    CHECK(wasserstein1_1d({0.0, 1.0}, {0.5, 1.5}) == doctest::Approx(0.5));
  }
  SUBCASE("metric properties on random triples") {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 3 + rng.index(20);
      std::vector<double> a(n), b(n), c(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = rng.normal();
        b[i] = rng.normal();
        c[i] = rng.normal();
      }
      const double ab = wasserstein1_1d(a, b);
      const double ba = wasserstein1_1d(b, a);
      const double ac = wasserstein1_1d(a, c);
      const double cb = wasserstein1_1d(c, b);
      CHECK(ab == doctest::Approx(ba).epsilon(1e-12));  // symmetry
      CHECK(ab <= ac + cb + 1e-9);                      // triangle inequality
      CHECK(wasserstein1_1d(a, a) == 0.0);              // identity
    }
  }
  SUBCASE("unequal counts are resampled consistently") {
    // two views of the same uniform grid distribution
    std::vector<double> coarse = {0.125, 0.375, 0.625, 0.875};
    std::vector<double> fine;
    for (int i = 0; i < 8; ++i) fine.push_back((i + 0.5) / 8.0);
    CHECK(wasserstein1_1d(coarse, fine) < 0.07);
    CHECK_THROWS_AS(wasserstein1_1d({}, {1.0}), DataError);
  }
}

TEST_CASE("estimate_lipschitz") {
  SUBCASE("identity map") {
    Rng rng(3);
    std::vector<std::vector<double>> probes;
    for (int i = 0; i < 8; ++i) {
      probes.push_back({rng.normal(), rng.normal()});
    }
    auto est = estimate_lipschitz([](const std::vector<double>& v) { return v; }, probes, 40);
    CHECK(est.value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(est.pairs_used > 0);
  }
  SUBCASE("constant map") {
    std::vector<std::vector<double>> probes = {{0.0, 0.0}, {1.0, 2.0}, {-3.0, 4.0}};
    auto est = estimate_lipschitz(
        [](const std::vector<double>&) { return std::vector<double>{7.0}; }, probes, 30);
    CHECK(est.value == 0.0);
  }
  SUBCASE("linear map is bounded by the spectral norm and approaches it") {
    // A = diag(3, 1): spectral norm 3; aligned probes achieve it.
    auto fn = [](const std::vector<double>& v) {
      return std::vector<double>{3.0 * v[0], 1.0 * v[1]};
    };
    Rng rng(4);
    std::vector<std::vector<double>> probes;
    for (int i = 0; i < 12; ++i) probes.push_back({rng.normal(), rng.normal()});
    probes.push_back({1.0, 0.0});
    probes.push_back({-1.0, 0.0});  // aligned with the top singular vector
    auto est = estimate_lipschitz(fn, probes, 300);
    CHECK(est.value <= 3.0 + 1e-12);
    CHECK(est.value > 2.9);
  }
  SUBCASE("coincident probes are skipped") {
    std::vector<std::vector<double>> probes = {{1.0}, {1.0}, {2.0}};
    auto est = estimate_lipschitz([](const std::vector<double>& v) { return v; }, probes, 50);
    CHECK(est.value == doctest::Approx(1.0));
  }
}

TEST_CASE("param footprint scaling") {
  BackboneConfig backbone;  // defaults: d=32, L=3
  PromptConfig prompt;      // defaults: d=32, kernel 7, window 12
  ParamFootprint f10 = arm_param_footprint(10, backbone, prompt);
  ParamFootprint f100 = arm_param_footprint(100, backbone, prompt);
  ParamFootprint f1000 = arm_param_footprint(1000, backbone, prompt);

  CHECK(f10.prompt_params == f100.prompt_params);
  CHECK(f100.prompt_params == f1000.prompt_params);
  CHECK(f10.prompt_state_bytes == f1000.prompt_state_bytes);
  CHECK(f10.backbone_params < f100.backbone_params);
  CHECK(f100.backbone_params < f1000.backbone_params);

  // shape-sum oracle for the prompt: w1 + w2 + b1 + w3 + b2 + w4
  const std::size_t d = 32, T = 12, Tc = 6, F = 1, K = 7;
  CHECK(f10.prompt_params == F * d + K + d + T * Tc + d + d * F);
}

TEST_CASE("stability probe and bench on a desk-scale instance") {
  SyntheticSpec spec = small_spec();
  spec.n_nodes = 3;
  spec.n_steps = 360;
  spec.noise_std = 0.02;
  Synthetic syn = gen_synthetic(spec);
  StTensor xn = normalize(syn.x);
  SplitPlan splits = split_chronological(xn.T, 0.6, 0.2, 0.2, 72);

  BackboneConfig bcfg;
  bcfg.n_nodes = 3;
  bcfg.d_embed = 4;
  bcfg.d_hidden = 8;
  bcfg.d_skip = 8;
  bcfg.layers = 1;
  bcfg.horizon = 6;
  bcfg.history = 12;
  BackboneModel model(bcfg, 2);
  TrainConfig pcfg;
  pcfg.lr = 3e-3;
  pcfg.batch = 16;
  pcfg.epochs = 2;
  pcfg.seed = 2;
  pretrain(model, xn, splits, pcfg);
  freeze(model);

  PromptConfig promptcfg;
  promptcfg.d_hidden = 8;
  promptcfg.window = 12;
  promptcfg.dropout_rate = 0.0;
  PromptNet prompt(promptcfg, 2);

  SUBCASE("identical ranges give zero epsilon and zero gap at identity") {
    DataView data{&xn, nullptr};
    StabilityRecord rec = stability_probe(model, prompt, data, splits.pre, data, splits.pre);
    CHECK(rec.epsilon == 0.0);
    CHECK(rec.gap == doctest::Approx(0.0));
    CHECK(std::isfinite(rec.lip_g));
    CHECK(std::isfinite(rec.lip_h));
    CHECK(rec.lip_h == doctest::Approx(1.0).epsilon(1e-9));  // identity prompt
  }

  SUBCASE("amplitude shift yields positive epsilon and a finite gap") {
    ShiftSpec s;
    s.kind = ShiftSpec::Kind::amplitude_scale;
    s.scale = 1.3;
    StTensor shifted = normalize_with(apply_shift(syn.x, s), xn.mu, xn.sigma);
    DataView pre_data{&xn, nullptr};
    DataView tun_data{&shifted, &xn};
    StabilityRecord rec = stability_probe(model, prompt, pre_data, splits.pre, tun_data,
                                          splits.tun);
    CHECK(rec.epsilon > 0.0);
    CHECK(std::isfinite(rec.gap));
    CHECK(rec.gap > 0.0);
  }
}

TEST_CASE("run_bench produces complete fair rows") {
  BenchOptions opt;
  opt.scales = {3};
  opt.seeds = {1};
  opt.data.n_steps = 360;
  opt.data.period = 24;
  opt.data.noise_std = 0.02;
  opt.backbone.d_embed = 4;
  opt.backbone.d_hidden = 8;
  opt.backbone.d_skip = 8;
  opt.backbone.layers = 1;
  opt.backbone.horizon = 6;
  opt.backbone.history = 12;
  opt.prompt.d_hidden = 8;
  opt.prompt.window = 12;
  opt.prompt.dropout_rate = 0.0;
  opt.pretrain_cfg.lr = 3e-3;
  opt.pretrain_cfg.batch = 16;
  opt.pretrain_cfg.epochs = 2;
  opt.tune_cfg.lr = 1e-3;
  opt.tune_cfg.batch = 16;
  opt.tune_cfg.epochs = 2;
  opt.shift.kind = ShiftSpec::Kind::phase_lag;
  opt.shift.lag = 2;

  BenchReport report = run_bench(opt);
  REQUIRE(report.rows.size() == 3);

  const ArmResult* prompt_row = nullptr;
  const ArmResult* finetune_row = nullptr;
  for (const auto& r : report.rows) {
    CHECK(r.steps > 0);
    CHECK(r.seconds > 0.0);
    CHECK(std::isfinite(r.mae));
    if (r.arm == "prompt") prompt_row = &r;
    if (r.arm == "finetune") finetune_row = &r;
  }
  REQUIRE(prompt_row);
  REQUIRE(finetune_row);
  CHECK(prompt_row->trainable_params < finetune_row->trainable_params);
  CHECK(prompt_row->batch_digest == finetune_row->batch_digest);

  const std::string csv = report.to_csv();
  CHECK(csv.find("scale,arm,seed") == 0);
  const std::string ratios = report.ratios_csv();
  CHECK(ratios.find("speedup_vs_finetune") != std::string::npos);
}
