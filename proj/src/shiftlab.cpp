#include "stprompt/shiftlab.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

namespace stprompt {

using ad::Tensor;

void SyntheticSpec::validate() const {
  if (n_nodes < 1 || n_steps < 2 || n_features < 1) throw ConfigError("synthetic: bad dimensions");
  if (period < 2) throw ConfigError("synthetic: period must be >= 2");
  if (noise_std < 0.0) throw ConfigError("synthetic: noise std must be >= 0");
  if (amp_lo > amp_hi) throw ConfigError("synthetic: amplitude bounds inverted");
}

Synthetic gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t R = spec.n_nodes, T = spec.n_steps, F = spec.n_features;

  SensorGraph graph;
  if (spec.topology == SyntheticSpec::Topology::ring) {
    std::vector<Edge> edges;
    if (R > 1) {
      for (std::size_t i = 0; i < R; ++i) {
        edges.push_back({i, (i + 1) % R, 1.0});
        edges.push_back({i, (i + R - 1) % R, 1.0});
      }
    }
    graph = kernel_adjacency(R, edges, 25.0);
  } else {
    std::vector<double> px(R), py(R);
    for (std::size_t i = 0; i < R; ++i) {
      px[i] = rng.uniform();
      py[i] = rng.uniform();
    }
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t j = 0; j < R; ++j) {
        if (i == j) continue;
        const double d = std::hypot(px[i] - px[j], py[i] - py[j]);
        if (d < 0.35) edges.push_back({i, j, 5.0 * d});
      }
    }
    graph = kernel_adjacency(R, edges, 25.0);
  }

  // Base sinusoids first so the coupling term is well defined.
  std::vector<double> amp(R * F), phase(R * F);
  for (std::size_t i = 0; i < R * F; ++i) {
    amp[i] = rng.uniform(spec.amp_lo, spec.amp_hi);
    phase[i] = rng.uniform(0.0, 2.0 * M_PI);
  }
  const double omega = 2.0 * M_PI / static_cast<double>(spec.period);
  auto base = [&](std::size_t r, std::size_t t, std::size_t f) {
    return amp[r * F + f] * std::sin(omega * static_cast<double>(t) + phase[r * F + f]);
  };

  StTensor x(R, T, F);
  for (std::size_t r = 0; r < R; ++r) {
    const auto& nbrs = graph.neighbors(r);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t f = 0; f < F; ++f) {
        double value = base(r, t, f);
        if (spec.coupling != 0.0 && !nbrs.empty()) {
          double mean = 0.0;
          for (std::size_t j : nbrs) mean += base(j, t, f);
          value += spec.coupling * mean / static_cast<double>(nbrs.size());
        }
        if (spec.noise_std > 0.0) value += spec.noise_std * rng.normal();
        x.at(r, t, f) = value;
      }
    }
  }
  return Synthetic{std::move(x), std::move(graph)};
}

void ShiftSpec::validate() const {
  if (scale <= 0.0) throw ConfigError("shift: scale must be positive");
}

StTensor apply_shift(const StTensor& x, const ShiftSpec& shift) {
  shift.validate();
  Range r = shift.applied;
  if (r.end == 0) r = {0, x.T};
  if (r.end > x.T || r.begin >= r.end) throw ConfigError("shift: applied range out of bounds");

  StTensor out = x;
  const bool lag_on = shift.kind != ShiftSpec::Kind::amplitude_scale && shift.lag > 0;
  const bool scale_on = shift.kind != ShiftSpec::Kind::phase_lag && shift.scale != 1.0;
  for (std::size_t node = 0; node < x.R; ++node) {
    for (std::size_t t = r.begin; t < r.end; ++t) {
      for (std::size_t f = 0; f < x.F; ++f) {
        double v = x.at(node, t, f);
        if (lag_on) {
          const std::size_t src = t >= r.begin + shift.lag ? t - shift.lag : r.begin;
          v = x.at(node, src, f);
        }
        if (scale_on) v *= shift.scale;
        out.at(node, t, f) = v;
      }
    }
  }
  return out;
}

double wasserstein1_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DataError("wasserstein1_1d: empty sample set");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::fabs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
  }
  // Unequal counts: integrate |Qa - Qb| at midpoint quantiles.
  const std::size_t m = std::max(a.size(), b.size());
  auto quantile = [](const std::vector<double>& v, double p) {
    const auto idx = std::min(v.size() - 1,
                              static_cast<std::size_t>(p * static_cast<double>(v.size())));
    return v[idx];
  };
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double p = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    acc += std::fabs(quantile(a, p) - quantile(b, p));
  }
  return acc / static_cast<double>(m);
}

LipschitzEstimate estimate_lipschitz(
    const std::function<std::vector<double>(const std::vector<double>&)>& fn,
    const std::vector<std::vector<double>>& probes, std::size_t n_pairs, std::uint64_t seed) {
  if (probes.size() < 2) throw DataError("estimate_lipschitz: need at least two probes");
  std::vector<std::vector<double>> images(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) images[i] = fn(probes[i]);

  Rng rng(seed);
  LipschitzEstimate est;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const std::size_t i = rng.index(probes.size());
    std::size_t j = rng.index(probes.size());
    if (i == j) j = (j + 1) % probes.size();
    double dx = 0.0, dy = 0.0;
    for (std::size_t k = 0; k < probes[i].size(); ++k) {
      const double d = probes[i][k] - probes[j][k];
      dx += d * d;
    }
    if (dx == 0.0) continue;  // coincident pair
    for (std::size_t k = 0; k < images[i].size(); ++k) {
      const double d = images[i][k] - images[j][k];
      dy += d * d;
    }
    const double ratio = std::sqrt(dy) / std::sqrt(dx);
    ++est.pairs_used;
    if (ratio > est.value) {
      est.value = ratio;
      est.arg_i = i;
      est.arg_j = j;
    }
  }
  return est;
}

namespace {

std::vector<double> window_vector(const StTensor& x, std::size_t origin, std::size_t l_in) {
  std::vector<double> v;
  v.reserve(x.R * l_in * x.F);
  for (std::size_t r = 0; r < x.R; ++r) {
    for (std::size_t t = 0; t < l_in; ++t) {
      for (std::size_t f = 0; f < x.F; ++f) v.push_back(x.at(r, origin + t, f));
    }
  }
  return v;
}

}  // namespace

StabilityRecord stability_probe(BackboneModel& frozen_model, PromptNet& prompt,
                                const DataView& pre_data, const Range& pre,
                                const DataView& tun_data, const Range& tun) {
  StabilityRecord rec;
  const StTensor& xp = pre_data.in();
  const StTensor& xt = tun_data.in();
  if (xp.F != xt.F) throw ShapeError("stability_probe: feature mismatch");

  // epsilon: mean per-feature W1 between the two ranges' marginals.
  double eps_acc = 0.0;
  for (std::size_t f = 0; f < xp.F; ++f) {
    std::vector<double> va, vb;
    for (std::size_t r = 0; r < xp.R; ++r) {
      for (std::size_t t = pre.begin; t < pre.end; ++t) va.push_back(xp.at(r, t, f));
    }
    for (std::size_t r = 0; r < xt.R; ++r) {
      for (std::size_t t = tun.begin; t < tun.end; ++t) vb.push_back(xt.at(r, t, f));
    }
    eps_acc += wasserstein1_1d(std::move(va), std::move(vb));
  }
  rec.epsilon = eps_acc / static_cast<double>(xp.F);

  const std::size_t l_in = frozen_model.config().history;
  const auto pre_origins = window_origins(pre, l_in, frozen_model.config().horizon);
  const auto tun_origins = window_origins(tun, l_in, frozen_model.config().horizon);
  if (pre_origins.empty() || tun_origins.empty()) {
    throw DataError("stability_probe: ranges too short for windows");
  }
  const std::size_t n_probe = std::min<std::size_t>(24, std::min(pre_origins.size(),
                                                                 tun_origins.size()));

  const std::size_t R = xp.R, F = xp.F;
  auto g_flat = [&](const std::vector<double>& v) {
    Tensor xw({1, R, l_in, F}, v);
    return frozen_model.forward(xw).data();
  };
  auto h_flat = [&](const std::vector<double>& v) {
    Tensor xw({1, R, l_in, F}, v);
    return prompt.forward(xw, false).data();
  };

  std::vector<std::vector<double>> pre_probes, tun_probes;
  for (std::size_t i = 0; i < n_probe; ++i) {
    pre_probes.push_back(window_vector(xp, pre_origins[i * pre_origins.size() / n_probe], l_in));
    tun_probes.push_back(window_vector(xt, tun_origins[i * tun_origins.size() / n_probe], l_in));
  }
  rec.lip_g = estimate_lipschitz(g_flat, pre_probes, 64, 7).value;
  rec.lip_h = estimate_lipschitz(h_flat, tun_probes, 64, 11).value;

  // Prediction gap over order-paired windows.
  double gap_acc = 0.0;
  for (std::size_t i = 0; i < n_probe; ++i) {
    const auto yp = g_flat(pre_probes[i]);
    Tensor edited({1, R, l_in, F}, tun_probes[i]);
    const auto yt = frozen_model.forward(prompt.forward(edited, false)).data();
    double d2 = 0.0;
    for (std::size_t k = 0; k < yp.size(); ++k) {
      const double d = yt[k] - yp[k];
      d2 += d * d;
    }
    gap_acc += std::sqrt(d2 / static_cast<double>(yp.size()));
  }
  rec.gap = gap_acc / static_cast<double>(n_probe);
  rec.bound_holds = rec.gap <= rec.lip_g * rec.lip_h * rec.epsilon;
  return rec;
}

std::string BenchReport::to_csv() const {
  std::ostringstream os;
  os << "scale,arm,seed,params,state_bytes,steps,seconds,mae,rmse,mape,diverged\n";
  for (const auto& r : rows) {
    os << r.scale << "," << r.arm << "," << r.seed << "," << r.trainable_params << ","
       << r.optimizer_state_bytes << "," << r.steps << "," << r.seconds << "," << r.mae << ","
       << r.rmse << "," << r.mape << "," << (r.diverged ? 1 : 0) << "\n";
  }
  return os.str();
}

std::string BenchReport::ratios_csv() const {
  std::ostringstream os;
  os << "scale,seed,speedup_vs_finetune,speedup_vs_scratch,param_ratio\n";
  for (const auto& p : rows) {
    if (p.arm != "prompt") continue;
    const ArmResult* ft = nullptr;
    const ArmResult* sc = nullptr;
    std::size_t backbone_params = 0;
    for (const auto& r : rows) {
      if (r.scale != p.scale || r.seed != p.seed) continue;
      if (r.arm == "finetune") ft = &r;
      if (r.arm == "scratch") sc = &r;
      if (r.arm != "prompt") backbone_params = r.trainable_params;
    }
    os << p.scale << "," << p.seed << ",";
    if (ft && p.seconds > 0.0) os << ft->seconds / p.seconds;
    os << ",";
    if (sc && p.seconds > 0.0) os << sc->seconds / p.seconds;
    os << ",";
    if (backbone_params > 0) {
      os << static_cast<double>(p.trainable_params) / static_cast<double>(backbone_params);
    }
    os << "\n";
  }
  return os.str();
}

ParamFootprint arm_param_footprint(std::size_t scale, const BackboneConfig& backbone_template,
                                   const PromptConfig& prompt_cfg) {
  BackboneConfig cfg = backbone_template;
  cfg.n_nodes = scale;
  BackboneModel model(cfg, /*seed=*/0);
  PromptNet prompt(prompt_cfg, /*seed=*/0);
  ParamFootprint fp;
  fp.scale = scale;
  fp.prompt_params = prompt.params().count_params();
  fp.backbone_params = model.params().count_params();
  fp.prompt_state_bytes = Sgd(1e-3, 0.0).state_bytes(prompt.params());
  fp.finetune_state_bytes = Sgd(1e-3, 0.0).state_bytes(model.params());
  return fp;
}

namespace {

struct BenchTask {
  BackboneModel model;       // frozen for the prompt arm, trainable otherwise
  PromptNet prompt;          // used by the prompt arm only
  DataView data;
  Range tun, tst;
  TrainConfig cfg;
  std::string arm;
};

ArmResult run_arm(BenchTask& task) {
  ArmResult res;
  res.arm = task.arm;
  PhaseResult phase;
  if (task.arm == "prompt") {
    phase = prompt_tune(task.prompt, task.model, task.data, task.tun, task.cfg);
    res.trainable_params = task.prompt.params().count_params(true);
    res.optimizer_state_bytes =
        Sgd(task.cfg.lr, task.cfg.weight_decay, task.cfg.momentum).state_bytes(task.prompt.params());
  } else {
    phase = task.arm == "finetune" ? finetune_all(task.model, task.data, task.tun, task.cfg)
                                   : scratch_train(task.model, task.data, task.tun, task.cfg);
    res.trainable_params = task.model.params().count_params(true);
    res.optimizer_state_bytes =
        Sgd(task.cfg.lr, task.cfg.weight_decay, task.cfg.momentum).state_bytes(task.model.params());
  }
  res.steps = phase.steps;
  res.seconds = phase.wall_seconds;
  res.diverged = phase.diverged;
  res.batch_digest = phase.batch_digest;
  EvalResult ev = evaluate_model(task.model, task.arm == "prompt" ? &task.prompt : nullptr,
                                 task.data, task.tst, task.cfg.batch);
  res.mae = ev.mae;
  res.rmse = ev.rmse;
  res.mape = ev.mape;
  return res;
}

}  // namespace

BenchReport run_bench(const BenchOptions& options) {
  if (options.seeds.empty()) throw ConfigError("bench: need at least one seed");
  for (const auto& arm : options.arms) {
    if (arm != "prompt" && arm != "finetune" && arm != "scratch") {
      throw ConfigError("bench: unknown arm " + arm);
    }
  }
  BenchReport report;
  report.parallel = options.parallel_arms;

  for (std::size_t scale : options.scales) {
    SyntheticSpec spec = options.data;
    spec.n_nodes = scale;
    for (std::uint64_t seed : options.seeds) {
      spec.seed = seed;
      Synthetic syn = gen_synthetic(spec);
      StTensor xn = normalize(syn.x);
      SplitPlan splits = split_chronological(xn.T, 0.6, 0.2, 0.2,
                                             std::max<std::size_t>(xn.T / 5, 64));

      // Shifted inputs over tun+tst, normalized with the training stats.
      ShiftSpec shift = options.shift;
      shift.applied = {splits.tun.begin, xn.T};
      StTensor shifted_raw = apply_shift(syn.x, shift);
      StTensor xs = normalize_with(shifted_raw, xn.mu, xn.sigma);
      DataView task_data{&xs, &xn};

      BackboneConfig bcfg = options.backbone;
      bcfg.n_nodes = scale;
      BackboneModel model(bcfg, seed);
      TrainConfig pre_cfg = options.pretrain_cfg;
      pre_cfg.seed = seed;
      pre_cfg.curriculum = true;
      pretrain(model, xn, splits, pre_cfg);

      BackboneModel finetune_copy = model.clone();
      BackboneModel scratch_model = model.reinitialized(seed ^ 0x5c7a7cu);
      freeze(model);

      TrainConfig tune_cfg = options.tune_cfg;
      tune_cfg.seed = seed;

      std::vector<BenchTask> tasks;
      for (const auto& arm : options.arms) {
        BenchTask task{arm == "finetune" ? std::move(finetune_copy)
                       : arm == "scratch" ? std::move(scratch_model)
                                          : model.clone(),
                       PromptNet(options.prompt, seed), task_data, splits.tun, splits.tst,
                       tune_cfg, arm};
        tasks.push_back(std::move(task));
      }

      std::vector<ArmResult> results(tasks.size());
      if (options.parallel_arms) {
        std::vector<std::thread> threads;
        for (std::size_t i = 0; i < tasks.size(); ++i) {
          threads.emplace_back([&tasks, &results, i]() { results[i] = run_arm(tasks[i]); });
        }
        for (auto& t : threads) t.join();
      } else {
        for (std::size_t i = 0; i < tasks.size(); ++i) results[i] = run_arm(tasks[i]);
      }
      for (auto& r : results) {
        r.scale = scale;
        r.seed = seed;
        report.rows.push_back(std::move(r));
      }
    }
  }
  return report;
}

ShiftRecoveryReport shift_recovery_study(const ShiftStudyConfig& cfg) {
  SyntheticSpec spec = cfg.data;
  spec.seed = cfg.seed;
  Synthetic syn = gen_synthetic(spec);
  StTensor xn = normalize(syn.x);
  SplitPlan splits = split_chronological(xn.T, 0.6, 0.2, 0.2, cfg.tun_tail);

  BackboneConfig bcfg = cfg.backbone;
  bcfg.n_nodes = spec.n_nodes;
  BackboneModel model(bcfg, cfg.seed);
  TrainConfig pre = cfg.pretrain_cfg;
  pre.seed = cfg.seed;
  pre.curriculum = true;
  pretrain(model, xn, splits, pre);
  freeze(model);

  ShiftRecoveryReport report;
  DataView clean{&xn, nullptr};
  report.clean_mae = evaluate_model(model, nullptr, clean, splits.tst).mae;

  ShiftSpec shift = cfg.shift;
  shift.applied = {splits.tun.begin, xn.T};
  StTensor shifted_raw = apply_shift(syn.x, shift);
  StTensor xs = normalize_with(shifted_raw, xn.mu, xn.sigma);
  DataView corrupted{&xs, cfg.clean_targets ? &xn : nullptr};
  report.shifted_frozen_mae = evaluate_model(model, nullptr, corrupted, splits.tst).mae;

  // Cap the tuning budget at max_tune_steps optimizer steps.
  TrainConfig tune = cfg.tune_cfg;
  tune.seed = cfg.seed;
  auto [fit, hold] = holdout_split(splits.tun, bcfg.history, bcfg.horizon);
  const std::size_t windows = window_count(fit.len(), bcfg.history, bcfg.horizon, 1);
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, (windows + tune.batch - 1) / tune.batch);
  tune.epochs = std::max<std::size_t>(1, cfg.max_tune_steps / steps_per_epoch);

  PromptNet prompt(cfg.prompt, cfg.seed);
  PhaseResult phase = prompt_tune(prompt, model, corrupted, splits.tun, tune);
  report.tune_steps = phase.steps;

  report.tuned_mae = evaluate_model(model, &prompt, corrupted, splits.tst).mae;
  report.degradation_gap = report.shifted_frozen_mae - report.clean_mae;
  report.recovery_fraction =
      report.degradation_gap > 0.0
          ? (report.shifted_frozen_mae - report.tuned_mae) / report.degradation_gap
          : 0.0;

  auto origins = window_origins(splits.tst, bcfg.history, bcfg.horizon);
  ForecastBatch probe = gather_windows(xs, {origins[0]}, bcfg.history, bcfg.horizon);
  report.edit_magnitude = prompt.edit_magnitude(
      Tensor({1, xs.R, bcfg.history, xs.F}, probe.inputs));
  return report;
}

}  // namespace stprompt
