// Command-line front end: ingest -> pretrain -> tune -> predict/eval, plus
// the bench harness, shift generation, gradient checking and checkpoint
// inspection. Every subcommand writes its artifacts into a run directory and
// exits 0 on success; errors map to stable exit codes (2 config, 3 data,
// 4 contract violation).

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "stprompt/gradbattery.hpp"
#include "stprompt/pipeline.hpp"
#include "stprompt/shiftlab.hpp"

namespace fs = std::filesystem;
using namespace stprompt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitContract = 4;

std::string g_run_root;

fs::path resolve_run_dir(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative() && !g_run_root.empty()) p = fs::path(g_run_root) / p;
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << body;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Only explicitly-set options are written; built-in defaults reproduce the
// rest, so re-running from the snapshot replays the run.
void snapshot_config(CLI::App* cmd, const fs::path& run_dir) {
  write_text(run_dir / (cmd->get_name() + ".config"), cmd->config_to_str(false, false));
}

struct SplitFile {
  SplitPlan plan;
  void save(const fs::path& path) const {
    std::ostringstream os;
    os << "pre " << plan.pre.begin << " " << plan.pre.end << "\n"
       << "tun " << plan.tun.begin << " " << plan.tun.end << "\n"
       << "val " << plan.val.begin << " " << plan.val.end << "\n"
       << "tst " << plan.tst.begin << " " << plan.tst.end << "\n";
    write_text(path, os.str());
  }
  static SplitFile load(const fs::path& path) {
    std::istringstream is(read_text(path));
    SplitFile f;
    std::string name;
    for (Range* r : {&f.plan.pre, &f.plan.tun, &f.plan.val, &f.plan.tst}) {
      if (!(is >> name >> r->begin >> r->end)) throw DataError("malformed splits file");
    }
    return f;
  }
};

Range pick_range(const SplitPlan& plan, const std::string& name) {
  if (name == "pre") return plan.pre;
  if (name == "tun") return plan.tun;
  if (name == "val") return plan.val;
  if (name == "tst") return plan.tst;
  throw ConfigError("unknown split name: " + name);
}

BackboneModel load_backbone(const fs::path& run_dir, bool freeze_it) {
  BackboneConfig cfg = BackboneConfig::parse(read_text(run_dir / "backbone.config"));
  BackboneModel model(cfg, /*seed=*/0);
  ParamStore loaded = ParamStore::load((run_dir / "backbone.ckpt").string());
  copy_parameters(model.params(), loaded);
  if (freeze_it) model.freeze();
  return model;
}

std::vector<std::size_t> parse_size_list(const std::string& csv) {
  std::vector<std::size_t> out;
  std::istringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoul(tok));
  if (out.empty()) throw ConfigError("empty size list");
  return out;
}

// --- subcommand payloads ----------------------------------------------------

struct IngestArgs {
  std::string readings, edges, run_dir;
  std::vector<std::string> features;
  double sigma2 = 25.0;
  double impute_decay = 0.1;
  std::size_t impute_window = 288;
  double z_thresh = 5.0;
  std::size_t week_period = 2016;
  bool skip_normalize = false;
};

int run_ingest(const IngestArgs& a, CLI::App* cmd) {
  const fs::path run_dir = resolve_run_dir(a.run_dir);
  ReadingsSchema schema;
  schema.feature_cols = a.features;
  RawSeries raw = load_readings(a.readings, schema);
  auto edges = load_edge_list(a.edges, raw.n_sensors());
  SensorGraph graph = kernel_adjacency(raw.n_sensors(), edges, a.sigma2);

  Warnings warnings;
  StTensor imputed = impute_missing(raw, graph, a.impute_decay, a.impute_window);
  auto [clean, mask] = remove_anomalies(imputed, graph, a.z_thresh, a.week_period, &warnings);
  StTensor out = a.skip_normalize ? clean : normalize(clean, &warnings);

  save_tensor(out, (run_dir / "data.tensor").string());
  mask.save((run_dir / "anomalies.csv").string());
  save_adjacency(graph, (run_dir / "adjacency.csv").string());
  snapshot_config(cmd, run_dir);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "ingested " << raw.n_sensors() << " sensors x " << raw.n_steps() << " steps ("
            << raw.missing_count() << " missing imputed, " << mask.flags.size()
            << " anomalies) -> " << (run_dir / "data.tensor").string() << "\n";
  return kExitOk;
}

struct PretrainArgs {
  std::string data, run_dir;
  std::uint64_t seed = 0;
  double f_train = 0.6, f_val = 0.2, f_tst = 0.2;
  std::size_t tun_tail = 288;
  double lr = 3e-3;
  std::size_t batch = 32, epochs = 30, patience = 10;
  double weight_decay = 1e-4, momentum = 0.0;
  double mask_rate = 0.0, warp_pct = 0.0;
  std::size_t warp_window = 24;
  // model
  std::size_t d_embed = 16, d_hidden = 32, d_skip = 32, layers = 3, mixhop_depth = 2;
  std::size_t horizon = 12, history = 12, topk = 20;
  double retain_ratio = 0.05, saturation = 3.0, lambda_l2 = 1e-4, mu_adj = 1e-4;
};

int run_pretrain(const PretrainArgs& a, CLI::App* cmd) {
  const fs::path run_dir = resolve_run_dir(a.run_dir);
  StTensor x = load_tensor(a.data);
  SplitFile splits{split_chronological(x.T, a.f_train, a.f_val, a.f_tst, a.tun_tail)};

  if (a.mask_rate > 0.0 || a.warp_pct > 0.0) {
    // augmentation applies to the training window only
    StTensor aug = augment(x, a.mask_rate, a.warp_pct, a.warp_window, a.seed ^ 0xa06u);
    for (std::size_t r = 0; r < x.R; ++r) {
      for (std::size_t t = splits.plan.pre.begin; t < splits.plan.pre.end; ++t) {
        for (std::size_t f = 0; f < x.F; ++f) x.at(r, t, f) = aug.at(r, t, f);
      }
    }
  }

  BackboneConfig cfg;
  cfg.n_nodes = x.R;
  cfg.n_features = x.F;
  cfg.d_embed = a.d_embed;
  cfg.d_hidden = a.d_hidden;
  cfg.d_skip = a.d_skip;
  cfg.layers = a.layers;
  cfg.mixhop_depth = a.mixhop_depth;
  cfg.horizon = a.horizon;
  cfg.history = a.history;
  cfg.topk = a.topk;
  cfg.retain_ratio = a.retain_ratio;
  cfg.saturation = a.saturation;
  cfg.lambda_l2 = a.lambda_l2;
  cfg.mu_adj = a.mu_adj;

  TrainConfig tcfg;
  tcfg.lr = a.lr;
  tcfg.batch = a.batch;
  tcfg.epochs = a.epochs;
  tcfg.patience = a.patience;
  tcfg.weight_decay = a.weight_decay;
  tcfg.momentum = a.momentum;
  tcfg.seed = a.seed;
  tcfg.curriculum = true;

  BackboneModel model(cfg, a.seed);
  PhaseResult res = pretrain(model, x, splits.plan, tcfg);

  model.params().save((run_dir / "backbone.ckpt").string());
  write_text(run_dir / "backbone.config", cfg.serialize());
  write_text(run_dir / "digest.txt", model.params().digest() + "\n");
  splits.save(run_dir / "splits.txt");
  append_metrics_log((run_dir / "metrics.log").string(), (run_dir / "timing.log").string(),
                     "pretrain", res);
  snapshot_config(cmd, run_dir);
  std::cout << "pretrained " << res.steps << " steps, best val MAE " << res.best_val_mae
            << (res.diverged ? " (diverged, kept best)" : "") << "\n";
  return kExitOk;
}

struct TuneArgs {
  std::string mode = "prompt";
  std::string data, targets, run_dir;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  std::size_t batch = 32, epochs = 30, patience = 10;
  double weight_decay = 0.0, momentum = 0.0;
  std::size_t prompt_d_hidden = 32, prompt_kernel = 7;
  double prompt_dropout = 0.1;
};

int run_tune(const TuneArgs& a, CLI::App* cmd) {
  const fs::path run_dir = resolve_run_dir(a.run_dir);
  StTensor x = load_tensor(a.data);
  StTensor targets;
  DataView data{&x, nullptr};
  if (!a.targets.empty()) {
    targets = load_tensor(a.targets);
    data.targets = &targets;
  }
  SplitFile splits = SplitFile::load(run_dir / "splits.txt");

  TrainConfig tcfg;
  tcfg.lr = a.lr;
  tcfg.batch = a.batch;
  tcfg.epochs = a.epochs;
  tcfg.patience = a.patience;
  tcfg.weight_decay = a.weight_decay;
  tcfg.momentum = a.momentum;
  tcfg.seed = a.seed;

  const std::string recorded_digest = read_text(run_dir / "digest.txt");
  PhaseResult res;
  if (a.mode == "prompt") {
    BackboneModel model = load_backbone(run_dir, /*freeze_it=*/true);
    const std::string digest = model.params().digest();
    if (recorded_digest.find(digest) == std::string::npos) {
      throw ContractError("backbone digest does not match the recorded pretrain digest");
    }
    PromptConfig pcfg;
    pcfg.d_hidden = a.prompt_d_hidden;
    pcfg.kernel = a.prompt_kernel;
    pcfg.dropout_rate = a.prompt_dropout;
    pcfg.window = model.config().history;
    pcfg.n_features = model.config().n_features;
    PromptNet prompt(pcfg, a.seed);
    res = prompt_tune(prompt, model, data, splits.plan.tun, tcfg);
    if (model.params().digest() != digest) {
      throw ContractError("frozen backbone digest changed during tuning");
    }
    prompt.params().save((run_dir / "prompt.ckpt").string());
    write_text(run_dir / "prompt.config", pcfg.serialize());
    append_metrics_log((run_dir / "metrics.log").string(), (run_dir / "timing.log").string(),
                       "tune_prompt", res);
  } else if (a.mode == "finetune") {
    BackboneModel model = load_backbone(run_dir, /*freeze_it=*/false);
    res = finetune_all(model, data, splits.plan.tun, tcfg);
    model.params().save((run_dir / "finetuned.ckpt").string());
    append_metrics_log((run_dir / "metrics.log").string(), (run_dir / "timing.log").string(),
                       "tune_finetune", res);
  } else if (a.mode == "scratch") {
    BackboneConfig cfg = BackboneConfig::parse(read_text(run_dir / "backbone.config"));
    BackboneModel model(cfg, a.seed);
    res = scratch_train(model, data, splits.plan.tun, tcfg);
    model.params().save((run_dir / "scratch.ckpt").string());
    append_metrics_log((run_dir / "metrics.log").string(), (run_dir / "timing.log").string(),
                       "tune_scratch", res);
  } else {
    throw ConfigError("unknown tune mode: " + a.mode);
  }
  snapshot_config(cmd, run_dir);
  std::cout << "tuned (" << a.mode << ") " << res.steps << " steps, best val MAE "
            << res.best_val_mae << "\n";
  return kExitOk;
}

struct PredictArgs {
  std::string data, run_dir, out = "predictions.csv";
  std::size_t origin = 0;
  bool use_prompt = false;
};

int run_predict(const PredictArgs& a, CLI::App* cmd) {
  const fs::path run_dir = resolve_run_dir(a.run_dir);
  StTensor x = load_tensor(a.data);
  BackboneModel model = load_backbone(run_dir, /*freeze_it=*/true);
  const std::size_t l_in = model.config().history;
  if (a.origin + l_in > x.T) throw DataError("origin leaves no room for the input window");

  std::optional<PromptNet> prompt;
  if (a.use_prompt) {
    PromptConfig pcfg = PromptConfig::parse(read_text(run_dir / "prompt.config"));
    prompt.emplace(pcfg, 0);
    copy_parameters(prompt->params(), ParamStore::load((run_dir / "prompt.ckpt").string()));
  }

  ForecastBatch fb = gather_windows(x, {a.origin}, l_in, 0);
  ad::Tensor window({x.R, l_in, x.F}, fb.inputs);
  ad::Tensor pred = predict(model, prompt ? &*prompt : nullptr, window);

  std::ostringstream os;
  os.precision(17);
  os << "origin,node,horizon,feature,value\n";
  const std::size_t Q = model.config().horizon;
  for (std::size_t r = 0; r < x.R; ++r) {
    for (std::size_t q = 0; q < Q; ++q) {
      for (std::size_t f = 0; f < x.F; ++f) {
        double v = pred.data()[(r * Q + q) * x.F + f];
        if (x.normalized) v = v * x.sigma[f] + x.mu[f];
        os << a.origin << "," << r << "," << q << "," << f << "," << v << "\n";
      }
    }
  }
  write_text(run_dir / a.out, os.str());
  snapshot_config(cmd, run_dir);
  std::cout << "wrote " << (run_dir / a.out).string() << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string data, targets, run_dir, split = "tst", out = "report.csv";
  bool use_prompt = false;
};

int run_eval(const EvalArgs& a, CLI::App* cmd) {
  const fs::path run_dir = resolve_run_dir(a.run_dir);
  StTensor x = load_tensor(a.data);
  StTensor tgt;
  DataView data{&x, nullptr};
  if (!a.targets.empty()) {
    tgt = load_tensor(a.targets);
    data.targets = &tgt;
  }
  SplitFile splits = SplitFile::load(run_dir / "splits.txt");
  BackboneModel model = load_backbone(run_dir, /*freeze_it=*/true);

  std::optional<PromptNet> prompt;
  if (a.use_prompt) {
    PromptConfig pcfg = PromptConfig::parse(read_text(run_dir / "prompt.config"));
    prompt.emplace(pcfg, 0);
    copy_parameters(prompt->params(), ParamStore::load((run_dir / "prompt.ckpt").string()));
  }

  const Range range = pick_range(splits.plan, a.split);
  EvalResult ev = evaluate_model(model, prompt ? &*prompt : nullptr, data, range);
  std::ostringstream os;
  os.precision(17);
  os << "scope,horizon,node,metric,value\n";
  os << a.split << ",,,mae," << ev.mae << "\n";
  os << a.split << ",,,rmse," << ev.rmse << "\n";
  os << a.split << ",,,mape," << ev.mape << "\n";
  os << a.split << ",,,weighted_mae," << ev.weighted_mae << "\n";
  write_text(run_dir / a.out, os.str());
  snapshot_config(cmd, run_dir);
  std::cout << a.split << " mae=" << ev.mae << " rmse=" << ev.rmse << " mape=" << ev.mape
            << " weighted_mae=" << ev.weighted_mae << "\n";
  return kExitOk;
}

struct BenchArgs {
  std::string run_dir;
  std::string scales = "10";
  std::size_t seeds = 3;
  std::string arms = "prompt,finetune,scratch";
  bool parallel = false;
  std::size_t steps = 1200;
  std::size_t epochs = 8;
};

int run_bench_cmd(const BenchArgs& a, CLI::App* cmd) {
  const fs::path run_dir = resolve_run_dir(a.run_dir);
  BenchOptions opt;
  opt.scales = parse_size_list(a.scales);
  opt.seeds.clear();
  for (std::uint64_t s = 1; s <= a.seeds; ++s) opt.seeds.push_back(s);
  opt.arms.clear();
  {
    std::istringstream ss(a.arms);
    std::string tok;
    while (std::getline(ss, tok, ',')) opt.arms.push_back(tok);
  }
  opt.parallel_arms = a.parallel;
  opt.data.n_steps = a.steps;
  opt.data.period = 96;
  opt.data.noise_std = 0.05;
  opt.backbone.d_embed = 8;
  opt.backbone.d_hidden = 16;
  opt.backbone.d_skip = 16;
  opt.backbone.layers = 2;
  opt.prompt.d_hidden = 16;
  opt.prompt.dropout_rate = 0.0;
  opt.pretrain_cfg.lr = 3e-3;
  opt.pretrain_cfg.epochs = 5;
  opt.pretrain_cfg.batch = 32;
  opt.tune_cfg.lr = 1e-3;
  opt.tune_cfg.epochs = a.epochs;
  opt.tune_cfg.batch = 32;
  opt.tune_cfg.patience = 3;
  opt.shift.kind = ShiftSpec::Kind::mixed;
  opt.shift.lag = 2;
  opt.shift.scale = 1.3;

  BenchReport report = run_bench(opt);
  write_text(run_dir / "bench.csv", report.to_csv());
  write_text(run_dir / "ratios.csv", report.ratios_csv());

  std::ostringstream fp;
  fp << "scale,prompt_params,backbone_params,prompt_state_bytes,finetune_state_bytes\n";
  for (std::size_t scale : opt.scales) {
    ParamFootprint f = arm_param_footprint(scale, opt.backbone, opt.prompt);
    fp << scale << "," << f.prompt_params << "," << f.backbone_params << ","
       << f.prompt_state_bytes << "," << f.finetune_state_bytes << "\n";
  }
  write_text(run_dir / "footprint.csv", fp.str());
  snapshot_config(cmd, run_dir);
  std::cout << report.to_csv() << "\n" << report.ratios_csv();
  return kExitOk;
}

struct ShiftgenArgs {
  std::string data, out, graph_out;
  bool synthetic = false;
  std::size_t nodes = 10, steps = 1600, period = 288;
  double noise = 0.05, coupling = 0.2;
  std::uint64_t seed = 0;
  std::string topology = "ring";
  std::string kind = "none";
  std::size_t lag = 0;
  double scale = 1.0;
  std::size_t begin = 0, end = 0;
};

int run_shiftgen(const ShiftgenArgs& a, CLI::App*) {
  StTensor x;
  if (a.synthetic) {
    SyntheticSpec spec;
    spec.n_nodes = a.nodes;
    spec.n_steps = a.steps;
    spec.period = a.period;
    spec.noise_std = a.noise;
    spec.coupling = a.coupling;
    spec.seed = a.seed;
    spec.topology = a.topology == "geometric" ? SyntheticSpec::Topology::geometric
                                              : SyntheticSpec::Topology::ring;
    Synthetic syn = gen_synthetic(spec);
    x = std::move(syn.x);
    if (!a.graph_out.empty()) save_adjacency(syn.graph, a.graph_out);
  } else {
    if (a.data.empty()) throw ConfigError("shiftgen needs --data or --synthetic");
    x = load_tensor(a.data);
  }

  if (a.kind != "none") {
    ShiftSpec shift;
    if (a.kind == "phase") shift.kind = ShiftSpec::Kind::phase_lag;
    else if (a.kind == "amplitude") shift.kind = ShiftSpec::Kind::amplitude_scale;
    else if (a.kind == "mixed") shift.kind = ShiftSpec::Kind::mixed;
    else throw ConfigError("unknown shift kind: " + a.kind);
    shift.lag = a.lag;
    shift.scale = a.scale;
    shift.applied = {a.begin, a.end};
    if (x.normalized) {
      // shift in physical units, then restore the original statistics
      StTensor raw = denormalize(x);
      x = normalize_with(apply_shift(raw, shift), x.mu, x.sigma);
    } else {
      x = apply_shift(x, shift);
    }
  }
  save_tensor(x, a.out);
  std::cout << "wrote " << a.out << " (" << x.R << " x " << x.T << " x " << x.F << ")\n";
  return kExitOk;
}

int run_gradcheck(double tol) {
  auto results = ad::run_gradient_battery(tol);
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "pass" : "FAIL") << " " << r.name << " max_rel_err=" << r.max_rel_err
              << (r.kink_flagged ? " (kink-adjacent coordinates excluded: " +
                                       std::to_string(r.kink_flagged) + ")"
                                 : "")
              << "\n";
    all_pass = all_pass && r.pass;
  }
  return all_pass ? kExitOk : 1;
}

struct InspectArgs {
  std::string ckpt, prompt_config, data;
  std::size_t origin = 0;
};

int run_inspect(const InspectArgs& a, CLI::App*) {
  ParamStore store = ParamStore::load(a.ckpt);
  std::cout << "checkpoint " << a.ckpt << "\n";
  for (const auto& e : store.entries()) {
    std::cout << "  " << e.name << " " << ad::shape_str(e.tensor.shape())
              << (e.frozen ? " frozen" : "") << "\n";
  }
  std::cout << "  total " << store.count_params() << " parameters ("
            << store.count_params(true) << " trainable)\n";
  std::cout << "  digest " << store.digest() << "\n";

  if (!a.prompt_config.empty()) {
    PromptConfig pcfg = PromptConfig::parse(read_text(a.prompt_config));
    PromptNet prompt(pcfg, 0);
    copy_parameters(prompt.params(), store);
    std::cout << prompt.describe();
    if (!a.data.empty()) {
      StTensor x = load_tensor(a.data);
      auto origins = window_origins({a.origin, x.T}, pcfg.window, 1);
      if (origins.empty()) throw DataError("no window available at the requested origin");
      ForecastBatch fb = gather_windows(x, {origins[0]}, pcfg.window, 1);
      ad::Tensor window({x.R, pcfg.window, x.F}, fb.inputs);
      std::cout << "  edit magnitude on window @" << origins[0] << ": "
                << prompt.edit_magnitude(window) << "\n";
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatio-temporal forecasting with prompt-based adaptation"};
  app.require_subcommand(1);
  app.add_option("--run-root", g_run_root, "root directory for relative run dirs")
      ->envname("STPROMPT_RUN_ROOT");

  IngestArgs ingest;
  auto* cmd_ingest = app.add_subcommand("ingest", "preprocess raw readings into a tensor");
  cmd_ingest->set_config("--config");
  cmd_ingest->add_option("--readings", ingest.readings, "delimited readings file")->required();
  cmd_ingest->add_option("--edges", ingest.edges, "edge list src,dst,distance")->required();
  cmd_ingest->add_option("--run-dir", ingest.run_dir, "output run directory")->required();
  cmd_ingest->add_option("--features", ingest.features, "feature columns (default: all)");
  cmd_ingest->add_option("--sigma2", ingest.sigma2, "adjacency kernel bandwidth");
  cmd_ingest->add_option("--impute-decay", ingest.impute_decay);
  cmd_ingest->add_option("--impute-window", ingest.impute_window);
  cmd_ingest->add_option("--z-thresh", ingest.z_thresh);
  cmd_ingest->add_option("--week-period", ingest.week_period);
  cmd_ingest->add_flag("--no-normalize", ingest.skip_normalize);

  PretrainArgs pre;
  auto* cmd_pre = app.add_subcommand("pretrain", "train the backbone on the pre split");
  cmd_pre->set_config("--config");
  cmd_pre->add_option("--data", pre.data, "tensor file")->required();
  cmd_pre->add_option("--run-dir", pre.run_dir)->required();
  cmd_pre->add_option("--seed", pre.seed)->required();
  cmd_pre->add_option("--f-train", pre.f_train);
  cmd_pre->add_option("--f-val", pre.f_val);
  cmd_pre->add_option("--f-tst", pre.f_tst);
  cmd_pre->add_option("--tun-tail", pre.tun_tail);
  cmd_pre->add_option("--lr", pre.lr);
  cmd_pre->add_option("--batch", pre.batch);
  cmd_pre->add_option("--epochs", pre.epochs);
  cmd_pre->add_option("--patience", pre.patience);
  cmd_pre->add_option("--weight-decay", pre.weight_decay);
  cmd_pre->add_option("--momentum", pre.momentum);
  cmd_pre->add_option("--mask-rate", pre.mask_rate);
  cmd_pre->add_option("--warp-pct", pre.warp_pct);
  cmd_pre->add_option("--warp-window", pre.warp_window);
  cmd_pre->add_option("--d-embed", pre.d_embed);
  cmd_pre->add_option("--d-hidden", pre.d_hidden);
  cmd_pre->add_option("--d-skip", pre.d_skip);
  cmd_pre->add_option("--layers", pre.layers);
  cmd_pre->add_option("--mixhop-depth", pre.mixhop_depth);
  cmd_pre->add_option("--horizon", pre.horizon);
  cmd_pre->add_option("--history", pre.history);
  cmd_pre->add_option("--topk", pre.topk);
  cmd_pre->add_option("--retain-ratio", pre.retain_ratio);
  cmd_pre->add_option("--saturation", pre.saturation);
  cmd_pre->add_option("--lambda-l2", pre.lambda_l2);
  cmd_pre->add_option("--mu-adj", pre.mu_adj);

  TuneArgs tune;
  auto* cmd_tune = app.add_subcommand("tune", "adapt on the tun split");
  cmd_tune->set_config("--config");
  cmd_tune->add_option("--mode", tune.mode, "prompt|finetune|scratch");
  cmd_tune->add_option("--data", tune.data)->required();
  cmd_tune->add_option("--targets", tune.targets, "separate target tensor (defaults to --data)");
  cmd_tune->add_option("--run-dir", tune.run_dir)->required();
  cmd_tune->add_option("--seed", tune.seed)->required();
  cmd_tune->add_option("--lr", tune.lr);
  cmd_tune->add_option("--batch", tune.batch);
  cmd_tune->add_option("--epochs", tune.epochs);
  cmd_tune->add_option("--patience", tune.patience);
  cmd_tune->add_option("--weight-decay", tune.weight_decay);
  cmd_tune->add_option("--momentum", tune.momentum);
  cmd_tune->add_option("--prompt-d-hidden", tune.prompt_d_hidden);
  cmd_tune->add_option("--prompt-kernel", tune.prompt_kernel);
  cmd_tune->add_option("--prompt-dropout", tune.prompt_dropout);

  PredictArgs predict_args;
  auto* cmd_predict = app.add_subcommand("predict", "forecast one window");
  cmd_predict->add_option("--data", predict_args.data)->required();
  cmd_predict->add_option("--run-dir", predict_args.run_dir)->required();
  cmd_predict->add_option("--origin", predict_args.origin)->required();
  cmd_predict->add_option("--out", predict_args.out);
  cmd_predict->add_flag("--prompt", predict_args.use_prompt, "apply the tuned prompt editor");

  EvalArgs eval_args;
  auto* cmd_eval = app.add_subcommand("eval", "metrics over a split");
  cmd_eval->add_option("--data", eval_args.data)->required();
  cmd_eval->add_option("--targets", eval_args.targets);
  cmd_eval->add_option("--run-dir", eval_args.run_dir)->required();
  cmd_eval->add_option("--split", eval_args.split, "pre|tun|val|tst");
  cmd_eval->add_option("--out", eval_args.out);
  cmd_eval->add_flag("--prompt", eval_args.use_prompt);

  BenchArgs bench;
  auto* cmd_bench = app.add_subcommand("bench", "adaptation-arm comparison harness");
  cmd_bench->add_option("--run-dir", bench.run_dir)->required();
  cmd_bench->add_option("--scales", bench.scales, "comma-separated node counts");
  cmd_bench->add_option("--seeds", bench.seeds, "number of seeds");
  cmd_bench->add_option("--arms", bench.arms);
  cmd_bench->add_option("--steps", bench.steps, "synthetic series length");
  cmd_bench->add_option("--epochs", bench.epochs, "tuning epochs per arm");
  cmd_bench->add_flag("--parallel", bench.parallel, "run arms in parallel threads");

  ShiftgenArgs shiftgen;
  auto* cmd_shift = app.add_subcommand("shiftgen", "generate synthetic or shifted tensors");
  cmd_shift->add_option("--data", shiftgen.data);
  cmd_shift->add_flag("--synthetic", shiftgen.synthetic);
  cmd_shift->add_option("--out", shiftgen.out)->required();
  cmd_shift->add_option("--graph-out", shiftgen.graph_out);
  cmd_shift->add_option("--nodes", shiftgen.nodes);
  cmd_shift->add_option("--steps", shiftgen.steps);
  cmd_shift->add_option("--period", shiftgen.period);
  cmd_shift->add_option("--noise", shiftgen.noise);
  cmd_shift->add_option("--coupling", shiftgen.coupling);
  cmd_shift->add_option("--seed", shiftgen.seed);
  cmd_shift->add_option("--topology", shiftgen.topology, "ring|geometric");
  cmd_shift->add_option("--kind", shiftgen.kind, "none|phase|amplitude|mixed");
  cmd_shift->add_option("--lag", shiftgen.lag);
  cmd_shift->add_option("--scale", shiftgen.scale);
  cmd_shift->add_option("--begin", shiftgen.begin);
  cmd_shift->add_option("--end", shiftgen.end);

  double gradcheck_tol = 1e-4;
  auto* cmd_grad = app.add_subcommand("gradcheck", "finite-difference check of every op");
  cmd_grad->add_option("--tol", gradcheck_tol);

  InspectArgs inspect;
  auto* cmd_inspect = app.add_subcommand("inspect", "print checkpoint contents");
  cmd_inspect->add_option("--ckpt", inspect.ckpt)->required();
  cmd_inspect->add_option("--prompt-config", inspect.prompt_config,
                          "treat the checkpoint as a prompt and describe it");
  cmd_inspect->add_option("--data", inspect.data, "tensor for the edit-magnitude probe");
  cmd_inspect->add_option("--origin", inspect.origin);

  try {
    app.parse(argc, argv);
    if (cmd_ingest->parsed()) return run_ingest(ingest, cmd_ingest);
    if (cmd_pre->parsed()) return run_pretrain(pre, cmd_pre);
    if (cmd_tune->parsed()) return run_tune(tune, cmd_tune);
    if (cmd_predict->parsed()) return run_predict(predict_args, cmd_predict);
    if (cmd_eval->parsed()) return run_eval(eval_args, cmd_eval);
    if (cmd_bench->parsed()) return run_bench_cmd(bench, cmd_bench);
    if (cmd_shift->parsed()) return run_shiftgen(shiftgen, cmd_shift);
    if (cmd_grad->parsed()) return run_gradcheck(gradcheck_tol);
    if (cmd_inspect->parsed()) return run_inspect(inspect, cmd_inspect);
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ContractError& e) {
    std::cerr << "error: contract: " << e.what() << "\n";
    return kExitContract;
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
