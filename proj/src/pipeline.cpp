#include "stprompt/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>

#include "stprompt/metrics.hpp"
#include "stprompt/sha256.hpp"

namespace stprompt {

using ad::Tensor;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor batch_inputs(const ForecastBatch& b) {
  return Tensor({b.B, b.R, b.L_in, b.F}, b.inputs);
}

Tensor batch_targets(const ForecastBatch& b) {
  return Tensor({b.B, b.R, b.L_out, b.F}, b.targets);
}

// Gathers inputs from data.in() and targets from data.tgt() over the same
// window origins.
ForecastBatch gather_pair(const DataView& data, const std::vector<std::size_t>& origins,
                          std::size_t l_in, std::size_t l_out) {
  ForecastBatch inputs = gather_windows(data.in(), origins, l_in, l_out);
  if (data.targets != nullptr && data.targets != data.inputs) {
    ForecastBatch tgt = gather_windows(data.tgt(), origins, l_in, l_out);
    inputs.targets = std::move(tgt.targets);
  }
  return inputs;
}

void denorm_inplace(std::vector<double>& v, const StTensor& src, std::size_t F) {
  if (!src.normalized) return;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t f = i % F;
    v[i] = v[i] * src.sigma[f] + src.mu[f];
  }
}

struct LoopSetup {
  std::function<Tensor(const Tensor& x, bool train_mode, std::uint64_t seed)> forward;
  std::function<Tensor(const Tensor& pred, const Tensor& y, std::size_t step,
                       std::size_t planned_steps)> loss;
  ParamStore* trainable = nullptr;
  std::size_t l_in = 0, l_out = 0;
};

std::vector<std::vector<std::size_t>> planned_batches(std::vector<std::size_t> origins,
                                                      const TrainConfig& cfg) {
  Rng order_rng(cfg.seed);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    order_rng.shuffle(origins);
    for (std::size_t pos = 0; pos < origins.size(); pos += cfg.batch) {
      const std::size_t take = std::min(cfg.batch, origins.size() - pos);
      batches.emplace_back(origins.begin() + std::ptrdiff_t(pos),
                           origins.begin() + std::ptrdiff_t(pos + take));
    }
  }
  return batches;
}

std::string digest_batches(const std::vector<std::vector<std::size_t>>& batches) {
  Sha256 h;
  for (const auto& b : batches) {
    for (std::size_t o : b) {
      std::uint8_t le[8];
      for (int i = 0; i < 8; ++i) le[i] = std::uint8_t(std::uint64_t(o) >> (8 * i));
      h.update(le, 8);
    }
  }
  return h.hex_digest();
}

EvalResult eval_range(const LoopSetup& setup, const DataView& data, const Range& range,
                      std::size_t batch) {
  auto origins = window_origins(range, setup.l_in, setup.l_out);
  if (origins.empty()) throw DataError("evaluation range yields no windows");
  std::vector<double> preds, truths;
  const std::size_t F = data.in().F;
  std::size_t R = data.in().R, Q = setup.l_out, B_total = 0;
  for (std::size_t pos = 0; pos < origins.size(); pos += batch) {
    const std::size_t take = std::min(batch, origins.size() - pos);
    std::vector<std::size_t> chunk(origins.begin() + std::ptrdiff_t(pos),
                                   origins.begin() + std::ptrdiff_t(pos + take));
    ForecastBatch fb = gather_pair(data, chunk, setup.l_in, setup.l_out);
    Tensor pred = setup.forward(batch_inputs(fb), false, 0);
    preds.insert(preds.end(), pred.data().begin(), pred.data().end());
    truths.insert(truths.end(), fb.targets.begin(), fb.targets.end());
    B_total += take;
  }
  denorm_inplace(preds, data.in(), F);
  denorm_inplace(truths, data.tgt(), F);

  // evaluate_forecast expects B x R x Q x F contiguity; batches concatenate
  // along B, so the layout is already right.
  MetricReport rep = evaluate_forecast(truths, preds, B_total, R, Q, F);
  return EvalResult{rep.mae, rep.rmse, rep.mape, rep.weighted_mae};
}

PhaseResult run_loop(const LoopSetup& setup, const DataView& data, const Range& fit,
                     const Range& val, const TrainConfig& cfg) {
  cfg.validate();
  PhaseResult result;
  auto origins = window_origins(fit, setup.l_in, setup.l_out);
  if (origins.empty() && cfg.epochs > 0) throw DataError("training range yields no windows");

  const auto batches = planned_batches(origins, cfg);
  result.batch_digest = digest_batches(batches);
  const std::size_t steps_per_epoch =
      origins.empty() ? 0 : (origins.size() + cfg.batch - 1) / cfg.batch;
  const std::size_t planned_steps = cfg.epochs * steps_per_epoch;

  ParamStore best = setup.trainable->clone();
  Sgd optimizer(cfg.lr, cfg.weight_decay, cfg.momentum);
  Rng dropout_seeds(cfg.seed ^ 0x9d70u);

  std::size_t bad_epochs = 0;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    bool aborted = false;
    for (std::size_t b = epoch * steps_per_epoch; b < (epoch + 1) * steps_per_epoch; ++b) {
      ForecastBatch fb = gather_pair(data, batches[b], setup.l_in, setup.l_out);
      Tensor x = batch_inputs(fb);
      Tensor y = batch_targets(fb);
      const std::uint64_t drop_seed = dropout_seeds.fork();

      const auto t0 = Clock::now();
      try {
        for (auto& e : setup.trainable->entries()) e.tensor.zero_grad();
        ad::Tape tape;
        ad::Tape::Scope scope(tape);
        Tensor pred = setup.forward(x, true, drop_seed);
        Tensor loss = setup.loss(pred, y, step, planned_steps);
        epoch_loss += loss.item();
        tape.backward(loss);
        optimizer.step(*setup.trainable);
      } catch (const NumericError&) {
        result.diverged = true;
        aborted = true;
        result.wall_seconds += seconds_since(t0);
        break;
      }
      result.wall_seconds += seconds_since(t0);
      ++step;
      ++epoch_batches;
    }
    result.steps = step;
    if (aborted) break;

    const auto tv = Clock::now();
    EvalResult ev = eval_range(setup, data, val, cfg.batch);
    result.wall_seconds += seconds_since(tv);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_batches ? epoch_loss / double(epoch_batches) : 0.0;
    rec.val_mae = ev.mae;
    rec.val_rmse = ev.rmse;
    rec.val_mape = ev.mape;
    rec.wall_seconds = result.wall_seconds;
    result.epochs.push_back(rec);

    if (ev.mae < result.best_val_mae - cfg.min_delta) {
      result.best_val_mae = ev.mae;
      result.best_epoch = epoch;
      best = setup.trainable->clone();
      bad_epochs = 0;
    } else {
      if (ev.mae < result.best_val_mae) {
        // still the best checkpoint even when below the patience threshold
        result.best_val_mae = ev.mae;
        result.best_epoch = epoch;
        best = setup.trainable->clone();
      }
      ++bad_epochs;
      if (bad_epochs >= cfg.patience) break;
    }
  }

  // Restore the retained checkpoint into the live parameters.
  auto& live = setup.trainable->entries();
  for (std::size_t i = 0; i < live.size(); ++i) {
    live[i].tensor.data() = best.entries()[i].tensor.data();
  }
  result.final_params = std::move(best);
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("train: lr must be positive");
  if (batch < 1) throw ConfigError("train: batch must be >= 1");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must be in [0,1)");
  if (min_delta < 0.0) throw ConfigError("train: min_delta must be >= 0");
}

void sgd_step(ParamStore& params, double lr, double weight_decay) {
  for (auto& e : params.entries()) {
    if (e.frozen) continue;
    if (!e.tensor.has_grad()) throw ContractError("missing gradient for parameter " + e.name);
    auto& v = e.tensor.data();
    const auto& g = e.tensor.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * (g[i] + weight_decay * v[i]);
  }
}

void Sgd::step(ParamStore& params) {
  if (momentum_ == 0.0) {
    sgd_step(params, lr_, weight_decay_);
    return;
  }
  for (auto& e : params.entries()) {
    if (e.frozen) continue;
    if (!e.tensor.has_grad()) throw ContractError("missing gradient for parameter " + e.name);
    auto& vel = velocity_[e.name];
    if (vel.empty()) vel.assign(e.tensor.size(), 0.0);
    auto& v = e.tensor.data();
    const auto& g = e.tensor.grad();
    for (std::size_t i = 0; i < v.size(); ++i) {
      vel[i] = momentum_ * vel[i] + g[i] + weight_decay_ * v[i];
      v[i] -= lr_ * vel[i];
    }
  }
}

std::size_t Sgd::state_bytes(const ParamStore& params) const {
  const std::size_t trainable = params.count_params(/*trainable_only=*/true);
  const std::size_t slots = 1 + (momentum_ != 0.0 ? 1 : 0);  // grads (+ velocity)
  return trainable * sizeof(double) * slots;
}

PhaseResult pretrain(BackboneModel& model, const StTensor& x, const SplitPlan& splits,
                     const TrainConfig& cfg) {
  if (splits.pre.empty() || splits.val.empty()) throw DataError("pretrain needs pre and val data");
  DataView data{&x, nullptr};
  LoopSetup setup;
  setup.l_in = model.config().history;
  setup.l_out = model.config().horizon;
  setup.trainable = &model.params();
  setup.forward = [&model](const Tensor& xb, bool, std::uint64_t) { return model.forward(xb); };
  const std::size_t horizon = model.config().horizon;
  setup.loss = [&model, horizon, &cfg](const Tensor& pred, const Tensor& y, std::size_t step,
                                       std::size_t planned) {
    const std::size_t q = cfg.curriculum ? curriculum_horizon(step, planned, horizon) : horizon;
    return model.pretrain_loss(pred, y, q);
  };
  return run_loop(setup, data, splits.pre, splits.val, cfg);
}

std::string freeze(BackboneModel& model) {
  model.freeze();
  return model.params().digest();
}

std::pair<Range, Range> holdout_split(const Range& range, std::size_t l_in, std::size_t l_out) {
  const std::size_t quarter = range.len() / 4;
  Range fit{range.begin, range.end - quarter};
  Range hold{range.end - quarter, range.end};
  if (window_count(fit.len(), l_in, l_out, 1) >= 1 &&
      window_count(hold.len(), l_in, l_out, 1) >= 1) {
    return {fit, hold};
  }
  return {range, range};  // too short to hold out: self-validate
}

PhaseResult prompt_tune(PromptNet& prompt, BackboneModel& frozen_model, const DataView& data,
                        const Range& tun, const TrainConfig& cfg) {
  if (!frozen_model.frozen()) throw ContractError("prompt tuning requires a frozen backbone");
  if (tun.empty()) throw DataError("prompt tuning range is empty");
  const std::string digest_before = frozen_model.params().digest();

  LoopSetup setup;
  setup.l_in = frozen_model.config().history;
  setup.l_out = frozen_model.config().horizon;
  setup.trainable = &prompt.params();
  setup.forward = [&prompt, &frozen_model](const Tensor& xb, bool train, std::uint64_t seed) {
    return frozen_model.forward(prompt.forward(xb, train, seed));
  };
  setup.loss = [](const Tensor& pred, const Tensor& y, std::size_t, std::size_t) {
    return ad::l1_loss(pred, y);
  };
  auto [fit, hold] = holdout_split(tun, setup.l_in, setup.l_out);
  PhaseResult result = run_loop(setup, data, fit, hold, cfg);

  if (frozen_model.params().digest() != digest_before) {
    throw ContractError("frozen backbone digest changed during prompt tuning");
  }
  return result;
}

namespace {

PhaseResult tune_full_model(BackboneModel& model, const DataView& data, const Range& tun,
                            const TrainConfig& cfg) {
  if (model.frozen()) throw ContractError("full tuning needs an unfrozen model");
  if (tun.empty()) throw DataError("tuning range is empty");
  LoopSetup setup;
  setup.l_in = model.config().history;
  setup.l_out = model.config().horizon;
  setup.trainable = &model.params();
  setup.forward = [&model](const Tensor& xb, bool, std::uint64_t) { return model.forward(xb); };
  setup.loss = [](const Tensor& pred, const Tensor& y, std::size_t, std::size_t) {
    return ad::l1_loss(pred, y);
  };
  auto [fit, hold] = holdout_split(tun, setup.l_in, setup.l_out);
  return run_loop(setup, data, fit, hold, cfg);
}

}  // namespace

PhaseResult finetune_all(BackboneModel& model_copy, const DataView& data, const Range& tun,
                         const TrainConfig& cfg) {
  return tune_full_model(model_copy, data, tun, cfg);
}

PhaseResult scratch_train(BackboneModel& fresh_model, const DataView& data, const Range& tun,
                          const TrainConfig& cfg) {
  return tune_full_model(fresh_model, data, tun, cfg);
}

Tensor predict(BackboneModel& model, PromptNet* prompt, const Tensor& x_window) {
  Tensor x = x_window;
  bool squeeze = false;
  if (x.ndim() == 3) {
    ad::Shape s = x.shape();
    x = ad::reshape(x, {1, s[0], s[1], s[2]});
    squeeze = true;
  }
  Tensor edited = prompt ? prompt->forward(x, false) : x;
  Tensor pred = model.forward(edited);
  if (squeeze) {
    pred = ad::reshape(pred, {pred.shape()[1], pred.shape()[2], pred.shape()[3]});
  }
  return pred;
}

EvalResult evaluate_model(BackboneModel& model, PromptNet* prompt, const DataView& data,
                          const Range& range, std::size_t batch) {
  LoopSetup setup;
  setup.l_in = model.config().history;
  setup.l_out = model.config().horizon;
  setup.forward = [&model, prompt](const Tensor& xb, bool, std::uint64_t) {
    return model.forward(prompt ? prompt->forward(xb, false) : xb);
  };
  return eval_range(setup, data, range, batch);
}

void append_metrics_log(const std::string& metrics_path, const std::string& timing_path,
                        const std::string& phase, const PhaseResult& result) {
  std::ofstream out(metrics_path, std::ios::app);
  if (!out) throw DataError("cannot append metrics log: " + metrics_path);
  out.precision(17);
  for (const auto& e : result.epochs) {
    out << phase << "," << e.epoch << ",train," << e.train_loss << ",,\n";
    out << phase << "," << e.epoch << ",val," << e.val_mae << "," << e.val_rmse << ","
        << e.val_mape << "\n";
  }
  out << phase << ",summary,best_epoch," << result.best_epoch << ",steps," << result.steps
      << "\n";

  std::ofstream timing(timing_path, std::ios::app);
  if (!timing) throw DataError("cannot append timing log: " + timing_path);
  for (const auto& e : result.epochs) {
    timing << phase << "," << e.epoch << "," << e.wall_seconds << "\n";
  }
  timing << phase << ",total," << result.wall_seconds << "\n";
}

}  // namespace stprompt
