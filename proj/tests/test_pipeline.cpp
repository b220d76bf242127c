#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "stprompt/pipeline.hpp"
#include "stprompt/shiftlab.hpp"

using namespace stprompt;
using ad::Tensor;

namespace {

BackboneConfig tiny_backbone(std::size_t nodes) {
  BackboneConfig cfg;
  cfg.n_nodes = nodes;
  cfg.d_embed = 4;
  cfg.d_hidden = 8;
  cfg.d_skip = 8;
  cfg.layers = 1;
  cfg.mixhop_depth = 2;
  cfg.horizon = 6;
  cfg.history = 12;
  return cfg;
}

PromptConfig tiny_prompt() {
  PromptConfig cfg;
  cfg.d_hidden = 8;
  cfg.kernel = 7;
  cfg.window = 12;
  cfg.dropout_rate = 0.0;
  return cfg;
}

struct Fixture {
  StTensor xn;
  SplitPlan splits;
  Fixture() {
    SyntheticSpec spec;
    spec.n_nodes = 4;
    spec.n_steps = 420;
    spec.period = 24;
    spec.noise_std = 0.02;
    spec.seed = 3;
    Synthetic syn = gen_synthetic(spec);
    xn = normalize(syn.x);
    splits = split_chronological(xn.T, 0.6, 0.2, 0.2, 84);
  }
};

TrainConfig quick_train(std::uint64_t seed, std::size_t epochs) {
  TrainConfig cfg;
  cfg.lr = 3e-3;
  cfg.batch = 16;
  cfg.epochs = epochs;
  cfg.weight_decay = 1e-4;
  cfg.patience = 10;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("sgd_step arithmetic and frozen contract") {
  ParamStore store;
  store.add("theta", Tensor({1}, {1.0}));
  store.add("ice", Tensor({2}, {5.0, -3.0}));
  store.entries()[1].frozen = true;

  store.get("theta").impl()->grad = {2.0};
  store.get("ice").impl()->grad = {100.0, 100.0};

  SUBCASE("theta=1, grad=2, lr=0.1, wd=0 -> 0.8") {
    sgd_step(store, 0.1, 0.0);
    CHECK(store.get("theta").data()[0] == doctest::Approx(0.8));
    CHECK(store.get("ice").data() == std::vector<double>{5.0, -3.0});  // bitwise
  }
  SUBCASE("zero grad and zero decay leave the value untouched") {
    store.get("theta").impl()->grad = {0.0};
    sgd_step(store, 0.1, 0.0);
    CHECK(store.get("theta").data()[0] == 1.0);
  }
  SUBCASE("weight decay shifts toward zero") {
    store.get("theta").impl()->grad = {0.0};
    sgd_step(store, 0.1, 0.5);
    CHECK(store.get("theta").data()[0] == doctest::Approx(0.95));
  }
  SUBCASE("missing grad on a trainable entry is an error") {
    store.get("theta").zero_grad();
    CHECK_THROWS_AS(sgd_step(store, 0.1, 0.0), ContractError);
  }
}

TEST_CASE("momentum optimizer state size tracks trainable params only") {
  ParamStore store;
  store.add("a", Tensor::zeros({10}));
  store.add("b", Tensor::zeros({5}));
  store.entries()[1].frozen = true;
  Sgd plain(1e-3, 0.0);
  CHECK(plain.state_bytes(store) == 10 * 8);
  Sgd with_momentum(1e-3, 0.0, 0.9);
  CHECK(with_momentum.state_bytes(store) == 10 * 8 * 2);
}

TEST_CASE_FIXTURE(Fixture, "pretraining beats the predict-last baseline") {
  BackboneModel model(tiny_backbone(4), 7);
  TrainConfig cfg = quick_train(7, 25);
  cfg.curriculum = true;
  PhaseResult res = pretrain(model, xn, splits, cfg);
  CHECK(res.steps > 0);
  CHECK_FALSE(res.diverged);
  CHECK(std::isfinite(res.best_val_mae));

  // Baseline oracle: repeat the last observed value across the horizon.
  const std::size_t l_in = 12, q = 6;
  auto origins = window_origins(splits.val, l_in, q);
  double base_acc = 0.0;
  std::size_t count = 0;
  for (std::size_t o : origins) {
    for (std::size_t r = 0; r < xn.R; ++r) {
      const double last = xn.at(r, o + l_in - 1, 0) * xn.sigma[0] + xn.mu[0];
      for (std::size_t h = 0; h < q; ++h) {
        const double truth = xn.at(r, o + l_in + h, 0) * xn.sigma[0] + xn.mu[0];
        base_acc += std::fabs(truth - last);
        ++count;
      }
    }
  }
  const double baseline_mae = base_acc / double(count);
  CHECK(res.best_val_mae < baseline_mae);
}

TEST_CASE_FIXTURE(Fixture, "zero-epoch pretraining returns the initial parameters") {
  BackboneModel model(tiny_backbone(4), 11);
  const std::string before = model.params().digest();
  PhaseResult res = pretrain(model, xn, splits, quick_train(11, 0));
  CHECK(res.steps == 0);
  CHECK(res.epochs.empty());
  CHECK(model.params().digest() == before);
}

TEST_CASE_FIXTURE(Fixture, "same seed reproduces checkpoints bitwise") {
  BackboneModel a(tiny_backbone(4), 5);
  BackboneModel b(tiny_backbone(4), 5);
  PhaseResult ra = pretrain(a, xn, splits, quick_train(5, 4));
  PhaseResult rb = pretrain(b, xn, splits, quick_train(5, 4));
  CHECK(a.params().digest() == b.params().digest());
  CHECK(ra.batch_digest == rb.batch_digest);

  BackboneModel c(tiny_backbone(4), 5);
  PhaseResult rc = pretrain(c, xn, splits, quick_train(6, 4));
  CHECK(rc.batch_digest != ra.batch_digest);  // different shuffle stream
}

TEST_CASE_FIXTURE(Fixture, "monotone best-val: retained checkpoint is the epoch minimum") {
  BackboneModel model(tiny_backbone(4), 13);
  PhaseResult res = pretrain(model, xn, splits, quick_train(13, 6));
  double min_val = std::numeric_limits<double>::infinity();
  for (const auto& e : res.epochs) min_val = std::min(min_val, e.val_mae);
  CHECK(res.best_val_mae == doctest::Approx(min_val));
}

TEST_CASE_FIXTURE(Fixture, "freeze digest survives save/load and update attempts") {
  BackboneModel model(tiny_backbone(4), 17);
  pretrain(model, xn, splits, quick_train(17, 2));
  const std::string digest = freeze(model);
  CHECK(digest == model.params().digest());

  // sgd over the frozen store is a no-op
  sgd_step(model.params(), 1.0, 0.5);
  CHECK(model.params().digest() == digest);

  const std::string path = "frozen_ckpt_test.bin";
  model.params().save(path);
  ParamStore loaded = ParamStore::load(path);
  CHECK(loaded.digest() == digest);
  CHECK(loaded.all_frozen());
  std::remove(path.c_str());
}

TEST_CASE_FIXTURE(Fixture, "prompt tuning honors the frozen-backbone contract") {
  BackboneModel model(tiny_backbone(4), 19);
  pretrain(model, xn, splits, quick_train(19, 3));
  const std::string digest = freeze(model);

  PromptNet prompt(tiny_prompt(), 19);
  DataView data{&xn, nullptr};

  SUBCASE("zero-epoch tuning leaves composite == frozen baseline bitwise") {
    TrainConfig cfg = quick_train(19, 0);
    prompt_tune(prompt, model, data, splits.tun, cfg);
    auto origins = window_origins(splits.tun, 12, 6);
    ForecastBatch fb = gather_windows(xn, {origins[0]}, 12, 6);
    Tensor x({1, 4, 12, 1}, fb.inputs);
    Tensor composite = predict(model, &prompt, x);
    Tensor baseline = predict(model, nullptr, x);
    CHECK(composite.data() == baseline.data());
  }

  SUBCASE("tuning moves only prompt parameters and verifies the digest") {
    TrainConfig cfg = quick_train(19, 2);
    cfg.lr = 1e-3;
    PhaseResult res = prompt_tune(prompt, model, data, splits.tun, cfg);
    CHECK(model.params().digest() == digest);
    CHECK(res.steps > 0);
    CHECK(model.params().count_params(true) == 0);
    CHECK(prompt.params().count_params(true) == prompt.params().count_params());
  }

  SUBCASE("prompt gradients are nonzero on a generic batch") {
    auto origins = window_origins(splits.tun, 12, 6);
    ForecastBatch fb = gather_windows(xn, {origins[0], origins[1]}, 12, 6);
    Tensor x({2, 4, 12, 1}, fb.inputs);
    Tensor y({2, 4, 6, 1}, fb.targets);
    for (auto& e : prompt.params().entries()) e.tensor.zero_grad();
    ad::Tape tape;
    ad::Tape::Scope scope(tape);
    Tensor loss = ad::l1_loss(model.forward(prompt.forward(x, false)), y);
    tape.backward(loss);
    double norm = 0.0;
    for (auto& e : prompt.params().entries()) {
      if (e.tensor.has_grad()) {
        for (double g : e.tensor.grad()) norm += g * g;
      }
    }
    CHECK(norm > 0.0);
  }

  SUBCASE("tuning an unfrozen backbone is rejected") {
    BackboneModel raw(tiny_backbone(4), 23);
    CHECK_THROWS_AS(prompt_tune(prompt, raw, data, splits.tun, quick_train(23, 1)),
                    ContractError);
  }
}

TEST_CASE_FIXTURE(Fixture, "zero learning rate finetuning keeps the frozen baseline") {
  BackboneModel model(tiny_backbone(4), 29);
  pretrain(model, xn, splits, quick_train(29, 2));
  BackboneModel copy = model.clone();
  freeze(model);

  DataView data{&xn, nullptr};
  TrainConfig cfg = quick_train(29, 2);
  cfg.lr = 1e-300;  // effectively zero step size
  cfg.weight_decay = 0.0;
  const std::string before = copy.params().digest();
  finetune_all(copy, data, splits.tun, cfg);
  CHECK(copy.params().digest() == before);

  EvalResult frozen_eval = evaluate_model(model, nullptr, data, splits.tst);
  EvalResult tuned_eval = evaluate_model(copy, nullptr, data, splits.tst);
  CHECK(frozen_eval.mae == doctest::Approx(tuned_eval.mae).epsilon(1e-12));
}

TEST_CASE_FIXTURE(Fixture, "all arms share the batch order under one seed") {
  BackboneModel model(tiny_backbone(4), 31);
  pretrain(model, xn, splits, quick_train(31, 2));
  BackboneModel ft = model.clone();
  BackboneModel sc = model.reinitialized(99);
  freeze(model);

  DataView data{&xn, nullptr};
  TrainConfig cfg = quick_train(31, 2);
  PromptNet prompt(tiny_prompt(), 31);
  PhaseResult rp = prompt_tune(prompt, model, data, splits.tun, cfg);
  PhaseResult rf = finetune_all(ft, data, splits.tun, cfg);
  PhaseResult rs = scratch_train(sc, data, splits.tun, cfg);
  CHECK(rp.batch_digest == rf.batch_digest);
  CHECK(rf.batch_digest == rs.batch_digest);
}

TEST_CASE_FIXTURE(Fixture, "tuning loss decreases on the synthetic task") {
  BackboneModel model(tiny_backbone(4), 37);
  pretrain(model, xn, splits, quick_train(37, 2));
  BackboneModel copy = model.clone();
  DataView data{&xn, nullptr};
  TrainConfig cfg = quick_train(37, 8);
  PhaseResult res = finetune_all(copy, data, splits.tun, cfg);
  REQUIRE(res.epochs.size() >= 2);
  CHECK(res.epochs.back().train_loss < res.epochs.front().train_loss);
}

TEST_CASE_FIXTURE(Fixture, "predict output contract") {
  BackboneModel model(tiny_backbone(4), 41);
  pretrain(model, xn, splits, quick_train(41, 1));
  freeze(model);
  auto origins = window_origins(splits.tst, 12, 6);
  ForecastBatch fb = gather_windows(xn, {origins[0]}, 12, 6);
  Tensor x({4, 12, 1}, fb.inputs);  // single window, no batch axis
  Tensor y1 = predict(model, nullptr, x);
  CHECK(y1.shape() == ad::Shape{4, 6, 1});
  Tensor y2 = predict(model, nullptr, x);
  CHECK(y1.data() == y2.data());  // eval path is deterministic
}

TEST_CASE("holdout split falls back to self-validation when short") {
  auto [fit, hold] = holdout_split({0, 400}, 12, 6);
  CHECK(fit.len() == 300);
  CHECK(hold.len() == 100);
  auto [fit2, hold2] = holdout_split({0, 30}, 12, 6);
  CHECK(fit2.len() == 30);
  CHECK(hold2.len() == 30);
}

TEST_CASE_FIXTURE(Fixture, "divergence aborts and keeps the last good checkpoint") {
  BackboneModel model(tiny_backbone(4), 43);
  TrainConfig cfg = quick_train(43, 6);
  cfg.lr = 1e6;  // guaranteed blow-up
  PhaseResult res = pretrain(model, xn, splits, cfg);
  CHECK(res.diverged);
  for (const auto& e : model.params().entries()) {
    for (double v : e.tensor.data()) CHECK(std::isfinite(v));
  }
}
