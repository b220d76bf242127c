#include "stprompt/gradbattery.hpp"

#include "stprompt/backbone.hpp"
#include "stprompt/prompt.hpp"

namespace stprompt::ad {

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

struct Case {
  std::string name;
  Fn fn;
  std::vector<Tensor> inputs;
  double eps = 1e-3;
};

}  // namespace

std::vector<BatteryResult> run_gradient_battery(double tol) {
  Rng rng(0xba77e7);
  auto mk = [&rng](Shape s) { return Tensor::randn(std::move(s), rng, 0.8); };

  std::vector<Case> cases;
  cases.push_back({"add", [](const std::vector<Tensor>& in) { return sum_all(add(in[0], in[1])); },
                   {mk({2, 3}), mk({3})}});
  cases.push_back({"sub", [](const std::vector<Tensor>& in) { return sum_all(sub(in[0], in[1])); },
                   {mk({4}), mk({4})}});
  cases.push_back({"mul", [](const std::vector<Tensor>& in) { return sum_all(mul(in[0], in[1])); },
                   {mk({3, 2}), mk({3, 1})}});
  cases.push_back({"div",
                   [](const std::vector<Tensor>& in) {
                     return sum_all(div(in[0], add_scalar(sigmoid(in[1]), 1.0)));
                   },
                   {mk({3}), mk({3})}});
  cases.push_back({"matmul",
                   [](const std::vector<Tensor>& in) { return sum_all(matmul(in[0], in[1])); },
                   {mk({2, 2, 3}), mk({3, 2})}});
  cases.push_back({"transpose2d",
                   [](const std::vector<Tensor>& in) {
                     return sum_all(mul(transpose2d(in[0]), in[1]));
                   },
                   {mk({2, 3}), mk({3, 2})}});
  cases.push_back({"node_mix",
                   [](const std::vector<Tensor>& in) { return sum_all(node_mix(in[0], in[1])); },
                   {mk({3, 3}), mk({2, 3, 2})}});
  cases.push_back({"relu", [](const std::vector<Tensor>& in) { return sum_all(relu(in[0])); },
                   {mk({6})}});
  cases.push_back({"tanh", [](const std::vector<Tensor>& in) { return sum_all(tanh_op(in[0])); },
                   {mk({6})}});
  cases.push_back({"sigmoid",
                   [](const std::vector<Tensor>& in) { return sum_all(sigmoid(in[0])); },
                   {mk({6})}});
  cases.push_back({"exp", [](const std::vector<Tensor>& in) { return sum_all(exp_op(in[0])); },
                   {mk({4})}});
  cases.push_back({"sqrt",
                   [](const std::vector<Tensor>& in) {
                     return sum_all(sqrt_op(add_scalar(mul(in[0], in[0]), 1.0)));
                   },
                   {mk({4})}});
  cases.push_back({"abs", [](const std::vector<Tensor>& in) { return sum_all(abs_op(in[0])); },
                   {mk({6})}});
  cases.push_back({"pow_scalar",
                   [](const std::vector<Tensor>& in) {
                     return sum_all(pow_scalar(add_scalar(mul(in[0], in[0]), 1.0), -0.5));
                   },
                   {mk({4})}});
  cases.push_back({"dropout",
                   [](const std::vector<Tensor>& in) {
                     return sum_all(dropout(in[0], 0.3, true, 4242));
                   },
                   {mk({8})}});
  cases.push_back({"causal_dilated_conv1d",
                   [](const std::vector<Tensor>& in) {
                     return sum_all(causal_dilated_conv1d(in[0], in[1], 2));
                   },
                   {mk({2, 6, 2}), mk({3, 2, 2})}});
  cases.push_back({"valid_conv1d_shared",
                   [](const std::vector<Tensor>& in) {
                     return sum_all(valid_conv1d_shared(in[0], in[1]));
                   },
                   {mk({2, 6, 2}), mk({3})}});
  cases.push_back({"sum_axis",
                   [](const std::vector<Tensor>& in) {
                     return sum_all(mul(sum_axis(in[0], 1, true), in[1]));
                   },
                   {mk({3, 4}), mk({3, 1})}});
  cases.push_back({"mean_axis",
                   [](const std::vector<Tensor>& in) {
                     return sum_all(mul(mean_axis(in[0], 0, false), in[1]));
                   },
                   {mk({3, 4}), mk({4})}});
  cases.push_back({"concat_slice",
                   [](const std::vector<Tensor>& in) {
                     Tensor c = concat({in[0], in[1]}, 1);
                     return sum_all(mul(slice(c, 1, 1, 3), slice(c, 1, 0, 3)));
                   },
                   {mk({2, 2}), mk({2, 2})}});
  cases.push_back({"reshape",
                   [](const std::vector<Tensor>& in) {
                     return sum_all(mul(reshape(in[0], {6}), reshape(in[1], {6})));
                   },
                   {mk({2, 3}), mk({3, 2})}});
  cases.push_back({"l1_loss",
                   [](const std::vector<Tensor>& in) { return l1_loss(in[0], in[1]); },
                   {mk({6}), mk({6})}});
  cases.push_back({"l2_norm", [](const std::vector<Tensor>& in) { return l2_norm(in[0]); },
                   {mk({6})}});
  cases.push_back({"frobenius_norm",
                   [](const std::vector<Tensor>& in) { return frobenius_norm(in[0]); },
                   {mk({2, 3})}});
  cases.push_back({"batch_norm",
                   [](const std::vector<Tensor>& in) {
                     BatchNorm1d bn(3);
                     bn.gamma() = in[1];
                     bn.gamma().set_requires_grad(true);
                     bn.beta() = in[2];
                     bn.beta().set_requires_grad(true);
                     Tensor out = bn.forward(in[0], true);
                     return sum_all(mul(out, out));
                   },
                   {mk({6, 3}), mk({3}), mk({3})}});

  // Prompt editor with a non-zero output projection.
  {
    PromptConfig pcfg;
    pcfg.d_hidden = 2;
    pcfg.kernel = 3;
    pcfg.window = 4;
    pcfg.dropout_rate = 0.0;
    pcfg.zero_init_output = false;
    PromptNet proto(pcfg, 2);
    std::vector<Tensor> inputs = {mk({2, 4, 1})};
    for (auto& e : proto.params().entries()) inputs.push_back(mk(e.tensor.shape()));
    cases.push_back({"prompt_forward",
                     [pcfg](const std::vector<Tensor>& in) {
                       PromptNet local(pcfg, 2);
                       auto& entries = local.params().entries();
                       for (std::size_t i = 0; i < entries.size(); ++i) {
                         entries[i].tensor = in[i + 1];
                         entries[i].tensor.set_requires_grad(true);
                       }
                       Tensor out = local.forward(in[0], false);
                       return mean_all(mul(out, out));
                     },
                     std::move(inputs)});
  }

  // Tiny end-to-end forecaster; smaller probe step because the stacked
  // saturating blocks carry strong curvature.
  {
    BackboneConfig bcfg;
    bcfg.n_nodes = 4;
    bcfg.d_embed = 4;
    bcfg.d_hidden = 8;
    bcfg.d_skip = 8;
    bcfg.layers = 1;
    bcfg.mixhop_depth = 2;
    bcfg.horizon = 12;
    bcfg.history = 12;
    Tensor x = Tensor::randn({2, 4, 12, 1}, rng);
    Tensor target = Tensor::randn({2, 4, 12, 1}, rng);
    BackboneModel proto(bcfg, 33);
    std::vector<Tensor> inputs;
    for (auto& e : proto.params().entries()) inputs.push_back(e.tensor.clone());
    cases.push_back({"end_to_end_model",
                     [bcfg, x, target](const std::vector<Tensor>& in) {
                       BackboneModel local(bcfg, 33);
                       auto& entries = local.params().entries();
                       for (std::size_t i = 0; i < entries.size(); ++i) {
                         entries[i].tensor = in[i];
                         entries[i].tensor.set_requires_grad(true);
                       }
                       return local.pretrain_loss(local.forward(x), target, 12);
                     },
                     std::move(inputs), /*eps=*/1e-5});
  }

  std::vector<BatteryResult> results;
  for (auto& c : cases) {
    GradCheckReport rep = grad_check(c.fn, c.inputs, c.eps);
    results.push_back({c.name, rep.max_rel_err, rep.kink_flagged, rep.max_rel_err < tol});
  }
  return results;
}

}  // namespace stprompt::ad
