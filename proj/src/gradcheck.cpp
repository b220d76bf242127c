#include "stprompt/gradcheck.hpp"

#include <cmath>

namespace stprompt::ad {

namespace {

// Scalar value plus the relu/abs activation signature of the evaluation.
struct Probe {
  double value;
  std::vector<std::uint8_t> signs;
};

Probe eval_probe(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                 const std::vector<Tensor>& inputs) {
  KinkTrace trace;
  Tensor out = fn(inputs);
  if (out.size() != 1) throw ShapeError("grad_check: fn must return a scalar");
  return Probe{out.item(), trace.signs()};
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                           std::vector<Tensor> inputs, double eps) {
  GradCheckReport report;

  // One reverse pass for the analytic gradients.
  std::vector<std::vector<double>> analytic(inputs.size());
  {
    for (auto& t : inputs) {
      t.set_requires_grad(true);
      t.zero_grad();
    }
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = fn(inputs);
    if (loss.size() != 1) throw ShapeError("grad_check: fn must return a scalar");
    tape.backward(loss);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      analytic[i] = inputs[i].has_grad() ? inputs[i].grad()
                                         : std::vector<double>(inputs[i].size(), 0.0);
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& data = inputs[i].data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + eps;
      const Probe hi = eval_probe(fn, inputs);
      data[j] = saved - eps;
      const Probe lo = eval_probe(fn, inputs);
      data[j] = saved;

      if (hi.signs != lo.signs) {
        ++report.kink_flagged;
        if (report.notes.size() < 8) {
          report.notes.push_back("kink proximity at input " + std::to_string(i) + " coord " +
                                 std::to_string(j));
        }
        continue;
      }
      const double numeric = (hi.value - lo.value) / (2.0 * eps);
      const double a = analytic[i][j];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1.0});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_input = i;
        report.worst_coord = j;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

std::size_t receptive_field(std::size_t kernel, const std::vector<std::size_t>& dilations) {
  if (kernel < 1) throw ConfigError("kernel must be >= 1");
  if (dilations.empty()) throw ConfigError("dilations must be nonempty");
  std::size_t rf = 1;
  for (auto d : dilations) rf += (kernel - 1) * d;
  return rf;
}

std::size_t inception_receptive_field(std::size_t max_kernel, std::size_t layers) {
  return 1 + max_kernel * ((std::size_t(1) << layers) - 1);
}

}  // namespace stprompt::ad
