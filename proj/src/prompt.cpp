#include "stprompt/prompt.hpp"

#include <cmath>
#include <sstream>

namespace stprompt {

using ad::Tensor;

void PromptConfig::validate() const {
  if (kernel < 1) throw ConfigError("prompt: kernel must be >= 1");
  if (d_hidden < 1) throw ConfigError("prompt: d_hidden must be >= 1");
  if (window < kernel) {
    throw ConfigError("prompt: window " + std::to_string(window) +
                      " shorter than conv span " + std::to_string(kernel));
  }
  if (tcn_layers != 2 || mlp_layers != 2) {
    throw ConfigError("prompt: the editor is fixed at 2 TCN + 2 affine layers");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("prompt: dropout_rate must be in [0,1)");
  }
  if (n_features < 1) throw ConfigError("prompt: n_features must be >= 1");
}

std::string PromptConfig::serialize() const {
  std::ostringstream os;
  os << "d_hidden=" << d_hidden << "\nkernel=" << kernel << "\ndropout_rate=" << dropout_rate
     << "\nzero_init_output=" << (zero_init_output ? 1 : 0) << "\nwindow=" << window
     << "\nn_features=" << n_features << "\n";
  return os.str();
}

PromptConfig PromptConfig::parse(const std::string& text) {
  PromptConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("bad prompt config line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "d_hidden") cfg.d_hidden = std::stoul(val);
    else if (key == "kernel") cfg.kernel = std::stoul(val);
    else if (key == "dropout_rate") cfg.dropout_rate = std::stod(val);
    else if (key == "zero_init_output") cfg.zero_init_output = std::stoul(val) != 0;
    else if (key == "window") cfg.window = std::stoul(val);
    else if (key == "n_features") cfg.n_features = std::stoul(val);
    else throw ConfigError("unknown prompt config key: " + key);
  }
  cfg.validate();
  return cfg;
}

PromptNet::PromptNet(PromptConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t d = cfg_.d_hidden, F = cfg_.n_features;
  const std::size_t T = cfg_.window, Tc = cfg_.compressed();

  auto xavier = [&rng](ad::Shape shape, std::size_t fin, std::size_t fout) {
    const double a = std::sqrt(6.0 / static_cast<double>(fin + fout));
    return Tensor::uniform(std::move(shape), rng, -a, a);
  };
  params_.add("w1", xavier({F, d}, F, d));            // per-step embedding
  params_.add("w2", xavier({cfg_.kernel}, cfg_.kernel, 1));  // shared valid conv
  params_.add("b1", Tensor::zeros({d}));
  params_.add("w3", xavier({T, Tc}, Tc, T));          // time restoration map
  params_.add("b2", Tensor::zeros({d}));
  params_.add("w4", cfg_.zero_init_output ? Tensor::zeros({d, F}) : xavier({d, F}, d, F));
}

Tensor PromptNet::forward(const Tensor& x, bool train_mode, std::uint64_t dropout_seed) {
  if (x.ndim() != 3 && x.ndim() != 4) throw ShapeError("prompt: input must be [R,T,F] or [B,R,T,F]");
  if (x.shape()[x.ndim() - 2] != cfg_.window) {
    throw ShapeError("prompt: window length " + std::to_string(x.shape()[x.ndim() - 2]) +
                     " does not match configured " + std::to_string(cfg_.window));
  }
  if (x.shape()[x.ndim() - 1] != cfg_.n_features) {
    throw ShapeError("prompt: feature count mismatch");
  }
  // Regions are independent, so fold any leading dims into one.
  const std::size_t lead = x.size() / (cfg_.window * cfg_.n_features);
  Tensor flat = ad::reshape(x, {lead, cfg_.window, cfg_.n_features});

  Tensor h = ad::matmul(flat, params_.get("w1"));                       // [N,T,d]
  Tensor conv = ad::valid_conv1d_shared(h, params_.get("w2"));          // [N,T',d]
  Tensor pre = ad::add(conv, params_.get("b1"));
  Tensor dropped = ad::dropout(pre, cfg_.dropout_rate, train_mode, dropout_seed);
  Tensor compressed = ad::relu(dropped);
  Tensor restored = ad::node_mix(params_.get("w3"), compressed);        // [N,T,d]
  Tensor hidden = ad::relu(ad::add(restored, params_.get("b2")));
  Tensor edit = ad::matmul(hidden, params_.get("w4"));                  // [N,T,F]
  return ad::reshape(ad::add(flat, edit), x.shape());
}

double PromptNet::edit_magnitude(const ad::Tensor& x) {
  Tensor edited = forward(x, /*train_mode=*/false);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = edited.data()[i] - x.data()[i];
    num += d * d;
    den += x.data()[i] * x.data()[i];
  }
  return std::sqrt(num) / (std::sqrt(den) + 1e-12);
}

PromptNet PromptNet::clone() const {
  PromptNet copy;
  copy.cfg_ = cfg_;
  copy.params_ = params_.clone();
  return copy;
}

std::string PromptNet::describe() const {
  std::ostringstream os;
  os << "prompt editor: window=" << cfg_.window << " compressed=" << cfg_.compressed()
     << " d_hidden=" << cfg_.d_hidden << " kernel=" << cfg_.kernel << "\n";
  for (const auto& e : params_.entries()) {
    os << "  " << e.name << " " << ad::shape_str(e.tensor.shape()) << " ("
       << e.tensor.size() << (e.frozen ? ", frozen)" : ")") << "\n";
  }
  os << "  total " << params_.count_params() << " parameters\n";
  return os.str();
}

SimpleEditor::SimpleEditor(std::size_t n_features, std::size_t d_hidden, std::uint64_t seed,
                           std::size_t kernel, double dropout_rate)
    : f_(n_features), d_(d_hidden), kernel_(kernel), dropout_rate_(dropout_rate),
      bn1_(n_features), bn2_(n_features) {
  Rng rng(seed);
  auto xavier = [&rng](ad::Shape shape, std::size_t fin, std::size_t fout) {
    const double a = std::sqrt(6.0 / static_cast<double>(fin + fout));
    return Tensor::uniform(std::move(shape), rng, -a, a);
  };
  params_.add("conv1", xavier({f_, f_, kernel_}, f_ * kernel_, f_ * kernel_));
  params_.add("conv2", xavier({f_, f_, kernel_}, f_ * kernel_, f_ * kernel_));
  params_.add("w", xavier({f_, d_}, f_, d_));
  params_.add("b", Tensor::zeros({d_}));
  params_.add("u", Tensor::zeros({d_, f_}));  // identity editor at init
  params_.add("bn1.gamma", bn1_.gamma());
  params_.add("bn1.beta", bn1_.beta());
  params_.add("bn2.gamma", bn2_.gamma());
  params_.add("bn2.beta", bn2_.beta());
}

Tensor SimpleEditor::forward(const Tensor& x, bool train_mode, std::uint64_t dropout_seed) {
  if (x.ndim() < 2 || x.shape()[x.ndim() - 1] != f_) {
    throw ShapeError("simple editor: trailing axis must have " + std::to_string(f_) +
                     " features");
  }
  Tensor u1 = ad::causal_dilated_conv1d(x, params_.get("conv1"), 1);
  Tensor u2 = ad::causal_dilated_conv1d(ad::relu(bn1_.forward(u1, train_mode)),
                                        params_.get("conv2"), 2);
  Tensor block = ad::add(
      x, ad::dropout(ad::relu(bn2_.forward(u2, train_mode)), dropout_rate_, train_mode,
                     dropout_seed));
  Tensor z = ad::relu(ad::add(ad::matmul(block, params_.get("w")), params_.get("b")));
  return ad::add(x, ad::matmul(z, params_.get("u")));
}

ToyFitReport toy_phase_fit(PromptNet& net, const std::vector<double>& series, std::size_t lag,
                           std::size_t steps, double lr, Warnings* warnings) {
  const auto& cfg = net.config();
  if (cfg.n_features != 1) throw ConfigError("toy_phase_fit expects a scalar-feature prompt");
  const std::size_t T = cfg.window;
  if (series.size() < T + 1) throw DataError("toy_phase_fit: series shorter than one window");

  ToyFitReport report;
  if (lag > cfg.kernel) {
    report.lag_exceeds_span = true;
    warn(warnings, "toy_phase_fit: lag " + std::to_string(lag) +
                       " exceeds the prompt conv span " + std::to_string(cfg.kernel));
  }

  // Delayed copy with leading-edge fill.
  std::vector<double> lagged(series.size());
  for (std::size_t t = 0; t < series.size(); ++t) {
    lagged[t] = series[t >= lag ? t - lag : 0];
  }

  const std::size_t n_windows = series.size() - T + 1;
  Tensor inputs = Tensor::zeros({n_windows, T, 1});
  Tensor refs = Tensor::zeros({n_windows, T, 1});
  for (std::size_t w = 0; w < n_windows; ++w) {
    for (std::size_t t = 0; t < T; ++t) {
      inputs.data()[w * T + t] = lagged[w + t];
      refs.data()[w * T + t] = series[w + t];
    }
  }

  auto eval_mae = [&]() {
    Tensor edited = net.forward(inputs, false);
    double acc = 0.0;
    for (std::size_t i = 0; i < edited.size(); ++i) {
      acc += std::fabs(edited.data()[i] - refs.data()[i]);
    }
    return acc / static_cast<double>(edited.size());
  };
  report.pre_mae = eval_mae();

  Rng seeds(0x70f17u);
  for (std::size_t step = 0; step < steps; ++step) {
    for (auto& e : net.params().entries()) e.tensor.zero_grad();
    ad::Tape tape;
    ad::Tape::Scope scope(tape);
    Tensor edited = net.forward(inputs, true, seeds.fork());
    Tensor loss = ad::l1_loss(edited, refs);
    tape.backward(loss);
    for (auto& e : net.params().entries()) {
      if (e.frozen || !e.tensor.has_grad()) continue;
      auto& v = e.tensor.data();
      const auto& g = e.tensor.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    }
    ++report.steps_run;
  }
  report.post_mae = eval_mae();
  report.edit_magnitude = net.edit_magnitude(inputs);
  return report;
}

}  // namespace stprompt
