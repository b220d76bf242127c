#include "stprompt/backbone.hpp"

#include "stprompt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace stprompt {

using ad::Tensor;

namespace {

Tensor xavier(ad::Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::uniform(std::move(shape), rng, -a, a);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const std::size_t last = x.ndim() - 1;
  Tensor mean = ad::mean_axis(x, last, true);
  Tensor centered = ad::sub(x, mean);
  Tensor var = ad::mean_axis(ad::mul(centered, centered), last, true);
  Tensor norm = ad::div(centered, ad::sqrt_op(ad::add_scalar(var, eps)));
  return ad::add(ad::mul(norm, gamma), beta);
}

// Split d' output channels across the kernel set as evenly as possible,
// remainder assigned to the smallest kernels.
std::vector<std::size_t> channel_split(std::size_t d_out, const std::vector<std::size_t>& kernels) {
  std::vector<std::size_t> sorted = kernels;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t base = d_out / kernels.size();
  const std::size_t rem = d_out % kernels.size();
  std::vector<std::size_t> widths(kernels.size());
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const auto rank = static_cast<std::size_t>(
        std::find(sorted.begin(), sorted.end(), kernels[i]) - sorted.begin());
    widths[i] = base + (rank < rem ? 1 : 0);
  }
  return widths;
}

}  // namespace

void BackboneConfig::validate() const {
  if (n_nodes == 0) throw ConfigError("backbone: n_nodes must be positive");
  if (kernel_set.empty()) throw ConfigError("backbone: kernel set must be nonempty");
  if (retain_ratio < 0.0 || retain_ratio > 1.0) throw ConfigError("backbone: beta not in [0,1]");
  if (saturation <= 0.0) throw ConfigError("backbone: saturation must be positive");
  if (effective_topk() < 1) throw ConfigError("backbone: topk must be >= 1");
  if (layers == 0 || d_hidden == 0 || horizon == 0 || history == 0) {
    throw ConfigError("backbone: layers, d_hidden, horizon, history must be positive");
  }
  if (d_hidden < kernel_set.size()) {
    throw ConfigError("backbone: d_hidden smaller than the kernel set");
  }
}

std::string BackboneConfig::serialize() const {
  std::ostringstream os;
  os << "n_nodes=" << n_nodes << "\nn_features=" << n_features << "\nd_embed=" << d_embed
     << "\nd_hidden=" << d_hidden << "\nd_skip=" << d_skip << "\nlayers=" << layers
     << "\nmixhop_depth=" << mixhop_depth << "\nretain_ratio=" << retain_ratio << "\nkernel_set=";
  for (std::size_t i = 0; i < kernel_set.size(); ++i) os << (i ? ";" : "") << kernel_set[i];
  os << "\nsaturation=" << saturation << "\ntopk=" << topk << "\nlambda_l2=" << lambda_l2
     << "\nmu_adj=" << mu_adj << "\nhorizon=" << horizon << "\nhistory=" << history << "\n";
  return os.str();
}

BackboneConfig BackboneConfig::parse(const std::string& text) {
  BackboneConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("bad config line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "n_nodes") cfg.n_nodes = std::stoul(val);
    else if (key == "n_features") cfg.n_features = std::stoul(val);
    else if (key == "d_embed") cfg.d_embed = std::stoul(val);
    else if (key == "d_hidden") cfg.d_hidden = std::stoul(val);
    else if (key == "d_skip") cfg.d_skip = std::stoul(val);
    else if (key == "layers") cfg.layers = std::stoul(val);
    else if (key == "mixhop_depth") cfg.mixhop_depth = std::stoul(val);
    else if (key == "retain_ratio") cfg.retain_ratio = std::stod(val);
    else if (key == "saturation") cfg.saturation = std::stod(val);
    else if (key == "topk") cfg.topk = std::stoul(val);
    else if (key == "lambda_l2") cfg.lambda_l2 = std::stod(val);
    else if (key == "mu_adj") cfg.mu_adj = std::stod(val);
    else if (key == "horizon") cfg.horizon = std::stoul(val);
    else if (key == "history") cfg.history = std::stoul(val);
    else if (key == "kernel_set") {
      cfg.kernel_set.clear();
      std::istringstream ks(val);
      std::string tok;
      while (std::getline(ks, tok, ';')) cfg.kernel_set.push_back(std::stoul(tok));
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
  cfg.validate();
  return cfg;
}

Tensor learn_graph(const Tensor& e1, const Tensor& e2, const Tensor& theta1, const Tensor& theta2,
                   double saturation, std::size_t topk) {
  if (e1.ndim() != 2 || e2.shape() != e1.shape()) throw ShapeError("learn_graph: bad embeddings");
  const std::size_t R = e1.shape()[0];
  if (topk < 1 || topk > R) throw ConfigError("learn_graph: topk out of range");

  Tensor m1 = ad::tanh_op(ad::mul_scalar(ad::matmul(e1, theta1), saturation));
  Tensor m2 = ad::tanh_op(ad::mul_scalar(ad::matmul(e2, theta2), saturation));
  Tensor diff = ad::sub(ad::matmul(m1, ad::transpose2d(m2)), ad::matmul(m2, ad::transpose2d(m1)));
  Tensor a = ad::relu(ad::tanh_op(ad::mul_scalar(diff, saturation)));

  // Top-k support mask, treated as a constant w.r.t. gradients: kept entries
  // pass through, dropped entries contribute nothing.
  Tensor mask = Tensor::zeros({R, R});
  std::vector<std::size_t> idx(R);
  for (std::size_t i = 0; i < R; ++i) {
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
      return a.data()[i * R + x] > a.data()[i * R + y];
    });
    for (std::size_t r = 0; r < topk; ++r) mask.data()[i * R + idx[r]] = 1.0;
  }
  return ad::mul(a, mask);
}

Tensor sym_normalize_ad(const Tensor& a) {
  if (a.ndim() != 2 || a.shape()[0] != a.shape()[1]) {
    throw ShapeError("sym_normalize: square matrix expected");
  }
  const std::size_t R = a.shape()[0];
  Tensor with_loops = ad::add(a, Tensor(ad::Shape{R, R}, [R]() {
                                std::vector<double> eye(R * R, 0.0);
                                for (std::size_t i = 0; i < R; ++i) eye[i * R + i] = 1.0;
                                return eye;
                              }()));
  Tensor deg = ad::sum_axis(with_loops, 1, true);          // [R,1]
  Tensor dinv_sqrt = ad::pow_scalar(deg, -0.5);            // degrees >= 1
  Tensor row_scaled = ad::mul(with_loops, dinv_sqrt);      // broadcast rows
  return ad::mul(row_scaled, ad::transpose2d(dinv_sqrt));  // broadcast cols
}

Tensor mixhop_propagate(const Tensor& h_in, const Tensor& adj_norm, double beta,
                        std::size_t depth, const std::vector<Tensor>& selectors,
                        const Tensor& ln_gamma, const Tensor& ln_beta) {
  if (selectors.size() != depth + 1) {
    throw ShapeError("mixhop: need depth+1 selector matrices");
  }
  Tensor h = h_in;
  Tensor out = ad::matmul(h, selectors[0]);
  for (std::size_t k = 1; k <= depth; ++k) {
    Tensor propagated = ad::node_mix(adj_norm, h);
    h = ad::add(ad::mul_scalar(h_in, beta), ad::mul_scalar(propagated, 1.0 - beta));
    out = ad::add(out, ad::matmul(h, selectors[k]));
  }
  return ad::add(out, layer_norm(h_in, ln_gamma, ln_beta));
}

std::size_t curriculum_horizon(std::size_t t, std::size_t t_max, std::size_t q) {
  if (q < 1) throw ConfigError("curriculum: horizon must be >= 1");
  if (t_max == 0 || t >= t_max) return q;
  const double frac = static_cast<double>(t) / static_cast<double>(t_max);
  const auto qt = static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(q), frac)));
  return std::clamp<std::size_t>(qt, 1, q);
}

std::vector<std::vector<std::size_t>> node_partition(std::size_t n_nodes, std::size_t m,
                                                     std::uint64_t seed) {
  if (m < 1 || m > n_nodes) throw ConfigError("node_partition: need 1 <= m <= R");
  std::vector<std::size_t> order(n_nodes);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> parts(m);
  const std::size_t base = n_nodes / m;
  const std::size_t rem = n_nodes % m;
  std::size_t pos = 0;
  for (std::size_t p = 0; p < m; ++p) {
    const std::size_t take = base + (p < rem ? 1 : 0);
    parts[p].assign(order.begin() + std::ptrdiff_t(pos), order.begin() + std::ptrdiff_t(pos + take));
    pos += take;
  }
  return parts;
}

BackboneModel::BackboneModel(BackboneConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init_params(seed);
}

void BackboneModel::init_params(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t R = cfg_.n_nodes, de = cfg_.d_embed, d = cfg_.d_hidden, F = cfg_.n_features;

  params_.add("graph.e1", Tensor::randn({R, de}, rng, 0.3));
  params_.add("graph.e2", Tensor::randn({R, de}, rng, 0.3));
  params_.add("graph.theta1", xavier({de, d}, de, d, rng));
  params_.add("graph.theta2", xavier({de, d}, de, d, rng));
  params_.add("embed.w", xavier({F, d}, F, d, rng));
  params_.add("embed.b", Tensor::zeros({d}));

  const auto widths = channel_split(d, cfg_.kernel_set);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "l" + std::to_string(l) + ".";
    for (std::size_t k = 0; k <= cfg_.mixhop_depth; ++k) {
      params_.add(pre + "mixhop.w" + std::to_string(k), xavier({d, d}, d, d, rng));
    }
    params_.add(pre + "ln.gamma", Tensor::full({d}, 1.0));
    params_.add(pre + "ln.beta", Tensor::zeros({d}));
    for (std::size_t s = 0; s < cfg_.kernel_set.size(); ++s) {
      const std::size_t ks = cfg_.kernel_set[s];
      const std::size_t width = widths[s];
      params_.add(pre + "tc.filter.s" + std::to_string(ks),
                  xavier({width, d, ks}, d * ks, width * ks, rng));
      params_.add(pre + "tc.gate.s" + std::to_string(ks),
                  xavier({width, d, ks}, d * ks, width * ks, rng));
    }
    params_.add(pre + "tc.filter.b", Tensor::zeros({d}));
    params_.add(pre + "tc.gate.b", Tensor::zeros({d}));
    params_.add(pre + "skip.w",
                xavier({cfg_.d_skip, d, cfg_.history}, d * cfg_.history, cfg_.d_skip, rng));
    params_.add(pre + "skip.b", Tensor::zeros({cfg_.d_skip}));
  }
  const std::size_t skip_total = cfg_.layers * cfg_.d_skip;
  const std::size_t out_dim = cfg_.horizon * F;
  params_.add("head.w", xavier({skip_total, out_dim}, skip_total, out_dim, rng));
  params_.add("head.b", Tensor::zeros({out_dim}));
}

Tensor BackboneModel::adjacency() {
  if (adj_cached_) return cached_adj_;
  Tensor a = learn_graph(params_.get("graph.e1"), params_.get("graph.e2"),
                         params_.get("graph.theta1"), params_.get("graph.theta2"),
                         cfg_.saturation, cfg_.effective_topk());
  return a;
}

Tensor dilated_inception(const Tensor& z, const std::vector<Tensor>& filter_kernels,
                         const std::vector<Tensor>& gate_kernels, const Tensor& filter_bias,
                         const Tensor& gate_bias, std::size_t dilation,
                         std::size_t stack_layers) {
  if (z.ndim() != 4) throw ShapeError("dilated_inception expects [B,R,T,d]");
  if (filter_kernels.empty() || filter_kernels.size() != gate_kernels.size()) {
    throw ShapeError("dilated_inception: kernel branch lists must be nonempty and aligned");
  }
  const std::size_t T = z.shape()[2];
  std::size_t max_kernel = 0;
  for (const auto& w : filter_kernels) max_kernel = std::max(max_kernel, w.shape()[2]);
  if (T < max_kernel) {
    throw ShapeError("sequence too short for dilated inception: length " + std::to_string(T) +
                     " < minimum " + std::to_string(max_kernel) + " (stack receptive field " +
                     std::to_string(ad::inception_receptive_field(max_kernel, stack_layers)) +
                     ")");
  }
  auto branch = [&](const std::vector<Tensor>& kernels) {
    std::vector<Tensor> parts;
    parts.reserve(kernels.size());
    for (const auto& w : kernels) parts.push_back(ad::causal_dilated_conv1d(z, w, dilation));
    return ad::concat(parts, 3);
  };
  Tensor filter = ad::add(branch(filter_kernels), filter_bias);
  Tensor gate = ad::add(branch(gate_kernels), gate_bias);
  return ad::mul(ad::tanh_op(filter), ad::sigmoid(gate));
}

Tensor BackboneModel::inception_glu(const Tensor& z, std::size_t layer) {
  const std::size_t dilation = std::size_t(1) << layer;
  const std::string pre = "l" + std::to_string(layer) + ".";
  std::vector<Tensor> filters, gates;
  for (std::size_t ks : cfg_.kernel_set) {
    filters.push_back(params_.get(pre + "tc.filter.s" + std::to_string(ks)));
    gates.push_back(params_.get(pre + "tc.gate.s" + std::to_string(ks)));
  }
  return dilated_inception(z, filters, gates, params_.get(pre + "tc.filter.b"),
                           params_.get(pre + "tc.gate.b"), dilation, cfg_.layers);
}

Tensor BackboneModel::forward(const Tensor& x) {
  if (x.ndim() != 4 || x.shape()[1] != cfg_.n_nodes || x.shape()[2] != cfg_.history ||
      x.shape()[3] != cfg_.n_features) {
    throw ShapeError("backbone forward: expected [B," + std::to_string(cfg_.n_nodes) + "," +
                     std::to_string(cfg_.history) + "," + std::to_string(cfg_.n_features) +
                     "], got " + ad::shape_str(x.shape()));
  }
  const std::size_t B = x.shape()[0];
  const std::size_t T = cfg_.history;

  Tensor adj_norm = adj_cached_ ? cached_adj_norm_ : sym_normalize_ad(adjacency());
  Tensor h = ad::add(ad::matmul(x, params_.get("embed.w")), params_.get("embed.b"));

  std::vector<Tensor> skips;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "l" + std::to_string(l) + ".";
    std::vector<Tensor> selectors;
    for (std::size_t k = 0; k <= cfg_.mixhop_depth; ++k) {
      selectors.push_back(params_.get(pre + "mixhop.w" + std::to_string(k)));
    }
    Tensor gc = mixhop_propagate(h, adj_norm, cfg_.retain_ratio, cfg_.mixhop_depth, selectors,
                                 params_.get(pre + "ln.gamma"), params_.get(pre + "ln.beta"));
    Tensor tc = inception_glu(gc, l);
    h = ad::add(tc, h);

    // Skip projection: causal conv whose kernel spans the whole window; the
    // last time step sees every input, compressing T to 1.
    Tensor full = ad::causal_dilated_conv1d(h, params_.get(pre + "skip.w"), 1);
    Tensor compressed = ad::slice(full, 2, T - 1, 1);
    skips.push_back(ad::add(compressed, params_.get(pre + "skip.b")));
  }

  Tensor skip_cat = ad::concat(skips, 3);  // [B, R, 1, L*d_skip]
  Tensor out = ad::add(ad::matmul(skip_cat, params_.get("head.w")), params_.get("head.b"));
  return ad::reshape(out, {B, cfg_.n_nodes, cfg_.horizon, cfg_.n_features});
}

Tensor BackboneModel::pretrain_loss(const Tensor& pred, const Tensor& target, std::size_t q_t) {
  if (pred.shape() != target.shape()) throw ShapeError("pretrain_loss: shape mismatch");
  const std::size_t q = std::clamp<std::size_t>(q_t, 1, cfg_.horizon);
  Tensor p = q == cfg_.horizon ? pred : ad::slice(pred, 2, 0, q);
  Tensor y = q == cfg_.horizon ? target : ad::slice(target, 2, 0, q);
  Tensor loss = ad::l1_loss(p, y);

  if (cfg_.lambda_l2 > 0.0) {
    std::vector<Tensor> flat;
    for (auto& e : params_.entries()) {
      if (!e.frozen) flat.push_back(ad::reshape(e.tensor, {e.tensor.size()}));
    }
    if (!flat.empty()) {
      loss = ad::add(loss, ad::mul_scalar(ad::l2_norm(ad::concat(flat, 0)), cfg_.lambda_l2));
    }
  }
  if (cfg_.mu_adj > 0.0 && !frozen_) {
    loss = ad::add(loss, ad::mul_scalar(ad::frobenius_norm(adjacency()), cfg_.mu_adj));
  }
  return loss;
}

void BackboneModel::freeze() {
  if (frozen_) return;
  // Latch the learned operator before disabling gradients: it is a pure
  // function of now-frozen parameters.
  cached_adj_ = adjacency().clone();
  cached_adj_.set_requires_grad(false);
  cached_adj_norm_ = sym_normalize_ad(cached_adj_).clone();
  cached_adj_norm_.set_requires_grad(false);
  adj_cached_ = true;
  params_.freeze_all();
  frozen_ = true;
}

BackboneModel BackboneModel::clone() const {
  BackboneModel copy;
  copy.cfg_ = cfg_;
  copy.params_ = params_.clone();
  copy.frozen_ = frozen_;
  copy.adj_cached_ = adj_cached_;
  if (adj_cached_) {
    copy.cached_adj_ = cached_adj_.clone();
    copy.cached_adj_.set_requires_grad(false);
    copy.cached_adj_norm_ = cached_adj_norm_.clone();
    copy.cached_adj_norm_.set_requires_grad(false);
  }
  return copy;
}

BackboneModel BackboneModel::reinitialized(std::uint64_t seed) const {
  return BackboneModel(cfg_, seed);
}

}  // namespace stprompt
