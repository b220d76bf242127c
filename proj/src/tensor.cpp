#include "stprompt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stprompt::ad {

namespace {

thread_local Tape* g_current_tape = nullptr;
thread_local std::vector<std::uint8_t>* g_kink_trace = nullptr;

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value produced by ") + op);
  }
}

bool want_record(bool any_requires) { return any_requires && g_current_tape != nullptr; }

std::vector<double>& ensure_grad(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
  return t.grad;
}

// Aligns two shapes numpy-style; strides are zero along broadcast dims.
struct BcastPlan {
  Shape out_shape;
  std::vector<std::size_t> out_strides;
  std::vector<std::size_t> a_strides;
  std::vector<std::size_t> b_strides;
  bool trivial = false;  // shapes equal, no index math needed
};

BcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  BcastPlan plan;
  if (a == b) {
    plan.out_shape = a;
    plan.trivial = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape ap(rank, 1), bp(rank, 1);
  std::copy(a.begin(), a.end(), ap.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), bp.begin() + (rank - b.size()));
  plan.out_shape.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (ap[i] == bp[i]) {
      plan.out_shape[i] = ap[i];
    } else if (ap[i] == 1) {
      plan.out_shape[i] = bp[i];
    } else if (bp[i] == 1) {
      plan.out_shape[i] = ap[i];
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
  }
  plan.out_strides = strides_of(plan.out_shape);
  auto as = strides_of(ap);
  auto bs = strides_of(bp);
  plan.a_strides.resize(rank);
  plan.b_strides.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    plan.a_strides[i] = (ap[i] == 1 && plan.out_shape[i] != 1) ? 0 : as[i];
    plan.b_strides[i] = (bp[i] == 1 && plan.out_shape[i] != 1) ? 0 : bs[i];
  }
  return plan;
}

template <typename Fwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd,
                 // accumulate into da/db given upstream g and both operand values
                 const std::function<double(double g, double av, double bv)>& dfda,
                 const std::function<double(double g, double av, double bv)>& dfdb) {
  BcastPlan plan = broadcast_plan(a.shape(), b.shape(), name);
  const auto& ad = a.data();
  const auto& bd = b.data();
  Tensor out = Tensor::zeros(plan.out_shape);
  auto& od = out.data();

  if (plan.trivial) {
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = fwd(ad[i], bd[i]);
  } else {
    const std::size_t rank = plan.out_shape.size();
    for (std::size_t i = 0; i < od.size(); ++i) {
      std::size_t rem = i, ia = 0, ib = 0;
      for (std::size_t d = 0; d < rank; ++d) {
        const std::size_t idx = rem / plan.out_strides[d];
        rem %= plan.out_strides[d];
        ia += idx * plan.a_strides[d];
        ib += idx * plan.b_strides[d];
      }
      od[i] = fwd(ad[ia], bd[ib]);
    }
  }
  check_finite(od, name);

  const bool rec = want_record(a.requires_grad() || b.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    g_current_tape->record([ai, bi, oi, plan, dfda, dfdb, need_a, need_b]() {
      if (oi->grad.empty()) return;
      auto* ga = need_a ? &ensure_grad(*ai) : nullptr;
      auto* gb = need_b ? &ensure_grad(*bi) : nullptr;
      const auto& g = oi->grad;
      if (plan.trivial) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (ga) (*ga)[i] += dfda(g[i], ai->data[i], bi->data[i]);
          if (gb) (*gb)[i] += dfdb(g[i], ai->data[i], bi->data[i]);
        }
      } else {
        const std::size_t rank = plan.out_shape.size();
        for (std::size_t i = 0; i < g.size(); ++i) {
          std::size_t rem = i, ia = 0, ib = 0;
          for (std::size_t d = 0; d < rank; ++d) {
            const std::size_t idx = rem / plan.out_strides[d];
            rem %= plan.out_strides[d];
            ia += idx * plan.a_strides[d];
            ib += idx * plan.b_strides[d];
          }
          if (ga) (*ga)[ia] += dfda(g[i], ai->data[ia], bi->data[ib]);
          if (gb) (*gb)[ib] += dfdb(g[i], ai->data[ia], bi->data[ib]);
        }
      }
    });
  }
  return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* name, Fwd fwd, Bwd dydx) {
  Tensor out = Tensor::zeros(a.shape());
  const auto& ad = a.data();
  auto& od = out.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] = fwd(ad[i]);
  check_finite(od, name);
  const bool rec = want_record(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto ai = a.impl(), oi = out.impl();
    g_current_tape->record([ai, oi, dydx]() {
      if (oi->grad.empty()) return;
      auto& ga = ensure_grad(*ai);
      for (std::size_t i = 0; i < oi->grad.size(); ++i) {
        ga[i] += oi->grad[i] * dydx(ai->data[i], oi->data[i]);
      }
    });
  }
  return out;
}

}  // namespace

std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data) : impl_(std::make_shared<TensorImpl>()) {
  if (shape_size(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::zeros(Shape shape) {
  Tensor t;
  t.impl_->data.assign(shape_size(shape), 0.0);
  t.impl_->shape = std::move(shape);
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t = zeros(std::move(shape));
  for (auto& x : t.impl_->data) x = rng.normal() * stddev;
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = zeros(std::move(shape));
  for (auto& x : t.impl_->data) x = rng.uniform(lo, hi);
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of size " + std::to_string(size()));
  return impl_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty()) throw ContractError("gradient not populated");
  return impl_->grad;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

Tape::Scope::Scope(Tape& tape) : prev_(g_current_tape) { g_current_tape = &tape; }
Tape::Scope::~Scope() { g_current_tape = prev_; }
Tape* Tape::current() { return g_current_tape; }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ContractError("backward called twice without re-recording");
  if (loss.size() != 1) throw ShapeError("backward requires a scalar loss");
  consumed_ = true;
  loss.impl()->grad.assign(1, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      a, "mul_scalar", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
  if (g_kink_trace != nullptr) {
    for (double x : a.data()) g_kink_trace->push_back(x >= 0.0 ? 1 : 0);
  }
  return unary_op(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh_op(const Tensor& a) {
  return unary_op(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor sqrt_op(const Tensor& a) {
  return unary_op(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor exp_op(const Tensor& a) {
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor abs_op(const Tensor& a) {
  if (g_kink_trace != nullptr) {
    for (double x : a.data()) g_kink_trace->push_back(x >= 0.0 ? 1 : 0);
  }
  return unary_op(
      a, "abs", [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor pow_scalar(const Tensor& a, double p) {
  return unary_op(
      a, "pow_scalar", [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Tensor dropout(const Tensor& a, double rate, bool train_mode, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0,1)");
  if (!train_mode || rate == 0.0) return a;
  Rng rng(seed);
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(a.size());
  for (auto& m : *mask) m = (rng.uniform() >= rate) ? 1.0 / keep : 0.0;

  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * (*mask)[i];
  const bool rec = want_record(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto ai = a.impl(), oi = out.impl();
    g_current_tape->record([ai, oi, mask]() {
      if (oi->grad.empty()) return;
      auto& ga = ensure_grad(*ai);
      for (std::size_t i = 0; i < oi->grad.size(); ++i) ga[i] += oi->grad[i] * (*mask)[i];
    });
  }
  return out;
}

// --- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() != 2) {
    throw ShapeError("matmul expects a [...,m,k] and b [k,n], got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::size_t k = a.shape()[a.ndim() - 1];
  const std::size_t m = a.shape()[a.ndim() - 2];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul inner dims differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t n = b.shape()[1];
  const std::size_t batch = a.size() / (m * k);

  Shape out_shape = a.shape();
  out_shape.back() = n;
  Tensor out = Tensor::zeros(out_shape);

  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  for (std::size_t p = 0; p < batch; ++p) {
    const double* A = ad.data() + p * m * k;
    double* C = od.data() + p * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = A[i * k + kk];
        if (av == 0.0) continue;
        const double* Bk = bd.data() + kk * n;
        double* Ci = C + i * n;
        for (std::size_t j = 0; j < n; ++j) Ci[j] += av * Bk[j];
      }
    }
  }
  check_finite(od, "matmul");

  const bool rec = want_record(a.requires_grad() || b.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    const bool need_a = a.requires_grad(), need_b = b.requires_grad();
    g_current_tape->record([ai, bi, oi, batch, m, k, n, need_a, need_b]() {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      if (need_a) {
        auto& ga = ensure_grad(*ai);
        for (std::size_t p = 0; p < batch; ++p) {
          const double* G = g.data() + p * m * n;
          double* dA = ga.data() + p * m * k;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              const double gv = G[i * n + j];
              if (gv == 0.0) continue;
              for (std::size_t kk = 0; kk < k; ++kk) {
                dA[i * k + kk] += gv * bi->data[kk * n + j];
              }
            }
          }
        }
      }
      if (need_b) {
        auto& gb = ensure_grad(*bi);
        for (std::size_t p = 0; p < batch; ++p) {
          const double* G = g.data() + p * m * n;
          const double* A = ai->data.data() + p * m * k;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) {
              const double av = A[i * k + kk];
              if (av == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) {
                gb[kk * n + j] += av * G[i * n + j];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor transpose2d(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("transpose2d expects a matrix");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = a.data()[i * n + j];
  }
  const bool rec = want_record(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto ai = a.impl(), oi = out.impl();
    g_current_tape->record([ai, oi, m, n]() {
      if (oi->grad.empty()) return;
      auto& ga = ensure_grad(*ai);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += oi->grad[j * m + i];
      }
    });
  }
  return out;
}

Tensor node_mix(const Tensor& adj, const Tensor& h) {
  if (adj.ndim() != 2) throw ShapeError("node_mix expects a 2-D mixing matrix");
  if (h.ndim() < 2) throw ShapeError("node_mix expects h with shape [B,N,...]");
  const std::size_t M = adj.shape()[0];
  const std::size_t N = adj.shape()[1];
  if (h.shape()[1] != N) {
    throw ShapeError("node_mix: axis 1 size " + std::to_string(h.shape()[1]) +
                     " does not match mixing matrix columns " + std::to_string(N));
  }
  const std::size_t B = h.shape()[0];
  const std::size_t TR = h.size() / (B * N);

  Shape out_shape = h.shape();
  out_shape[1] = M;
  Tensor out = Tensor::zeros(out_shape);
  const auto& md = adj.data();
  const auto& hd = h.data();
  auto& od = out.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < M; ++i) {
      double* dst = od.data() + (b * M + i) * TR;
      for (std::size_t j = 0; j < N; ++j) {
        const double w = md[i * N + j];
        if (w == 0.0) continue;
        const double* src = hd.data() + (b * N + j) * TR;
        for (std::size_t t = 0; t < TR; ++t) dst[t] += w * src[t];
      }
    }
  }
  check_finite(od, "node_mix");

  const bool rec = want_record(adj.requires_grad() || h.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto mi = adj.impl(), hi = h.impl(), oi = out.impl();
    const bool need_m = adj.requires_grad(), need_h = h.requires_grad();
    g_current_tape->record([mi, hi, oi, B, M, N, TR, need_m, need_h]() {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      if (need_m) {
        auto& gm = ensure_grad(*mi);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t i = 0; i < M; ++i) {
            const double* gi = g.data() + (b * M + i) * TR;
            for (std::size_t j = 0; j < N; ++j) {
              const double* hj = hi->data.data() + (b * N + j) * TR;
              double acc = 0.0;
              for (std::size_t t = 0; t < TR; ++t) acc += gi[t] * hj[t];
              gm[i * N + j] += acc;
            }
          }
        }
      }
      if (need_h) {
        auto& gh = ensure_grad(*hi);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t i = 0; i < M; ++i) {
            const double* gi = g.data() + (b * M + i) * TR;
            for (std::size_t j = 0; j < N; ++j) {
              const double w = mi->data[i * N + j];
              if (w == 0.0) continue;
              double* dh = gh.data() + (b * N + j) * TR;
              for (std::size_t t = 0; t < TR; ++t) dh[t] += w * gi[t];
            }
          }
        }
      }
    });
  }
  return out;
}

// --- convolutions -----------------------------------------------------------

Tensor causal_dilated_conv1d(const Tensor& x, const Tensor& w, std::size_t dilation) {
  if (x.ndim() < 2) throw ShapeError("conv input must be [..., T, C_in]");
  if (w.ndim() != 3) throw ShapeError("conv weight must be [C_out, C_in, K]");
  if (dilation == 0) throw ConfigError("dilation must be >= 1");
  const std::size_t cin = x.shape()[x.ndim() - 1];
  const std::size_t T = x.shape()[x.ndim() - 2];
  if (w.shape()[1] != cin) {
    throw ShapeError("conv channel mismatch: input " + std::to_string(cin) + ", weight " +
                     std::to_string(w.shape()[1]));
  }
  const std::size_t cout = w.shape()[0];
  const std::size_t K = w.shape()[2];
  const std::size_t N = x.size() / (T * cin);

  Shape out_shape = x.shape();
  out_shape.back() = cout;
  Tensor out = Tensor::zeros(out_shape);
  const auto& xd = x.data();
  const auto& wd = w.data();
  auto& od = out.data();
  for (std::size_t n = 0; n < N; ++n) {
    const double* X = xd.data() + n * T * cin;
    double* O = od.data() + n * T * cout;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t back = k * dilation;
        if (back > t) break;  // left zero padding
        const double* xs = X + (t - back) * cin;
        for (std::size_t co = 0; co < cout; ++co) {
          const double* wrow = wd.data() + (co * cin) * K;
          double acc = 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci) acc += wrow[ci * K + k] * xs[ci];
          O[t * cout + co] += acc;
        }
      }
    }
  }
  check_finite(od, "causal_dilated_conv1d");

  const bool rec = want_record(x.requires_grad() || w.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    const bool need_x = x.requires_grad(), need_w = w.requires_grad();
    g_current_tape->record([xi, wi, oi, N, T, cin, cout, K, dilation, need_x, need_w]() {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      auto* gx = need_x ? &ensure_grad(*xi) : nullptr;
      auto* gw = need_w ? &ensure_grad(*wi) : nullptr;
      for (std::size_t n = 0; n < N; ++n) {
        const double* G = g.data() + n * T * cout;
        const double* X = xi->data.data() + n * T * cin;
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t k = 0; k < K; ++k) {
            const std::size_t back = k * dilation;
            if (back > t) break;
            const std::size_t s = t - back;
            for (std::size_t co = 0; co < cout; ++co) {
              const double gv = G[t * cout + co];
              if (gv == 0.0) continue;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                const std::size_t widx = (co * cin + ci) * K + k;
                if (gx) (*gx)[n * T * cin + s * cin + ci] += gv * wi->data[widx];
                if (gw) (*gw)[widx] += gv * X[s * cin + ci];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor valid_conv1d_shared(const Tensor& x, const Tensor& w) {
  if (x.ndim() < 2) throw ShapeError("conv input must be [..., T, C]");
  if (w.ndim() != 1) throw ShapeError("shared conv kernel must be 1-D");
  const std::size_t C = x.shape()[x.ndim() - 1];
  const std::size_t T = x.shape()[x.ndim() - 2];
  const std::size_t K = w.shape()[0];
  if (K > T) {
    throw ShapeError("valid conv kernel " + std::to_string(K) + " exceeds length " +
                     std::to_string(T));
  }
  const std::size_t To = T - K + 1;
  const std::size_t N = x.size() / (T * C);

  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = To;
  Tensor out = Tensor::zeros(out_shape);
  const auto& xd = x.data();
  const auto& wd = w.data();
  auto& od = out.data();
  for (std::size_t n = 0; n < N; ++n) {
    const double* X = xd.data() + n * T * C;
    double* O = od.data() + n * To * C;
    for (std::size_t t = 0; t < To; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        const double wv = wd[k];
        const double* xs = X + (t + k) * C;
        for (std::size_t c = 0; c < C; ++c) O[t * C + c] += wv * xs[c];
      }
    }
  }
  check_finite(od, "valid_conv1d_shared");

  const bool rec = want_record(x.requires_grad() || w.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto xi = x.impl(), wi = w.impl(), oi = out.impl();
    const bool need_x = x.requires_grad(), need_w = w.requires_grad();
    g_current_tape->record([xi, wi, oi, N, T, To, C, K, need_x, need_w]() {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      auto* gx = need_x ? &ensure_grad(*xi) : nullptr;
      auto* gw = need_w ? &ensure_grad(*wi) : nullptr;
      for (std::size_t n = 0; n < N; ++n) {
        const double* G = g.data() + n * To * C;
        const double* X = xi->data.data() + n * T * C;
        for (std::size_t t = 0; t < To; ++t) {
          for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t c = 0; c < C; ++c) {
              const double gv = G[t * C + c];
              if (gv == 0.0) continue;
              if (gx) (*gx)[n * T * C + (t + k) * C + c] += gv * wi->data[k];
              if (gw) (*gw)[k] += gv * X[(t + k) * C + c];
            }
          }
        }
      }
    });
  }
  return out;
}

// --- reductions & shape ops -------------------------------------------------

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  Tensor out = Tensor::scalar(acc);
  check_finite(out.data(), "sum");
  const bool rec = want_record(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto ai = a.impl(), oi = out.impl();
    g_current_tape->record([ai, oi]() {
      if (oi->grad.empty()) return;
      auto& ga = ensure_grad(*ai);
      for (auto& g : ga) g += oi->grad[0];
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  if (axis >= a.ndim()) throw ShapeError("sum_axis: axis out of range");
  const std::size_t L = a.shape()[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (std::size_t i = axis + 1; i < a.ndim(); ++i) inner *= a.shape()[i];

  Shape out_shape;
  for (std::size_t i = 0; i < a.ndim(); ++i) {
    if (i == axis) {
      if (keepdim) out_shape.push_back(1);
    } else {
      out_shape.push_back(a.shape()[i]);
    }
  }
  Tensor out = Tensor::zeros(out_shape);
  const auto& ad = a.data();
  auto& od = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < L; ++l) {
      const double* src = ad.data() + (o * L + l) * inner;
      double* dst = od.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  check_finite(od, "sum_axis");
  const bool rec = want_record(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto ai = a.impl(), oi = out.impl();
    g_current_tape->record([ai, oi, outer, L, inner]() {
      if (oi->grad.empty()) return;
      auto& ga = ensure_grad(*ai);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t l = 0; l < L; ++l) {
          double* dst = ga.data() + (o * L + l) * inner;
          const double* src = oi->grad.data() + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  const double n = static_cast<double>(a.shape()[axis]);
  return mul_scalar(sum_axis(a, axis, keepdim), 1.0 / n);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  std::size_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.ndim() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i != axis && p.shape()[i] != ref[i]) {
        throw ShapeError("concat: shape mismatch at dim " + std::to_string(i));
      }
    }
    axis_total += p.shape()[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = axis_total;
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];

  Tensor out = Tensor::zeros(out_shape);
  auto& od = out.data();
  std::size_t offset = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    const auto& pd = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(pd.begin() + o * len * inner, pd.begin() + (o + 1) * len * inner,
                od.begin() + (o * axis_total + offset) * inner);
    }
    offset += len;
    any_grad = any_grad || p.requires_grad();
  }
  const bool rec = want_record(any_grad);
  out.set_requires_grad(rec);
  if (rec) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<std::size_t> lens;
    std::vector<bool> needs;
    for (const auto& p : parts) {
      impls.push_back(p.impl());
      lens.push_back(p.shape()[axis]);
      needs.push_back(p.requires_grad());
    }
    auto oi = out.impl();
    g_current_tape->record([impls, lens, needs, oi, outer, inner, axis_total]() {
      if (oi->grad.empty()) return;
      std::size_t offset = 0;
      for (std::size_t pi = 0; pi < impls.size(); ++pi) {
        const std::size_t len = lens[pi];
        if (needs[pi]) {
          auto& ga = ensure_grad(*impls[pi]);
          for (std::size_t o = 0; o < outer; ++o) {
            const double* src = oi->grad.data() + (o * axis_total + offset) * inner;
            double* dst = ga.data() + o * len * inner;
            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
          }
        }
        offset += len;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= a.ndim()) throw ShapeError("slice: axis out of range");
  if (start + len > a.shape()[axis]) throw ShapeError("slice: range out of bounds");
  const std::size_t L = a.shape()[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (std::size_t i = axis + 1; i < a.ndim(); ++i) inner *= a.shape()[i];

  Shape out_shape = a.shape();
  out_shape[axis] = len;
  Tensor out = Tensor::zeros(out_shape);
  const auto& ad = a.data();
  auto& od = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(ad.begin() + (o * L + start) * inner, ad.begin() + (o * L + start + len) * inner,
              od.begin() + o * len * inner);
  }
  const bool rec = want_record(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto ai = a.impl(), oi = out.impl();
    g_current_tape->record([ai, oi, outer, inner, L, start, len]() {
      if (oi->grad.empty()) return;
      auto& ga = ensure_grad(*ai);
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = oi->grad.data() + o * len * inner;
        double* dst = ga.data() + (o * L + start) * inner;
        for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: size mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(shape, a.data());
  const bool rec = want_record(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto ai = a.impl(), oi = out.impl();
    g_current_tape->record([ai, oi]() {
      if (oi->grad.empty()) return;
      auto& ga = ensure_grad(*ai);
      for (std::size_t i = 0; i < oi->grad.size(); ++i) ga[i] += oi->grad[i];
    });
  }
  return out;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l1_loss shape mismatch: " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  return mean_all(abs_op(sub(pred, target)));
}

Tensor l2_norm(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.data()) acc += x * x;
  const double norm = std::sqrt(acc);
  Tensor out = Tensor::scalar(norm);
  check_finite(out.data(), "l2_norm");
  const bool rec = want_record(a.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto ai = a.impl(), oi = out.impl();
    g_current_tape->record([ai, oi, norm]() {
      if (oi->grad.empty() || norm == 0.0) return;  // subgradient 0 at the origin
      auto& ga = ensure_grad(*ai);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[0] * ai->data[i] / norm;
    });
  }
  return out;
}

Tensor frobenius_norm(const Tensor& a) { return l2_norm(a); }

// --- batch norm ---------------------------------------------------------------

BatchNorm1d::BatchNorm1d(std::size_t channels, double momentum, double eps)
    : gamma_(Tensor::full({channels}, 1.0)),
      beta_(Tensor::zeros({channels})),
      running_mean_(channels, 0.0),
      running_var_(channels, 1.0),
      momentum_(momentum),
      eps_(eps) {
  gamma_.set_requires_grad(true);
  beta_.set_requires_grad(true);
}

Tensor BatchNorm1d::forward(const Tensor& x, bool train_mode) {
  const std::size_t C = gamma_.size();
  if (x.ndim() < 1 || x.shape().back() != C) {
    throw ShapeError("batch_norm: last axis must have " + std::to_string(C) + " channels");
  }
  const std::size_t N = x.size() / C;
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (train_mode) {
    if (N < 2) throw ShapeError("batch_norm train mode needs >= 2 samples per channel");
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t c = 0; c < C; ++c) mean[c] += x.data()[i * C + c];
    }
    for (auto& m : mean) m /= static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        const double d = x.data()[i * C + c] - mean[c];
        var[c] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<double>(N);
    for (std::size_t c = 0; c < C; ++c) {
      running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean[c];
      running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var[c];
    }
  } else {
    mean = running_mean_;
    var = running_var_;
  }

  auto sigma = std::make_shared<std::vector<double>>(C);
  for (std::size_t c = 0; c < C; ++c) (*sigma)[c] = std::sqrt(var[c] + eps_);

  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      const double xhat = (x.data()[i * C + c] - mean[c]) / (*sigma)[c];
      out.data()[i * C + c] = gamma_.data()[c] * xhat + beta_.data()[c];
    }
  }
  check_finite(out.data(), "batch_norm");

  const bool rec = want_record(x.requires_grad() || gamma_.requires_grad());
  out.set_requires_grad(rec);
  if (rec) {
    auto xi = x.impl(), gi = gamma_.impl(), bi = beta_.impl(), oi = out.impl();
    auto mu = std::make_shared<std::vector<double>>(std::move(mean));
    const bool need_x = x.requires_grad();
    g_current_tape->record([xi, gi, bi, oi, mu, sigma, N, C, train_mode, need_x]() {
      if (oi->grad.empty()) return;
      auto& ggamma = ensure_grad(*gi);
      auto& gbeta = ensure_grad(*bi);
      std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t c = 0; c < C; ++c) {
          const double g = oi->grad[i * C + c];
          const double xhat = (xi->data[i * C + c] - (*mu)[c]) / (*sigma)[c];
          sum_g[c] += g;
          sum_gx[c] += g * xhat;
        }
      }
      for (std::size_t c = 0; c < C; ++c) {
        ggamma[c] += sum_gx[c];
        gbeta[c] += sum_g[c];
      }
      if (!need_x) return;
      auto& gx = ensure_grad(*xi);
      const double invN = 1.0 / static_cast<double>(N);
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t c = 0; c < C; ++c) {
          const double g = oi->grad[i * C + c];
          const double scale = gi->data[c] / (*sigma)[c];
          if (train_mode) {
            const double xhat = (xi->data[i * C + c] - (*mu)[c]) / (*sigma)[c];
            gx[i * C + c] += scale * (g - sum_g[c] * invN - xhat * sum_gx[c] * invN);
          } else {
            gx[i * C + c] += scale * g;
          }
        }
      }
    });
  }
  return out;
}

KinkTrace::KinkTrace() : prev_(g_kink_trace) { g_kink_trace = &signs_; }
KinkTrace::~KinkTrace() { g_kink_trace = prev_; }

}  // namespace stprompt::ad
