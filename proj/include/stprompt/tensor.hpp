#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stprompt/common.hpp"

namespace stprompt::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until backward touches it
};

class Tape;

// Value-semantics handle over a shared buffer. Copying a Tensor aliases the
// storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Records backward closures in execution order; replays them in reverse.
// One tape belongs to one training context at a time. Activation is
// thread-local so independent contexts can run on separate threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  static Tape* current();

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss)=1 and visits every node exactly once in reverse
  // recording order (a valid reverse topological order). Throws on a second
  // call without re-recording.
  void backward(const Tensor& loss);

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

// --- core ops -------------------------------------------------------------
// Every op validates shapes, checks outputs for NaN/Inf, and registers a
// backward rule on the active tape when an input requires grad.

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor sqrt_op(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor abs_op(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double p);

// Inverted dropout: train mode scales kept entries by 1/(1-rate); eval mode
// is the identity. Deterministic under (seed).
Tensor dropout(const Tensor& a, double rate, bool train_mode, std::uint64_t seed);

// a: [..., m, k] (leading dims batched), b: [k, n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);

// adj: [M, N], h: [B, N, ...]; mixes axis 1: out[b,i,...] = sum_j adj[i,j] h[b,j,...].
// Graph propagation uses M = N = R; the prompt's time-axis map uses M != N.
Tensor node_mix(const Tensor& adj, const Tensor& h);

// x: [..., T, C_in], w: [C_out, C_in, K]. Left zero-padded so output keeps
// length T: out[.., t, co] = sum_{k,ci} w[co,ci,k] * x[.., t - k*dilation, ci].
Tensor causal_dilated_conv1d(const Tensor& x, const Tensor& w, std::size_t dilation);

// x: [..., T, C], w: [K]; one kernel shared by every channel, no padding:
// out[.., t, c] = sum_k w[k] * x[.., t + k, c], output length T - K + 1.
Tensor valid_conv1d_shared(const Tensor& x, const Tensor& w);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim);
Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len);
Tensor reshape(const Tensor& a, Shape shape);

Tensor l1_loss(const Tensor& pred, const Tensor& target);
Tensor l2_norm(const Tensor& a);
Tensor frobenius_norm(const Tensor& a);

// Per-channel normalization over all leading dims; channels = last axis.
// Holds learnable gain/bias plus running statistics for eval mode.
class BatchNorm1d {
 public:
  BatchNorm1d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x, bool train_mode);

  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }
  const std::vector<double>& running_mean() const { return running_mean_; }
  const std::vector<double>& running_var() const { return running_var_; }

 private:
  Tensor gamma_;
  Tensor beta_;
  std::vector<double> running_mean_;
  std::vector<double> running_var_;
  double momentum_;
  double eps_;
};

// Kink tracing: while a trace is active, relu/abs record activation signs so
// a finite-difference check can detect when a probe stepped across a kink.
class KinkTrace {
 public:
  KinkTrace();
  ~KinkTrace();
  KinkTrace(const KinkTrace&) = delete;
  KinkTrace& operator=(const KinkTrace&) = delete;
  const std::vector<std::uint8_t>& signs() const { return signs_; }

 private:
  std::vector<std::uint8_t> signs_;
  std::vector<std::uint8_t>* prev_;
};

}  // namespace stprompt::ad
