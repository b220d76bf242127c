#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stprompt/params.hpp"
#include "stprompt/tensor.hpp"

namespace stprompt {

struct BackboneConfig {
  std::size_t n_nodes = 0;                       // R
  std::size_t n_features = 1;                    // F
  std::size_t d_embed = 16;                      // node embedding width
  std::size_t d_hidden = 32;
  std::size_t d_skip = 32;
  std::size_t layers = 3;                        // interleaved GC/TC blocks
  std::size_t mixhop_depth = 2;                  // K
  double retain_ratio = 0.05;                    // beta
  std::vector<std::size_t> kernel_set = {2, 3, 6, 7};
  double saturation = 3.0;                       // alpha
  std::size_t topk = 20;                         // clamped to R
  double lambda_l2 = 1e-4;
  double mu_adj = 1e-4;
  std::size_t horizon = 12;                      // Q
  std::size_t history = 12;                      // L_in

  void validate() const;
  std::size_t effective_topk() const { return std::min(topk, n_nodes); }

  // Plain-text key=value round trip (CLI config snapshots).
  std::string serialize() const;
  static BackboneConfig parse(const std::string& text);
};

// Learned directed adjacency from node embeddings. The antisymmetric
// difference guarantees min(A_ij, A_ji) = 0 before sparsification.
ad::Tensor learn_graph(const ad::Tensor& e1, const ad::Tensor& e2, const ad::Tensor& theta1,
                       const ad::Tensor& theta2, double saturation, std::size_t topk);

// Differentiable D^{-1/2} (A + I) D^{-1/2}.
ad::Tensor sym_normalize_ad(const ad::Tensor& a);

// H^(0) = H_in, H^(k) = beta H_in + (1-beta) A~ H^(k-1),
// out = sum_k H^(k) W^(k) + LayerNorm(H_in).
ad::Tensor mixhop_propagate(const ad::Tensor& h_in, const ad::Tensor& adj_norm, double beta,
                            std::size_t depth, const std::vector<ad::Tensor>& selectors,
                            const ad::Tensor& ln_gamma, const ad::Tensor& ln_beta);

// Multi-kernel causal temporal layer with a GLU gate:
// tanh(concat_s conv_s(z) + bf) * sigmoid(concat_s conv'_s(z) + bg).
// z: [B, R, T, d]; each kernel pair contributes a channel slice of the
// concat. Errors when T cannot fit the largest kernel; the message reports
// the receptive field of a stack_layers-deep stack.
ad::Tensor dilated_inception(const ad::Tensor& z, const std::vector<ad::Tensor>& filter_kernels,
                             const std::vector<ad::Tensor>& gate_kernels,
                             const ad::Tensor& filter_bias, const ad::Tensor& gate_bias,
                             std::size_t dilation, std::size_t stack_layers);

// floor(Q^(t/T_max)) clamped to [1, Q].
std::size_t curriculum_horizon(std::size_t t, std::size_t t_max, std::size_t q);

// m disjoint node subsets with sizes differing by at most one.
std::vector<std::vector<std::size_t>> node_partition(std::size_t n_nodes, std::size_t m,
                                                     std::uint64_t seed);

class BackboneModel {
 public:
  BackboneModel(BackboneConfig cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // X: [B, R, L_in, F] -> [B, R, Q, F].
  ad::Tensor forward(const ad::Tensor& x);

  // Learned adjacency after top-k sparsification (pre-normalization); the
  // frozen model serves a cached constant instead of recomputing.
  ad::Tensor adjacency();

  // MAE over the first q_t horizon steps plus lambda * ||theta||_2 and
  // mu * ||A||_F.
  ad::Tensor pretrain_loss(const ad::Tensor& pred, const ad::Tensor& target, std::size_t q_t);

  void freeze();
  bool frozen() const { return frozen_; }
  // Unfreezing a frozen model is not supported; comparison arms must clone
  // the model before freeze().
  void unfreeze() { throw ContractError("unfreezing a frozen backbone is not provided"); }

  BackboneModel clone() const;
  // Same architecture, fresh random parameters.
  BackboneModel reinitialized(std::uint64_t seed) const;

 private:
  BackboneModel() = default;
  void init_params(std::uint64_t seed);
  ad::Tensor inception_glu(const ad::Tensor& z, std::size_t layer);

  BackboneConfig cfg_;
  ParamStore params_;
  bool frozen_ = false;
  ad::Tensor cached_adj_;        // set at freeze()
  ad::Tensor cached_adj_norm_;
  bool adj_cached_ = false;
};

}  // namespace stprompt
