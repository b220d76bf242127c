#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "stprompt/common.hpp"

namespace stprompt {

// Small dense row-major matrix for the plain (non-differentiable) graph
// algebra. Desk-scale node counts keep dense storage cheap.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}
  double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
  static Mat identity(std::size_t n);
};

Mat matmul(const Mat& a, const Mat& b);

struct Edge {
  std::size_t src;
  std::size_t dst;
  double weight;  // kernel weight for adjacency, raw distance in edge lists
};

// Directed weighted sensor graph with degree bookkeeping.
// D_in[i] = sum_j A[i][j] (row sums), D_out[j] = sum_i A[i][j] (column sums).
class SensorGraph {
 public:
  SensorGraph() = default;
  SensorGraph(std::size_t n, Mat adjacency);

  std::size_t n() const { return n_; }
  const Mat& adjacency() const { return adj_; }
  const std::vector<double>& in_degree() const { return in_degree_; }
  const std::vector<double>& out_degree() const { return out_degree_; }
  std::vector<Edge> edges() const;

  // Nodes j with A[i][j] > 0.
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return neighbors_[i]; }

 private:
  std::size_t n_ = 0;
  Mat adj_;
  std::vector<double> in_degree_;
  std::vector<double> out_degree_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

// Row-normalized random walk operator S = D_in^{-1} A. Rows with zero degree
// stay all-zero (absorbing convention). Powers S^k are cached up to max_hops.
class DiffusionOperator {
 public:
  explicit DiffusionOperator(const SensorGraph& graph, std::size_t max_hops = 0);

  const Mat& matrix() const { return s_; }
  std::size_t n() const { return s_.rows; }

  // S^k, cached for k <= max_hops; k=0 is the identity.
  const Mat& hop(std::size_t k) const;

 private:
  Mat s_;
  std::size_t max_hops_;
  mutable std::vector<Mat> cache_;  // cache_[k] = S^k
};

// A_ij = exp(-d_ij^2 / sigma2) for listed pairs, zero elsewhere.
SensorGraph kernel_adjacency(std::size_t n, const std::vector<Edge>& distances,
                             double sigma2 = 25.0);

DiffusionOperator random_walk(const SensorGraph& graph, std::size_t max_hops = 0);

// sum_k alphas[k] * S^k * X via iterated products; X is R x F.
Mat poly_filter(const DiffusionOperator& op, const std::vector<double>& alphas, const Mat& x);

// D^{-1/2} (A + I) D^{-1/2} with D the degree of A + I.
Mat sym_normalize(const Mat& a);

// Keeps the k largest entries per row (ties to the lower column index).
Mat topk_sparsify(const Mat& a, std::size_t k);

// Edge list file: `src,dst,distance` with an optional header row. Node ids
// are dense indices unless a name map is supplied by the caller.
std::vector<Edge> load_edge_list(const std::string& path, std::size_t n_nodes);
void save_adjacency(const SensorGraph& graph, const std::string& path);

}  // namespace stprompt
