#include "stprompt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace stprompt {

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) throw ShapeError("matrix product dimension mismatch");
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double av = a.at(i, k);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) c.at(i, j) += av * b.at(k, j);
    }
  }
  return c;
}

SensorGraph::SensorGraph(std::size_t n, Mat adjacency) : n_(n), adj_(std::move(adjacency)) {
  if (adj_.rows != n_ || adj_.cols != n_) throw ShapeError("adjacency must be n x n");
  in_degree_.assign(n_, 0.0);
  out_degree_.assign(n_, 0.0);
  neighbors_.assign(n_, {});
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = 0; j < n_; ++j) {
      const double w = adj_.at(i, j);
      if (w < 0.0) throw DataError("negative edge weight");
      in_degree_[i] += w;
      out_degree_[j] += w;
      if (w > 0.0) neighbors_[i].push_back(j);
    }
  }
}

std::vector<Edge> SensorGraph::edges() const {
  std::vector<Edge> out;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j : neighbors_[i]) out.push_back({i, j, adj_.at(i, j)});
  }
  return out;
}

DiffusionOperator::DiffusionOperator(const SensorGraph& graph, std::size_t max_hops)
    : s_(graph.n(), graph.n()), max_hops_(max_hops) {
  const auto& a = graph.adjacency();
  for (std::size_t i = 0; i < graph.n(); ++i) {
    const double deg = graph.in_degree()[i];
    if (deg == 0.0) continue;  // isolated node keeps an all-zero row
    for (std::size_t j = 0; j < graph.n(); ++j) s_.at(i, j) = a.at(i, j) / deg;
  }
  cache_.push_back(Mat::identity(graph.n()));
}

const Mat& DiffusionOperator::hop(std::size_t k) const {
  if (k > max_hops_) throw ConfigError("hop " + std::to_string(k) + " beyond cache bound");
  while (cache_.size() <= k) cache_.push_back(matmul(cache_.back(), s_));
  return cache_[k];
}

SensorGraph kernel_adjacency(std::size_t n, const std::vector<Edge>& distances, double sigma2) {
  if (sigma2 <= 0.0) throw ConfigError("sigma2 must be positive");
  Mat a(n, n);
  for (const auto& e : distances) {
    if (e.src >= n || e.dst >= n) throw DataError("edge endpoint out of range");
    if (e.weight < 0.0) throw DataError("negative distance in edge list");
    a.at(e.src, e.dst) = std::exp(-(e.weight * e.weight) / sigma2);
  }
  return SensorGraph(n, std::move(a));
}

DiffusionOperator random_walk(const SensorGraph& graph, std::size_t max_hops) {
  return DiffusionOperator(graph, max_hops);
}

Mat poly_filter(const DiffusionOperator& op, const std::vector<double>& alphas, const Mat& x) {
  if (alphas.empty()) throw ConfigError("poly_filter needs at least alpha_0");
  if (x.rows != op.n()) throw ShapeError("poly_filter: X row count must equal node count");
  Mat acc(x.rows, x.cols);
  Mat cur = x;  // S^0 X
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    if (k > 0) cur = matmul(op.matrix(), cur);
    if (alphas[k] == 0.0) continue;
    for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += alphas[k] * cur.v[i];
  }
  return acc;
}

Mat sym_normalize(const Mat& a) {
  if (a.rows != a.cols) throw ShapeError("sym_normalize expects a square matrix");
  const std::size_t n = a.rows;
  Mat b = a;
  for (std::size_t i = 0; i < n; ++i) b.at(i, i) += 1.0;
  std::vector<double> dinv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (b.at(i, j) < 0.0) throw DataError("sym_normalize: negative entry");
      deg += b.at(i, j);
    }
    dinv[i] = 1.0 / std::sqrt(deg);  // deg >= 1 because of the self loop
  }
  Mat out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = dinv[i] * b.at(i, j) * dinv[j];
  }
  return out;
}

Mat topk_sparsify(const Mat& a, std::size_t k) {
  if (k < 1 || k > a.cols) throw ConfigError("topk: k must be in [1, R]");
  Mat out(a.rows, a.cols);
  std::vector<std::size_t> idx(a.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) idx[j] = j;
    // stable sort on descending value keeps the lower column index on ties
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
      return a.at(i, x) > a.at(i, y);
    });
    for (std::size_t r = 0; r < k; ++r) out.at(i, idx[r]) = a.at(i, idx[r]);
  }
  return out;
}

std::vector<Edge> load_edge_list(const std::string& path, std::size_t n_nodes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open edge list: " + path);
  std::vector<Edge> edges;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string src, dst, dist;
    if (!std::getline(ss, src, ',') || !std::getline(ss, dst, ',') || !std::getline(ss, dist)) {
      throw DataError("malformed edge list row: " + line);
    }
    if (first) {
      first = false;
      // optional header row
      if (src == "src" || src == "source") continue;
    }
    try {
      const std::size_t s = std::stoul(src);
      const std::size_t d = std::stoul(dst);
      const double w = std::stod(dist);
      if (s >= n_nodes || d >= n_nodes) throw DataError("edge endpoint out of range: " + line);
      edges.push_back({s, d, w});
    } catch (const std::invalid_argument&) {
      throw DataError("unparseable edge list row: " + line);
    }
  }
  return edges;
}

void save_adjacency(const SensorGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write adjacency: " + path);
  out << "src,dst,weight\n";
  for (const auto& e : graph.edges()) {
    out << e.src << "," << e.dst << "," << e.weight << "\n";
  }
}

}  // namespace stprompt
