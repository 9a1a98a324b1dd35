#include "gcvamd/causal_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <unsupported/Eigen/MatrixFunctions>

namespace gcvamd {

WeightedAdjacency::WeightedAdjacency(int d) {
  if (d <= 0) throw std::invalid_argument("adjacency size must be positive");
  w_ = Matrix::Zero(d, d);
}

WeightedAdjacency::WeightedAdjacency(Matrix w) : w_(std::move(w)) {
  if (w_.rows() != w_.cols() || w_.rows() == 0)
    throw std::invalid_argument("adjacency must be a nonempty square matrix");
  if (!w_.allFinite()) throw std::invalid_argument("adjacency entries must be finite");
  if (!w_.diagonal().isZero(0.0))
    throw std::invalid_argument("adjacency diagonal must be zero");
}

void WeightedAdjacency::set(int i, int j, double value) {
  if (i < 0 || j < 0 || i >= d() || j >= d()) throw std::invalid_argument("adjacency index out of range");
  if (i == j) throw std::invalid_argument("adjacency diagonal is pinned to zero");
  if (!std::isfinite(value)) throw std::invalid_argument("adjacency entries must be finite");
  w_(i, j) = value;
}

BinaryGraph::BinaryGraph(int d) : d_(d) {
  if (d <= 0) throw std::invalid_argument("graph size must be positive");
}

BinaryGraph::BinaryGraph(int d, const std::vector<Edge>& edges) : BinaryGraph(d) {
  for (const auto& [from, to] : edges) add_edge(from, to);
}

void BinaryGraph::add_edge(int from, int to) {
  if (from < 0 || to < 0 || from >= d_ || to >= d_)
    throw std::invalid_argument("edge endpoint out of range");
  if (from == to) throw std::invalid_argument("self-loops are not allowed");
  edges_.insert({from, to});
}

std::string BinaryGraph::to_text() const {
  std::ostringstream out;
  out << "d=" << d_ << '\n';
  for (const auto& [from, to] : edges_) out << from << ' ' << to << '\n';
  return out.str();
}

BinaryGraph BinaryGraph::from_text(std::istream& in) {
  std::string line;
  int d = -1;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (line.rfind("d=", 0) != 0) throw std::invalid_argument("edge list must start with a d=<n> header");
    try {
      d = std::stoi(line.substr(2));
    } catch (const std::exception&) {
      throw std::invalid_argument("malformed edge list header: " + line);
    }
    break;
  }
  if (d <= 0) throw std::invalid_argument("edge list is missing a valid d=<n> header");
  BinaryGraph graph(d);
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    int from = 0;
    int to = 0;
    std::string rest;
    if (!(fields >> from >> to) || (fields >> rest))
      throw std::invalid_argument("malformed edge line: " + line);
    graph.add_edge(from, to);
  }
  return graph;
}

BinaryGraph BinaryGraph::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open graph file: " + path);
  return from_text(in);
}

void BinaryGraph::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write graph file: " + path);
  out << to_text();
}

void AugLagState::validate() const {
  if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be nonnegative");
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be positive");
  if (!(beta > 1.0)) throw std::invalid_argument("beta must exceed 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
  if (!(h_prev >= 0.0)) throw std::invalid_argument("h_prev must be nonnegative");
}

Matrix matrix_exponential(const Matrix& b) {
  if (b.rows() != b.cols()) throw std::invalid_argument("matrix exponential needs a square matrix");
  if (!b.allFinite()) throw std::invalid_argument("matrix exponential input must be finite");
  return b.exp();
}

double acyclicity_h(const WeightedAdjacency& a) {
  const Matrix squared = a.weights().cwiseProduct(a.weights());
  const double h = matrix_exponential(squared).trace() - a.d();
  return std::max(h, 0.0);
}

Matrix acyclicity_grad(const WeightedAdjacency& a) {
  const Matrix& w = a.weights();
  const Matrix e = matrix_exponential(w.cwiseProduct(w));
  return e.transpose().cwiseProduct(2.0 * w);
}

BinaryGraph binarize_top_fraction(const WeightedAdjacency& a, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("binarization fraction must lie in (0, 1]");
  const int d = a.d();
  std::vector<BinaryGraph::Edge> candidates;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (i != j) candidates.emplace_back(i, j);
  const auto total = static_cast<double>(candidates.size());
  // The epsilon absorbs representation error such as 0.2 * 6 = 1.2000000000000002.
  auto k = static_cast<std::size_t>(std::ceil(fraction * total - 1e-9));
  k = std::min(k, candidates.size());

  std::stable_sort(candidates.begin(), candidates.end(), [&](const auto& x, const auto& y) {
    return std::abs(a(x.first, x.second)) > std::abs(a(y.first, y.second));
  });
  BinaryGraph graph(d);
  for (std::size_t e = 0; e < k; ++e) graph.add_edge(candidates[e].first, candidates[e].second);
  return graph;
}

int shd(const BinaryGraph& g1, const BinaryGraph& g2) {
  if (g1.d() != g2.d()) throw std::invalid_argument("shd needs graphs over the same node count");
  int distance = 0;
  for (int i = 0; i < g1.d(); ++i) {
    for (int j = i + 1; j < g1.d(); ++j) {
      const bool f1 = g1.has_edge(i, j), b1 = g1.has_edge(j, i);
      const bool f2 = g2.has_edge(i, j), b2 = g2.has_edge(j, i);
      if (f1 == f2 && b1 == b2) continue;
      const bool single1 = f1 != b1;
      const bool single2 = f2 != b2;
      if (single1 && single2) {
        distance += 1;  // opposite orientation: one reversal
      } else {
        distance += (f1 != f2) + (b1 != b2);
      }
    }
  }
  return distance;
}

AugLagState auglag_update(const AugLagState& state, double h_new) {
  if (!(h_new >= 0.0)) throw std::invalid_argument("acyclicity value must be nonnegative");
  AugLagState next = state;
  next.alpha = state.alpha + state.rho * h_new;
  if (std::abs(h_new) >= state.gamma * std::abs(state.h_prev)) next.rho = state.beta * state.rho;
  next.h_prev = h_new;
  return next;
}

bool reachable(const Matrix& w, int from, int to) {
  const auto d = static_cast<int>(w.rows());
  std::vector<bool> seen(d, false);
  std::vector<int> stack{from};
  seen[from] = true;
  while (!stack.empty()) {
    const int node = stack.back();
    stack.pop_back();
    for (int next = 0; next < d; ++next) {
      if (next == node || w(node, next) == 0.0 || seen[next]) continue;
      if (next == to) return true;
      seen[next] = true;
      stack.push_back(next);
    }
  }
  return false;
}

BinaryGraph default_truth_graph() { return BinaryGraph(3, {{0, 2}, {1, 2}}); }

}  // namespace gcvamd
