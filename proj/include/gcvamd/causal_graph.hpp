#pragma once

#include <istream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gcvamd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Learnable d x d causal weights; w(i, j) is the weight of edge i -> j.
/// The diagonal is pinned to zero.
class WeightedAdjacency {
 public:
  explicit WeightedAdjacency(int d = 3);
  /// Throws std::invalid_argument for non-square, non-finite or nonzero-diagonal input.
  explicit WeightedAdjacency(Matrix w);

  int d() const { return static_cast<int>(w_.rows()); }
  const Matrix& weights() const { return w_; }
  double operator()(int i, int j) const { return w_(i, j); }
  void set(int i, int j, double value);

  /// Raw storage for optimizers. Call pin_diagonal() after writing.
  Matrix& mutable_weights() { return w_; }
  void pin_diagonal() { w_.diagonal().setZero(); }

 private:
  Matrix w_;
};

/// Directed graph without self-loops over nodes 0..d-1.
class BinaryGraph {
 public:
  using Edge = std::pair<int, int>;

  explicit BinaryGraph(int d = 3);
  BinaryGraph(int d, const std::vector<Edge>& edges);

  int d() const { return d_; }
  const std::set<Edge>& edges() const { return edges_; }
  bool has_edge(int from, int to) const { return edges_.count({from, to}) != 0; }
  void add_edge(int from, int to);
  std::size_t edge_count() const { return edges_.size(); }

  /// Edge-list text: a `d=<n>` header line, then one `i j` pair per line.
  std::string to_text() const;
  static BinaryGraph from_text(std::istream& in);
  static BinaryGraph load(const std::string& path);
  void save(const std::string& path) const;

  friend bool operator==(const BinaryGraph&, const BinaryGraph&) = default;

 private:
  int d_;
  std::set<Edge> edges_;
};

/// Dual state of the augmented-Lagrangian acyclicity constraint.
struct AugLagState {
  double alpha = 0.6;
  double rho = 0.1;
  double beta = 1.01;   // penalty growth factor, > 1
  double gamma = 0.9;   // required decrease ratio, in (0, 1)
  double h_prev = 0.0;

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;
};

Matrix matrix_exponential(const Matrix& b);

/// tr(exp(A o A)) - d. Zero exactly when the nonzero pattern of A is acyclic.
double acyclicity_h(const WeightedAdjacency& a);

/// d h / d A = exp(A o A)^T o 2A.
Matrix acyclicity_grad(const WeightedAdjacency& a);

/// Keeps the ceil(fraction * d(d-1)) largest |w| off-diagonal entries. Ties go
/// to the smaller row-major index.
BinaryGraph binarize_top_fraction(const WeightedAdjacency& a, double fraction);

/// Structural Hamming distance; a reversed edge counts as one operation.
int shd(const BinaryGraph& g1, const BinaryGraph& g2);

AugLagState auglag_update(const AugLagState& state, double h_new);

/// True when `to` is reachable from `from` along edges with nonzero weight.
bool reachable(const Matrix& w, int from, int to);

/// The ground-truth shape used for evaluation by default: 0 -> 2, 1 -> 2.
BinaryGraph default_truth_graph();

}  // namespace gcvamd
