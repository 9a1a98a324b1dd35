#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace gcvamd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct LassoConfig {
  double alpha = 0.1;
  int max_iterations = 10000;
  double tolerance = 1e-10;  // largest coefficient change per sweep
  bool fit_intercept = true;

  void validate() const;
};

struct LassoFit {
  Vector weights;
  double intercept = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Minimizes (1/(2n)) ||y - Xw - b||^2 + alpha ||w||_1 by cyclic coordinate
/// descent in ascending column order. Constant columns get weight 0.
LassoFit lasso_fit(const Matrix& x, const Vector& y, const LassoConfig& config);

/// (1/(2n)) ||y - Xw - b||^2 + alpha ||w||_1.
double lasso_objective(const Matrix& x, const Vector& y, const Vector& w, double intercept, double alpha);

inline constexpr double kRelevanceFloor = 1e-5;

/// Per-factor lasso penalties used by the relevance matrix.
std::vector<double> default_lasso_alphas();

/// R(i, j) = |coefficient of code i| when factor j is regressed on all codes;
/// exact zeros become kRelevanceFloor.
Matrix relevance_matrix(const Matrix& codes, const Matrix& factors, const std::vector<double>& alphas);

struct DisentanglementScores {
  Matrix p;  // columns sum to one
  Vector d;  // one score per factor column
  double mean() const { return d.mean(); }
};

/// p(i, j) = R(i, j) / sum_k R(k, j); D_j = 1 - sum_i p(i, j) log_M(1 / p(i, j)),
/// with M the number of code rows.
DisentanglementScores disentanglement_scores(const Matrix& relevance);

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts confusion_counts(const std::vector<double>& scores, const std::vector<int>& labels,
                                 double threshold = 0.5);

struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  double macro_f1 = 0.0;
  /// Names of metrics whose denominator was zero; those report 0.
  std::vector<std::string> undefined;
};

ClassificationMetrics classification_metrics(const ConfusionCounts& counts);

/// Mann-Whitney estimate with ties counted as one half.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

nlohmann::json to_json(const ClassificationMetrics& metrics);
nlohmann::json to_json(const ConfusionCounts& counts);
nlohmann::json to_json(const Matrix& m);
nlohmann::json disentanglement_report(const Matrix& relevance, const DisentanglementScores& scores);

}  // namespace gcvamd
