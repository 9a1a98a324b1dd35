#include "gcvamd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gcvamd {

namespace {

double soft_threshold(double v, double t) { return std::copysign(std::max(std::abs(v) - t, 0.0), v); }

double safe_ratio(double num, double den, const char* name, std::vector<std::string>& undefined) {
  if (den == 0.0) {
    undefined.emplace_back(name);
    return 0.0;
  }
  return num / den;
}

}  // namespace

void LassoConfig::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("lasso alpha must be positive");
  if (max_iterations <= 0) throw std::invalid_argument("lasso needs a positive iteration budget");
  if (!(tolerance > 0.0)) throw std::invalid_argument("lasso tolerance must be positive");
}

LassoFit lasso_fit(const Matrix& x, const Vector& y, const LassoConfig& config) {
  config.validate();
  const auto n = x.rows();
  const auto p = x.cols();
  if (n < 2) throw std::invalid_argument("lasso needs at least two samples");
  if (y.size() != n) throw std::invalid_argument("lasso response length must match the design rows");
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("lasso input must be finite");

  const double nd = static_cast<double>(n);
  Vector x_mean = Vector::Zero(p);
  double y_mean = 0.0;
  if (config.fit_intercept) {
    x_mean = x.colwise().mean().transpose();
    y_mean = y.mean();
  }
  const Matrix xc = x.rowwise() - x_mean.transpose();
  const Vector col_sq = xc.colwise().squaredNorm().transpose() / nd;

  LassoFit fit;
  fit.weights = Vector::Zero(p);
  Vector residual = y.array() - y_mean;
  for (fit.iterations = 1; fit.iterations <= config.max_iterations; ++fit.iterations) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (col_sq[j] <= 1e-300) continue;
      const double old = fit.weights[j];
      const double rho = xc.col(j).dot(residual) / nd + col_sq[j] * old;
      const double updated = soft_threshold(rho, config.alpha) / col_sq[j];
      if (updated != old) {
        residual -= (updated - old) * xc.col(j);
        fit.weights[j] = updated;
        max_change = std::max(max_change, std::abs(updated - old));
      }
    }
    if (max_change < config.tolerance) {
      fit.converged = true;
      break;
    }
  }
  fit.iterations = std::min(fit.iterations, config.max_iterations);
  fit.intercept = config.fit_intercept ? y_mean - x_mean.dot(fit.weights) : 0.0;
  return fit;
}

double lasso_objective(const Matrix& x, const Vector& y, const Vector& w, double intercept, double alpha) {
  const Vector r = y - x * w - Vector::Constant(y.size(), intercept);
  return r.squaredNorm() / (2.0 * static_cast<double>(y.size())) + alpha * w.lpNorm<1>();
}

std::vector<double> default_lasso_alphas() { return {0.1, 0.1, 0.01}; }

Matrix relevance_matrix(const Matrix& codes, const Matrix& factors, const std::vector<double>& alphas) {
  if (codes.rows() != factors.rows()) throw std::invalid_argument("codes and factors need the same sample count");
  if (static_cast<std::size_t>(factors.cols()) != alphas.size())
    throw std::invalid_argument("need one lasso alpha per factor");
  Matrix r(codes.cols(), factors.cols());
  for (Eigen::Index j = 0; j < factors.cols(); ++j) {
    LassoConfig config;
    config.alpha = alphas[static_cast<std::size_t>(j)];
    const LassoFit fit = lasso_fit(codes, factors.col(j), config);
    for (Eigen::Index i = 0; i < codes.cols(); ++i) {
      const double w = std::abs(fit.weights[i]);
      r(i, j) = w == 0.0 ? kRelevanceFloor : w;
    }
  }
  return r;
}

DisentanglementScores disentanglement_scores(const Matrix& relevance) {
  if (relevance.size() == 0) throw std::invalid_argument("relevance matrix is empty");
  if (!relevance.allFinite() || (relevance.array() <= 0.0).any())
    throw std::invalid_argument("relevance entries must be positive and finite");
  const auto m = relevance.rows();
  DisentanglementScores s;
  s.p = relevance.array().rowwise() / relevance.colwise().sum().array();
  s.d = Vector::Ones(relevance.cols());
  if (m == 1) return s;
  const double log_m = std::log(static_cast<double>(m));
  for (Eigen::Index j = 0; j < relevance.cols(); ++j) {
    double entropy = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) entropy -= s.p(i, j) * std::log(s.p(i, j));
    s.d[j] = 1.0 - entropy / log_m;
  }
  return s;
}

ConfusionCounts confusion_counts(const std::vector<double>& scores, const std::vector<int>& labels,
                                 double threshold) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("labels must be 0 or 1");
    if (labels[i] == 1) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

ClassificationMetrics classification_metrics(const ConfusionCounts& c) {
  if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0) throw std::invalid_argument("counts must be nonnegative");
  if (c.total() == 0) throw std::invalid_argument("confusion matrix is empty");
  ClassificationMetrics m;
  const auto tp = static_cast<double>(c.tp);
  const auto fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn);
  const auto tn = static_cast<double>(c.tn);
  m.accuracy = (tp + tn) / static_cast<double>(c.total());
  m.precision = safe_ratio(tp, tp + fp, "precision", m.undefined);
  m.recall = safe_ratio(tp, tp + fn, "recall", m.undefined);
  m.specificity = safe_ratio(tn, tn + fp, "specificity", m.undefined);
  const double f1_pos = safe_ratio(2.0 * tp, 2.0 * tp + fp + fn, "f1_positive", m.undefined);
  const double f1_neg = safe_ratio(2.0 * tn, 2.0 * tn + fn + fp, "f1_negative", m.undefined);
  m.macro_f1 = 0.5 * (f1_pos + f1_neg);
  return m;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Rank-sum form of the pair count, with tied groups sharing their mean rank.
  double positive_rank_sum = 0.0;
  std::int64_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      const int label = labels[order[k]];
      if (label != 0 && label != 1) throw std::invalid_argument("labels must be 0 or 1");
      if (label == 1) {
        positive_rank_sum += mean_rank;
        ++positives;
      }
    }
    i = j;
  }
  const auto negatives = static_cast<std::int64_t>(scores.size()) - positives;
  if (positives == 0 || negatives == 0) throw std::invalid_argument("ROC-AUC needs both classes");
  const double pos = static_cast<double>(positives);
  return (positive_rank_sum - pos * (pos + 1.0) / 2.0) / (pos * static_cast<double>(negatives));
}

nlohmann::json to_json(const ClassificationMetrics& m) {
  return {{"accuracy", m.accuracy},       {"precision", m.precision}, {"recall", m.recall},
          {"specificity", m.specificity}, {"macro_f1", m.macro_f1},   {"undefined", m.undefined}};
}

nlohmann::json to_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

nlohmann::json to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json disentanglement_report(const Matrix& relevance, const DisentanglementScores& scores) {
  std::vector<double> d(scores.d.data(), scores.d.data() + scores.d.size());
  return {{"R", to_json(relevance)}, {"p", to_json(scores.p)}, {"D", d}, {"mean_D", scores.mean()}};
}

}  // namespace gcvamd
