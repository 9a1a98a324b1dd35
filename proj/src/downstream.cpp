#include "gcvamd/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "gcvamd/errors.hpp"
#include "gcvamd/optim.hpp"
#include "gcvamd/trainer.hpp"

namespace gcvamd {

namespace {

constexpr double kClamp = 1e-7;

double clamp_prob(double p) { return std::min(std::max(p, kClamp), 1.0 - kClamp); }

/// Mean over columns of the per-column mean binary cross-entropy, and its
/// gradient with respect to the probabilities.
double bce_and_grad(const Matrix& p, const Matrix& target, Matrix* grad) {
  const auto n = static_cast<double>(p.cols());
  const auto rows = static_cast<double>(p.rows());
  double loss = 0.0;
  if (grad) grad->resize(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double x = target.data()[i];
    const double raw = p.data()[i];
    const double q = clamp_prob(raw);
    loss -= x * std::log(q) + (1.0 - x) * std::log(1.0 - q);
    if (grad) {
      const bool clamped = raw < kClamp || raw > 1.0 - kClamp;
      grad->data()[i] = clamped ? 0.0 : (q - x) / (q * (1.0 - q) * n * rows);
    }
  }
  return loss / (n * rows);
}

void check_loss(const std::string& name, double loss) {
  if (!std::isfinite(loss)) throw TrainingDivergence(name, "loss is not finite");
  if (loss > kDivergenceLimit) throw TrainingDivergence(name, "loss exceeds divergence limit");
}

std::vector<Eigen::Index> shuffled(Eigen::Index n, Engine& engine) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  // Fisher-Yates with an explicit draw so the order is the same across standard libraries.
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(engine() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Matrix gather(const Matrix& m, const std::vector<Eigen::Index>& columns, std::size_t first, std::size_t count) {
  Matrix out(m.rows(), static_cast<Eigen::Index>(count));
  for (std::size_t k = 0; k < count; ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(columns[first + k]);
  return out;
}

void validate(const FitOptions& options) {
  if (options.epochs < 0 || options.batch_size <= 0 || !(options.lr > 0.0))
    throw std::invalid_argument("fit options need epochs >= 0, batch size > 0 and lr > 0");
}

/// Shared minibatch loop. `step` returns the batch loss after accumulating
/// gradients for the given column subset.
FitLog minibatch_fit(Eigen::Index n, const FitOptions& options, const std::string& name,
                     const std::function<double()>& full_loss,
                     const std::function<double(const std::vector<Eigen::Index>&, std::size_t, std::size_t)>& step) {
  validate(options);
  FitLog log;
  log.initial_loss = full_loss();
  Engine engine(options.seed);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const auto order = shuffled(n, engine);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t first = 0; first < order.size(); first += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t count = std::min(order.size() - first, static_cast<std::size_t>(options.batch_size));
      const double loss = step(order, first, count);
      check_loss(name, loss);
      sum += loss;
      ++batches;
    }
    log.epoch_losses.push_back(sum / batches);
  }
  log.final_loss = full_loss();
  return log;
}

}  // namespace

ConvAE::ConvAE(ConvNetConfig net, std::uint64_t seed) : config(std::move(net)) {
  Engine engine(seed);
  encoder = build_conv_encoder(config, kAeLatentWidth, engine);
  decoder = build_conv_decoder(config, kAeLatentWidth, config.decoder_dense, engine);
}

std::vector<nn::ParamView> ConvAE::params() {
  std::vector<nn::ParamView> out;
  encoder.collect_params("ae_encoder", nn::ParamGroup::kDownstream, out);
  decoder.collect_params("ae_decoder", nn::ParamGroup::kDownstream, out);
  return out;
}

Matrix ConvAE::encode(const Matrix& images) const { return encoder.forward(images); }

double reconstruction_bce(const ConvAE& ae, const Matrix& images) {
  return bce_and_grad(ae.decoder.forward(ae.encoder.forward(images)), images, nullptr);
}

DnnClassifier::DnnClassifier(int input_width, std::uint64_t seed) {
  if (input_width <= 0) throw std::invalid_argument("classifier input width must be positive");
  int width = input_width;
  for (int hidden : {32, 32, 16, 4}) {
    net.layers.emplace_back(nn::Dense(width, hidden, nn::Activation::kElu));
    net.layers.emplace_back(nn::BatchNorm(hidden));
    width = hidden;
  }
  net.layers.emplace_back(nn::Dense(width, 1, nn::Activation::kSigmoid));
  Engine engine(seed);
  net.init_glorot(engine);
}

std::vector<nn::ParamView> DnnClassifier::params() {
  std::vector<nn::ParamView> out;
  net.collect_params("dnn", nn::ParamGroup::kDownstream, out);
  return out;
}

std::vector<double> DnnClassifier::predict(const Matrix& features) const {
  if (features.cols() != input_width()) throw std::invalid_argument("feature width does not match the classifier");
  const Matrix p = net.forward(features.transpose());
  return {p.data(), p.data() + p.size()};
}

FitOptions default_ae_options() { return {300, 100, 0.002, 0}; }
FitOptions default_dnn_options() { return {400, 50, 1e-4, 0}; }

FitLog train_conv_ae(ConvAE& ae, const ImageBatch& images, const FitOptions& options) {
  if (images.count() == 0) throw std::invalid_argument("autoencoder training set is empty");
  if (!(images.shape == ae.config.input)) throw std::invalid_argument("image shape does not match the autoencoder");
  AdamState state;
  AdamConfig adam;
  adam.lr = options.lr;
  auto params = ae.params();
  return minibatch_fit(
      images.count(), options, "autoencoder", [&] { return reconstruction_bce(ae, images.data); },
      [&](const std::vector<Eigen::Index>& order, std::size_t first, std::size_t count) {
        const Matrix x = gather(images.data, order, first, count);
        nn::StackCache enc_cache;
        nn::StackCache dec_cache;
        const Matrix latent = ae.encoder.forward(x, &enc_cache, nn::Mode::kTraining);
        const Matrix p = ae.decoder.forward(latent, &dec_cache, nn::Mode::kTraining);
        Matrix dp;
        const double loss = bce_and_grad(p, x, &dp);
        nn::Stack enc_grad = ae.encoder.zeros_like();
        nn::Stack dec_grad = ae.decoder.zeros_like();
        const Matrix dlatent = ae.decoder.backward(dp, dec_cache, &dec_grad, true);
        ae.encoder.backward(dlatent, enc_cache, &enc_grad, false);
        std::vector<nn::ParamView> grads;
        enc_grad.collect_params("ae_encoder", nn::ParamGroup::kDownstream, grads);
        dec_grad.collect_params("ae_decoder", nn::ParamGroup::kDownstream, grads);
        adam_step(params, grads, state, adam);
        return loss;
      });
}

FeatureSet extract_features(const ConvAE& ae, const GcvamdModel* gcvamd, const ImageBatch& images,
                            bool incorporate) {
  if (incorporate && !gcvamd) throw std::invalid_argument("causal features requested without a GCVAMD model");
  if (!(images.shape == ae.config.input)) throw std::invalid_argument("image shape does not match the autoencoder");
  FeatureSet set;
  set.causality_incorporated = incorporate;
  const Matrix latent = ae.encode(images.data);
  if (!incorporate) {
    set.features = latent.transpose();
    return set;
  }
  const Matrix eta = Matrix::Zero(gcvamd->d(), images.count());
  const ForwardCache cache = run_forward(*gcvamd, images.data, eta);
  set.features.resize(images.count(), kAeLatentWidth + 2);
  set.features.leftCols(kAeLatentWidth) = latent.transpose();
  set.features.rightCols(2) = cache.noise.z.topRows(2).transpose();
  return set;
}

FitLog train_dnn(DnnClassifier& dnn, const Matrix& features, const std::vector<int>& labels,
                 const FitOptions& options) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("feature rows must match label count");
  if (features.cols() != dnn.input_width()) throw std::invalid_argument("feature width does not match the classifier");
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  const auto negatives = std::count(labels.begin(), labels.end(), 0);
  if (positives + negatives != static_cast<long>(labels.size())) throw std::invalid_argument("labels must be 0 or 1");
  if (positives == 0 || negatives == 0) throw std::invalid_argument("classifier training needs both classes");

  const Matrix x = features.transpose();
  Matrix y(1, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) y(0, static_cast<Eigen::Index>(i)) = labels[i];
  AdamState state;
  AdamConfig adam;
  adam.lr = options.lr;
  auto params = dnn.params();
  return minibatch_fit(
      x.cols(), options, "classifier", [&] { return bce_and_grad(dnn.net.forward(x), y, nullptr); },
      [&](const std::vector<Eigen::Index>& order, std::size_t first, std::size_t count) {
        const Matrix xb = gather(x, order, first, count);
        const Matrix yb = gather(y, order, first, count);
        nn::StackCache cache;
        const Matrix p = dnn.net.forward(xb, &cache, nn::Mode::kTraining);
        Matrix dp;
        const double loss = bce_and_grad(p, yb, &dp);
        nn::Stack grad = dnn.net.zeros_like();
        dnn.net.backward(dp, cache, &grad, false);
        std::vector<nn::ParamView> grads;
        grad.collect_params("dnn", nn::ParamGroup::kDownstream, grads);
        adam_step(params, grads, state, adam);
        dnn.net.update_batchnorm_stats(cache);
        return loss;
      });
}

VariantReport evaluate_variant(const DnnClassifier& dnn, const Matrix& features, const std::vector<int>& labels) {
  const auto scores = dnn.predict(features);
  VariantReport report;
  report.counts = confusion_counts(scores, labels, 0.5);
  report.metrics = classification_metrics(report.counts);
  report.roc_auc = roc_auc(scores, labels);
  return report;
}

PairReport evaluate_pair(const DnnClassifier& incorporated, const Matrix& incorporated_features,
                         const DnnClassifier& baseline, const Matrix& baseline_features,
                         const std::vector<int>& labels) {
  return {evaluate_variant(incorporated, incorporated_features, labels),
          evaluate_variant(baseline, baseline_features, labels)};
}

nlohmann::json to_json(const VariantReport& report) {
  nlohmann::json j = to_json(report.metrics);
  j["roc_auc"] = report.roc_auc;
  j["confusion"] = to_json(report.counts);
  return j;
}

std::string comparison_table(const PairReport& report) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "metric" << std::setw(26) << "causality_incorporated"
      << "not_incorporated\n";
  auto row = [&](const char* name, double a, double b) {
    out << std::left << std::setw(12) << name << std::setw(26) << std::fixed << std::setprecision(4) << a << b
        << '\n';
  };
  row("accuracy", report.incorporated.metrics.accuracy, report.baseline.metrics.accuracy);
  row("precision", report.incorporated.metrics.precision, report.baseline.metrics.precision);
  row("recall", report.incorporated.metrics.recall, report.baseline.metrics.recall);
  row("macro_f1", report.incorporated.metrics.macro_f1, report.baseline.metrics.macro_f1);
  row("roc_auc", report.incorporated.roc_auc, report.baseline.roc_auc);
  return out.str();
}

}  // namespace gcvamd
