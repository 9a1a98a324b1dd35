#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcvamd/image.hpp"
#include "gcvamd/metrics.hpp"
#include "gcvamd/model.hpp"

namespace gcvamd {

inline constexpr int kAeLatentWidth = 8;

/// Convolutional autoencoder with the same convolution stack as the GCVAMD
/// encoder and an 8-wide linear latent.
struct ConvAE {
  ConvNetConfig config;
  nn::Stack encoder;
  nn::Stack decoder;

  ConvAE(ConvNetConfig net, std::uint64_t seed);
  std::vector<nn::ParamView> params();
  /// Latents as an 8 x N matrix.
  Matrix encode(const Matrix& images) const;
};

/// Dense 32, 32, 16, 4 (each ELU then batch normalization), then one sigmoid unit.
struct DnnClassifier {
  nn::Stack net;

  DnnClassifier(int input_width, std::uint64_t seed);
  int input_width() const { return static_cast<int>(net.input_width()); }
  std::vector<nn::ParamView> params();
  /// Inference-mode probabilities for an n x width feature matrix.
  std::vector<double> predict(const Matrix& features) const;
};

struct FitOptions {
  int epochs = 0;
  int batch_size = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;  // batch order
};

FitOptions default_ae_options();
FitOptions default_dnn_options();

struct FitLog {
  double initial_loss = 0.0;        // full-data loss before training
  std::vector<double> epoch_losses;  // mean minibatch loss per epoch
  double final_loss = 0.0;           // full-data loss after training
};

/// Adam on mean pixel binary cross-entropy. Throws TrainingDivergence on
/// non-finite or oversized losses.
FitLog train_conv_ae(ConvAE& ae, const ImageBatch& images, const FitOptions& options);

double reconstruction_bce(const ConvAE& ae, const Matrix& images);

struct FeatureSet {
  Matrix features;  // n x width
  bool causality_incorporated = false;
};

/// AE latents, optionally followed by the GCVAMD latents z0 and z1 computed
/// with the reparameterization noise set to zero.
FeatureSet extract_features(const ConvAE& ae, const GcvamdModel* gcvamd, const ImageBatch& images,
                            bool incorporate);

/// Adam on binary cross-entropy; labels are 0/1.
FitLog train_dnn(DnnClassifier& dnn, const Matrix& features, const std::vector<int>& labels,
                 const FitOptions& options);

struct VariantReport {
  ClassificationMetrics metrics;
  ConfusionCounts counts;
  double roc_auc = 0.0;
};

struct PairReport {
  VariantReport incorporated;
  VariantReport baseline;
};

VariantReport evaluate_variant(const DnnClassifier& dnn, const Matrix& features, const std::vector<int>& labels);
PairReport evaluate_pair(const DnnClassifier& incorporated, const Matrix& incorporated_features,
                         const DnnClassifier& baseline, const Matrix& baseline_features,
                         const std::vector<int>& labels);

nlohmann::json to_json(const VariantReport& report);
/// Rows accuracy, precision, recall, macro_f1, roc_auc; one column per variant.
std::string comparison_table(const PairReport& report);

}  // namespace gcvamd
