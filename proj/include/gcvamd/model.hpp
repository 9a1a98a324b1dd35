#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gcvamd/causal_graph.hpp"
#include "gcvamd/image.hpp"
#include "gcvamd/nn.hpp"
#include "gcvamd/rng.hpp"
#include "gcvamd/scm_layers.hpp"

namespace gcvamd {

struct ConvSpec {
  int filters = 0;
  int kernel = 0;
  int stride = 1;
};

/// Convolutional encoder/decoder geometry. The decoder mirrors the encoder
/// with transposed convolutions and ends in a sigmoid.
struct ConvNetConfig {
  nn::Shape3 input{224, 224, 3};
  std::vector<ConvSpec> convs{{16, 5, 3}, {16, 4, 2}, {32, 4, 2}};
  std::vector<int> encoder_dense{256, 64};
  std::vector<int> decoder_dense{64, 256};

  /// 224 x 224 x 3, spatial chain 224 -> 74 -> 36 -> 17.
  static ConvNetConfig full();
  /// 64 x 64 x 3 desk-scale geometry, spatial chain 64 -> 20 -> 9 -> 3.
  static ConvNetConfig reduced();
  /// 16 x 16 x 1 with small widths, for finite-difference checks.
  static ConvNetConfig gradient_check();
};

struct ConvGeometry {
  std::vector<nn::Shape3> encoder;  // input, then each conv output
  std::vector<nn::Shape3> decoder;  // dense reshape target, then each transposed conv output
  std::vector<int> output_padding;  // per transposed conv, decoder order
};

/// Throws std::invalid_argument when a kernel does not fit or the transposed
/// chain cannot reproduce the encoder's spatial sizes.
ConvGeometry conv_geometry(const ConvNetConfig& config);

nn::Stack build_conv_encoder(const ConvNetConfig& config, int output_width, Engine& engine);
/// `decoder_dense` gives the hidden widths between the latent input and the
/// reshape layer.
nn::Stack build_conv_decoder(const ConvNetConfig& config, int input_width, const std::vector<int>& decoder_dense,
                             Engine& engine);

/// Loss term weights: omega (reconstruction), beta (l_z), gamma (l_u), nu (l_zu).
struct LossWeights {
  double omega = 1.0;
  double beta = 0.3;
  double gamma = 0.3;
  double nu = 0.1;

  void validate() const;
};

struct LossComponents {
  double bce = 0.0;
  double eps_pen = 0.0;
  double h = 0.0;
  double l_z = 0.0;
  double l_u = 0.0;
  double l_zu = 0.0;
};

/// Per-sample latents, all N x d.
struct LatentBatch {
  Matrix mu;
  Matrix logvar;
  Matrix eps;
  Matrix z;
  Matrix z_hat;
};

class GcvamdModel {
 public:
  GcvamdModel(ConvNetConfig config, int d, std::uint64_t seed, int hidden_multiplier = 4);

  const ConvNetConfig& config() const { return config_; }
  const ConvGeometry& geometry() const { return geometry_; }
  int d() const { return d_; }
  int hidden_multiplier() const { return hidden_multiplier_; }

  nn::Stack encoder;
  nn::Stack decoder;
  NoiseToLatent noise_map;
  CausalLayerGAE causal_layer;
  WeightedAdjacency adjacency;

  /// Every parameter array, in a fixed order, tagged by optimizer group.
  std::vector<nn::ParamView> params();
  GcvamdModel zeros_like() const;
  /// Re-zeroes masked block weights and the adjacency diagonal.
  void enforce_constraints();

 private:
  ConvNetConfig config_;
  ConvGeometry geometry_;
  int d_;
  int hidden_multiplier_;
};

/// Labels as a d x N matrix; with `scale` the severity column is divided by 3.
Matrix prepare_labels(const Matrix& labels, bool scale);

std::pair<Matrix, Matrix> encode(const GcvamdModel& model, const ImageBatch& images);
Matrix reparameterize(const Matrix& mu, const Matrix& logvar, const Matrix& eta);
Matrix reparameterize(const Matrix& mu, const Matrix& logvar, Engine& engine);

struct ForwardResult {
  ImageBatch reconstruction;
  LatentBatch latents;
};
ForwardResult forward(const GcvamdModel& model, const ImageBatch& images, Engine& engine);

/// `labels` is N x 3 with raw severity in {0..3}.
LossComponents loss_components(const GcvamdModel& model, const ImageBatch& images, const Matrix& labels,
                               Engine& engine, bool scale_labels = true);

double total_loss(const LossComponents& components, const LossWeights& weights, const AugLagState& dual);

/// do(z_index = value) for every sample, then decode.
ImageBatch intervene(const GcvamdModel& model, const ImageBatch& images, int index, double value, Engine& engine);

/// One decoded image per value, for a single base image. The generator is
/// re-seeded with `seed` before each value.
ImageBatch traverse(const GcvamdModel& model, const ImageBatch& image, int index, const std::vector<double>& values,
                    std::uint64_t seed);

std::vector<double> default_traversal_values(int index);

// ---------------------------------------------------------------------------
// Lower-level pieces used by the trainer and by gradient tests. Matrices here
// are d x N (one sample per column).

struct ForwardCache {
  nn::StackCache encoder;
  Matrix mu;
  Matrix logvar;
  Matrix eta;
  Matrix sigma;
  Matrix eps;
  NoiseToLatentCache noise;
  CausalLayerCache causal;
  Matrix z_hat;
  nn::StackCache decoder;
  Matrix reconstruction;
};

ForwardCache run_forward(const GcvamdModel& model, const Matrix& images, const Matrix& eta);
/// Recomputes everything downstream of the encoder, reusing mu/logvar/eta.
void rerun_from_noise(const GcvamdModel& model, ForwardCache& cache);

/// `labels` is d x N as returned by prepare_labels.
LossComponents evaluate_components(const GcvamdModel& model, const ForwardCache& cache, const Matrix& images,
                                   const Matrix& labels);

/// Linear coefficients applied to each component's gradient.
struct ComponentCoefficients {
  double bce = 0.0;
  double eps_pen = 0.0;
  double h = 0.0;
  double l_z = 0.0;
  double l_u = 0.0;
  double l_zu = 0.0;
};

/// Coefficients of total_loss: the acyclicity term contributes (alpha + rho h) grad h.
ComponentCoefficients total_loss_coefficients(const LossWeights& weights, const AugLagState& dual, double h);

enum class GradientScope {
  kAll,
  kCausal,  // adjacency and causal layer only
  kRest,    // encoder, decoder and noise map only
};

/// Gradient of sum_k coeff_k * component_k, returned in a zero-initialized
/// model of the same architecture. Groups outside `scope` are left zero.
GcvamdModel loss_gradient(const GcvamdModel& model, const ForwardCache& cache, const Matrix& images,
                          const Matrix& labels, const ComponentCoefficients& coeffs, GradientScope scope);

/// Decodes a d x N latent matrix.
Matrix decode(const GcvamdModel& model, const Matrix& z_hat);

/// z_hat (d x N) after do(z_index = value).
Matrix intervened_latents(const GcvamdModel& model, const ForwardCache& cache, int index, double value);

/// Copy of `model` whose adjacency keeps only the edges of `support`.
GcvamdModel prune_adjacency(const GcvamdModel& model, const BinaryGraph& support);

}  // namespace gcvamd
