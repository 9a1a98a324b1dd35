#include "gcvamd/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gcvamd {

namespace {

constexpr double kProbabilityClamp = 1e-7;

std::string shape_text(const nn::Shape3& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

void check_images(const GcvamdModel& model, const ImageBatch& images) {
  if (!(images.shape == model.config().input))
    throw std::invalid_argument("image shape " + shape_text(images.shape) + " does not match model input " +
                                shape_text(model.config().input));
  if (images.count() == 0) throw std::invalid_argument("image batch is empty");
}

}  // namespace

ConvNetConfig ConvNetConfig::full() { return ConvNetConfig{}; }

ConvNetConfig ConvNetConfig::reduced() {
  ConvNetConfig config;
  config.input = {64, 64, 3};
  return config;
}

ConvNetConfig ConvNetConfig::gradient_check() {
  ConvNetConfig config;
  config.input = {16, 16, 1};
  config.convs = {{3, 3, 2}, {3, 3, 1}, {4, 3, 1}};
  config.encoder_dense = {8, 6};
  config.decoder_dense = {6, 8};
  return config;
}

ConvGeometry conv_geometry(const ConvNetConfig& config) {
  if (config.convs.empty()) throw std::invalid_argument("encoder needs at least one convolution");
  if (config.input.h <= 0 || config.input.w <= 0 || config.input.c <= 0)
    throw std::invalid_argument("input shape must be positive");
  ConvGeometry geometry;
  geometry.encoder.push_back(config.input);
  for (const ConvSpec& spec : config.convs) {
    const nn::Shape3 in = geometry.encoder.back();
    if (spec.filters <= 0 || spec.kernel <= 0 || spec.stride <= 0)
      throw std::invalid_argument("convolution specs must be positive");
    if (spec.kernel > in.h || spec.kernel > in.w)
      throw std::invalid_argument("kernel " + std::to_string(spec.kernel) + " does not fit feature map " +
                                  shape_text(in));
    geometry.encoder.push_back(
        {(in.h - spec.kernel) / spec.stride + 1, (in.w - spec.kernel) / spec.stride + 1, spec.filters});
  }
  geometry.decoder.push_back(geometry.encoder.back());
  for (std::size_t i = config.convs.size(); i-- > 0;) {
    const ConvSpec& spec = config.convs[i];
    const nn::Shape3 from = geometry.decoder.back();
    const nn::Shape3 target = geometry.encoder[i];
    const int pad_h = target.h - ((from.h - 1) * spec.stride + spec.kernel);
    const int pad_w = target.w - ((from.w - 1) * spec.stride + spec.kernel);
    if (pad_h != pad_w || pad_h < 0 || pad_h >= spec.stride)
      throw std::invalid_argument("transposed convolution cannot map " + shape_text(from) + " back to " +
                                  shape_text(target));
    geometry.output_padding.push_back(pad_h);
    geometry.decoder.push_back(target);
  }
  return geometry;
}

nn::Stack build_conv_encoder(const ConvNetConfig& config, int output_width, Engine& engine) {
  const ConvGeometry geometry = conv_geometry(config);
  nn::Stack stack;
  for (std::size_t i = 0; i < config.convs.size(); ++i) {
    const ConvSpec& spec = config.convs[i];
    stack.layers.emplace_back(nn::Conv2D(geometry.encoder[i], spec.filters, spec.kernel, spec.stride,
                                         nn::Activation::kSilu));
  }
  auto width = static_cast<int>(geometry.encoder.back().size());
  for (int hidden : config.encoder_dense) {
    stack.layers.emplace_back(nn::Dense(width, hidden, nn::Activation::kElu));
    width = hidden;
  }
  stack.layers.emplace_back(nn::Dense(width, output_width, nn::Activation::kLinear));
  stack.init_glorot(engine);
  return stack;
}

nn::Stack build_conv_decoder(const ConvNetConfig& config, int input_width, const std::vector<int>& decoder_dense,
                             Engine& engine) {
  const ConvGeometry geometry = conv_geometry(config);
  nn::Stack stack;
  int width = input_width;
  for (int hidden : decoder_dense) {
    stack.layers.emplace_back(nn::Dense(width, hidden, nn::Activation::kElu));
    width = hidden;
  }
  stack.layers.emplace_back(
      nn::Dense(width, static_cast<int>(geometry.decoder.front().size()), nn::Activation::kElu));
  const std::size_t count = config.convs.size();
  for (std::size_t step = 0; step < count; ++step) {
    const std::size_t conv_index = count - 1 - step;
    const ConvSpec& spec = config.convs[conv_index];
    const bool last = conv_index == 0;
    const int filters = last ? config.input.c : config.convs[conv_index - 1].filters;
    stack.layers.emplace_back(nn::ConvTranspose2D(geometry.decoder[step], filters, spec.kernel, spec.stride,
                                                  geometry.output_padding[step],
                                                  last ? nn::Activation::kSigmoid : nn::Activation::kSilu));
  }
  stack.init_glorot(engine);
  return stack;
}

void LossWeights::validate() const {
  if (!(omega >= 0.0 && beta >= 0.0 && gamma >= 0.0 && nu >= 0.0))
    throw std::invalid_argument("loss weights must be nonnegative");
}

GcvamdModel::GcvamdModel(ConvNetConfig config, int d, std::uint64_t seed, int hidden_multiplier)
    : adjacency(d), config_(std::move(config)), d_(d), hidden_multiplier_(hidden_multiplier) {
  if (d <= 0) throw std::invalid_argument("latent dimension must be positive");
  geometry_ = conv_geometry(config_);
  Engine engine(seed);
  encoder = build_conv_encoder(config_, 2 * d, engine);
  decoder = build_conv_decoder(config_, d, config_.decoder_dense, engine);
  noise_map = make_noise_to_latent(d, hidden_multiplier, engine);
  causal_layer = make_causal_layer(d, hidden_multiplier, engine);
}

std::vector<nn::ParamView> GcvamdModel::params() {
  std::vector<nn::ParamView> out;
  encoder.collect_params("encoder", nn::ParamGroup::kEncoder, out);
  decoder.collect_params("decoder", nn::ParamGroup::kDecoder, out);
  noise_map.f3.stack().collect_params("f3", nn::ParamGroup::kNoiseToLatent, out);
  noise_map.f4.stack().collect_params("f4", nn::ParamGroup::kNoiseToLatent, out);
  causal_layer.g1.stack().collect_params("g1", nn::ParamGroup::kCausalLayer, out);
  causal_layer.g2.stack().collect_params("g2", nn::ParamGroup::kCausalLayer, out);
  Matrix& w = adjacency.mutable_weights();
  out.push_back({"adjacency", w.data(), w.rows(), w.cols(), nn::ParamGroup::kAdjacency, true});
  return out;
}

GcvamdModel GcvamdModel::zeros_like() const {
  GcvamdModel copy = *this;
  copy.encoder = encoder.zeros_like();
  copy.decoder = decoder.zeros_like();
  copy.noise_map = {noise_map.f3.zeros_like(), noise_map.f4.zeros_like()};
  copy.causal_layer = {causal_layer.g1.zeros_like(), causal_layer.g2.zeros_like()};
  copy.adjacency = WeightedAdjacency(d_);
  return copy;
}

void GcvamdModel::enforce_constraints() {
  noise_map.f3.apply_masks();
  noise_map.f4.apply_masks();
  causal_layer.g1.apply_masks();
  causal_layer.g2.apply_masks();
  adjacency.pin_diagonal();
}

Matrix prepare_labels(const Matrix& labels, bool scale) {
  if (labels.cols() != 3) throw std::invalid_argument("labels must be N x 3 (u0, u1, u2)");
  Matrix u = labels.transpose();
  if (scale) u.row(2) /= 3.0;
  return u;
}

std::pair<Matrix, Matrix> encode(const GcvamdModel& model, const ImageBatch& images) {
  check_images(model, images);
  const Matrix out = model.encoder.forward(images.data);
  const int d = model.d();
  return {out.topRows(d).transpose(), out.bottomRows(d).transpose()};
}

Matrix reparameterize(const Matrix& mu, const Matrix& logvar, const Matrix& eta) {
  if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols() || mu.rows() != eta.rows() ||
      mu.cols() != eta.cols())
    throw std::invalid_argument("reparameterize shape mismatch");
  return mu + ((0.5 * logvar.array()).exp() * eta.array()).matrix();
}

Matrix reparameterize(const Matrix& mu, const Matrix& logvar, Engine& engine) {
  return reparameterize(mu, logvar, standard_normal(mu.rows(), mu.cols(), engine));
}

ForwardCache run_forward(const GcvamdModel& model, const Matrix& images, const Matrix& eta) {
  const int d = model.d();
  if (eta.rows() != d || eta.cols() != images.cols()) throw std::invalid_argument("noise draw shape mismatch");
  ForwardCache cache;
  const Matrix encoded = model.encoder.forward(images, &cache.encoder);
  cache.mu = encoded.topRows(d);
  cache.logvar = encoded.bottomRows(d);
  cache.eta = eta;
  rerun_from_noise(model, cache);
  return cache;
}

void rerun_from_noise(const GcvamdModel& model, ForwardCache& cache) {
  cache.sigma = (0.5 * cache.logvar.array()).exp().matrix();
  cache.eps = cache.mu + cache.sigma.cwiseProduct(cache.eta);
  const Matrix z = noise_to_latent(model.noise_map, model.adjacency, cache.eps, &cache.noise);
  cache.z_hat = causal_reconstruct(model.causal_layer, model.adjacency, z, &cache.causal) + cache.eps;
  cache.reconstruction = model.decoder.forward(cache.z_hat, &cache.decoder);
}

ForwardResult forward(const GcvamdModel& model, const ImageBatch& images, Engine& engine) {
  check_images(model, images);
  const Matrix eta = standard_normal(model.d(), images.count(), engine);
  const ForwardCache cache = run_forward(model, images.data, eta);
  ForwardResult result;
  result.reconstruction = ImageBatch(images.shape, cache.reconstruction);
  result.latents = {cache.mu.transpose(), cache.logvar.transpose(), cache.eps.transpose(),
                    cache.noise.z.transpose(), cache.z_hat.transpose()};
  return result;
}

LossComponents evaluate_components(const GcvamdModel& model, const ForwardCache& cache, const Matrix& images,
                                   const Matrix& labels) {
  const auto n = static_cast<double>(images.cols());
  const auto pixels = static_cast<double>(images.rows());
  const Matrix& z = cache.noise.z;
  LossComponents c;
  const auto p = cache.reconstruction.array().min(1.0 - kProbabilityClamp).max(kProbabilityClamp);
  c.bce = -(images.array() * p.log() + (1.0 - images.array()) * (1.0 - p).log()).sum() / (n * pixels);
  c.eps_pen = 0.5 * cache.eps.squaredNorm() / n;
  c.h = acyclicity_h(model.adjacency);
  c.l_z = (z - cache.causal.output).squaredNorm() / n;
  c.l_u = (labels - model.adjacency.weights().transpose() * labels).squaredNorm() / n;
  c.l_zu = (z - labels).squaredNorm() / (n * model.d());
  return c;
}

LossComponents loss_components(const GcvamdModel& model, const ImageBatch& images, const Matrix& labels,
                               Engine& engine, bool scale_labels) {
  check_images(model, images);
  if (labels.rows() != images.count() || labels.cols() != 3)
    throw std::invalid_argument("labels must be N x 3 with N matching the image batch");
  const Matrix u = prepare_labels(labels, scale_labels);
  const Matrix eta = standard_normal(model.d(), images.count(), engine);
  return evaluate_components(model, run_forward(model, images.data, eta), images.data, u);
}

double total_loss(const LossComponents& c, const LossWeights& w, const AugLagState& dual) {
  return w.omega * c.bce + c.eps_pen + dual.alpha * c.h + 0.5 * dual.rho * c.h * c.h + w.beta * c.l_z +
         w.gamma * c.l_u + w.nu * c.l_zu;
}

ComponentCoefficients total_loss_coefficients(const LossWeights& w, const AugLagState& dual, double h) {
  return {w.omega, 1.0, dual.alpha + dual.rho * h, w.beta, w.gamma, w.nu};
}

GcvamdModel loss_gradient(const GcvamdModel& model, const ForwardCache& cache, const Matrix& images,
                          const Matrix& labels, const ComponentCoefficients& coeffs, GradientScope scope) {
  GcvamdModel grad = model.zeros_like();
  const auto n = static_cast<double>(images.cols());
  const auto pixels = static_cast<double>(images.rows());
  const bool causal = scope != GradientScope::kRest;
  const bool rest = scope != GradientScope::kCausal;
  const Matrix& z = cache.noise.z;
  const WeightedAdjacency& a = model.adjacency;

  // Reconstruction: d/dp of clamped BCE. Clamped probabilities have zero slope.
  const double bce_scale = coeffs.bce / (n * pixels);
  const Matrix drecon = cache.reconstruction.binaryExpr(images, [&](double p, double x) {
    if (p < kProbabilityClamp || p > 1.0 - kProbabilityClamp) return 0.0;
    return bce_scale * (p - x) / (p * (1.0 - p));
  });
  const Matrix dz_hat = model.decoder.backward(drecon, cache.decoder, rest ? &grad.decoder : nullptr, true);

  // z_hat = g2(A^T g1(z)) + eps, and l_z compares z with g2(A^T g1(z)).
  const Matrix residual = z - cache.causal.output;
  const Matrix dcausal_out = dz_hat - (2.0 * coeffs.l_z / n) * residual;
  Matrix dadj = Matrix::Zero(model.d(), model.d());
  Matrix dz = causal_reconstruct_backward(model.causal_layer, a, cache.causal, dcausal_out,
                                          causal ? &grad.causal_layer : nullptr, &dadj);
  dz += (2.0 * coeffs.l_z / n) * residual;
  dz += (2.0 * coeffs.l_zu / (n * model.d())) * (z - labels);

  Matrix deps = dz_hat;
  const Matrix deps_noise =
      noise_to_latent_backward(model.noise_map, a, cache.noise, dz, rest ? &grad.noise_map : nullptr, &dadj, rest);

  if (causal) {
    const Matrix label_residual = labels - a.weights().transpose() * labels;
    dadj += (-2.0 * coeffs.l_u / n) * labels * label_residual.transpose();
    if (coeffs.h != 0.0) dadj += coeffs.h * acyclicity_grad(a);
    dadj.diagonal().setZero();
    grad.adjacency.mutable_weights() = dadj;
  }

  if (rest) {
    deps += deps_noise;
    deps += (coeffs.eps_pen / n) * cache.eps;
    Matrix dencoded(2 * model.d(), images.cols());
    dencoded.topRows(model.d()) = deps;
    dencoded.bottomRows(model.d()) = 0.5 * deps.cwiseProduct(cache.eta).cwiseProduct(cache.sigma);
    model.encoder.backward(dencoded, cache.encoder, &grad.encoder, false);
  }
  return grad;
}

Matrix decode(const GcvamdModel& model, const Matrix& z_hat) { return model.decoder.forward(z_hat); }

Matrix intervened_latents(const GcvamdModel& model, const ForwardCache& cache, int index, double value) {
  if (index < 0 || index >= model.d()) throw std::invalid_argument("intervention index out of range");
  Matrix z = cache.noise.z;
  z.row(index).setConstant(value);
  Matrix z_hat = causal_reconstruct(model.causal_layer, model.adjacency, z) + cache.eps;
  z_hat.row(index).setConstant(value);
  return z_hat;
}

ImageBatch intervene(const GcvamdModel& model, const ImageBatch& images, int index, double value, Engine& engine) {
  if (index < 0 || index >= model.d()) throw std::invalid_argument("intervention index out of range");
  check_images(model, images);
  const Matrix eta = standard_normal(model.d(), images.count(), engine);
  const ForwardCache cache = run_forward(model, images.data, eta);
  return ImageBatch(images.shape, decode(model, intervened_latents(model, cache, index, value)));
}

ImageBatch traverse(const GcvamdModel& model, const ImageBatch& image, int index, const std::vector<double>& values,
                    std::uint64_t seed) {
  if (values.empty()) throw std::invalid_argument("traversal needs at least one value");
  if (image.count() != 1) throw std::invalid_argument("traversal takes a single base image");
  ImageBatch out(image.shape, static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    Engine engine(seed);
    out.data.col(static_cast<Eigen::Index>(i)) = intervene(model, image, index, values[i], engine).data.col(0);
  }
  return out;
}

std::vector<double> default_traversal_values(int index) {
  switch (index) {
    case 0: return {-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2};
    case 1: return {-0.1, -0.05, -0.025, 0.0, 0.025, 0.05, 0.15};
    case 2: return {-0.1, -0.05, 0.0, 0.05, 0.1, 0.2, 0.3};
    default: throw std::invalid_argument("no default traversal set for index " + std::to_string(index));
  }
}

GcvamdModel prune_adjacency(const GcvamdModel& model, const BinaryGraph& support) {
  if (support.d() != model.d()) throw std::invalid_argument("support graph size mismatch");
  GcvamdModel pruned = model;
  Matrix& w = pruned.adjacency.mutable_weights();
  for (int i = 0; i < model.d(); ++i)
    for (int j = 0; j < model.d(); ++j)
      if (!support.has_edge(i, j)) w(i, j) = 0.0;
  return pruned;
}

}  // namespace gcvamd
