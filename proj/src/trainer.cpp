#include "gcvamd/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "gcvamd/errors.hpp"
#include "gcvamd/optim.hpp"

namespace gcvamd {

namespace {

constexpr int kHistoryColumns = 11;

void guard(const std::string& name, double value) {
  if (!std::isfinite(value)) throw TrainingDivergence(name, "value is not finite");
  if (std::abs(value) > kDivergenceLimit) throw TrainingDivergence(name, "value exceeds divergence limit");
}

void guard(const LossComponents& c) {
  guard("bce", c.bce);
  guard("eps_pen", c.eps_pen);
  guard("h", c.h);
  guard("l_z", c.l_z);
  guard("l_u", c.l_u);
  guard("l_zu", c.l_zu);
}

void guard_gradients(const std::vector<nn::ParamView>& grads) {
  for (const auto& g : grads)
    if (!g.map().allFinite()) throw TrainingDivergence(g.name, "gradient is not finite");
}

bool in_causal_group(const nn::ParamView& p) {
  return p.group == nn::ParamGroup::kAdjacency || p.group == nn::ParamGroup::kCausalLayer;
}

std::vector<double> history_row(const StepRecord& r) {
  return {static_cast<double>(r.epoch), r.l1, r.l2, r.bce_eps, r.bce, r.l_z, r.l_u, r.l_zu, r.h, r.alpha, r.rho};
}

StepRecord history_record(const Matrix& m, Eigen::Index row) {
  StepRecord r;
  r.epoch = static_cast<int>(m(row, 0));
  r.l1 = m(row, 1);
  r.l2 = m(row, 2);
  r.bce_eps = m(row, 3);
  r.bce = m(row, 4);
  r.l_z = m(row, 5);
  r.l_u = m(row, 6);
  r.l_zu = m(row, 7);
  r.h = m(row, 8);
  r.alpha = m(row, 9);
  r.rho = m(row, 10);
  return r;
}

}  // namespace

void PhaseConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("phase epochs must be nonnegative");
  if (!(lr_adjacency >= 0.0 && lr_gae >= 0.0 && lr_rest >= 0.0))
    throw std::invalid_argument("learning rates must be nonnegative");
  l1_weights.validate();
  l2_weights.validate();
}

std::pair<PhaseConfig, PhaseConfig> default_schedule() {
  PhaseConfig first;
  first.epochs = 150;
  first.l1_weights = {1.0, 0.3, 0.3, 0.1};
  first.l2_weights = {0.3, 2.0, 0.5, 0.1};
  first.lr_adjacency = 2e-2;
  first.lr_gae = 3e-3;
  first.lr_rest = 2e-3;
  PhaseConfig second = first;
  second.epochs = 100;
  second.l2_weights.nu = 0.3;
  second.lr_adjacency = 4e-2;
  return {first, second};
}

StepRecord train_step(GcvamdModel& model, const Matrix& images, const Matrix& labels, const PhaseConfig& phase,
                      AugLagState& dual, const Matrix& eta) {
  phase.validate();
  if (images.cols() == 0) throw std::invalid_argument("training batch is empty");
  if (labels.rows() != model.d() || labels.cols() != images.cols())
    throw std::invalid_argument("labels must be d x N with N matching the image batch");

  ForwardCache cache = run_forward(model, images, eta);
  const LossComponents c = evaluate_components(model, cache, images, labels);
  guard(c);

  StepRecord record;
  record.l1 = total_loss(c, phase.l1_weights, dual);
  record.l2 = total_loss(c, phase.l2_weights, dual);
  record.bce = c.bce;
  record.bce_eps = c.bce + c.eps_pen;
  record.l_z = c.l_z;
  record.l_u = c.l_u;
  record.l_zu = c.l_zu;
  guard("L1", record.l1);
  guard("L2", record.l2);

  // Adjacency and causal layer first.
  {
    GcvamdModel grad = loss_gradient(model, cache, images, labels,
                                     total_loss_coefficients(phase.l2_weights, dual, c.h), GradientScope::kCausal);
    const auto grads = grad.params();
    guard_gradients(grads);
    sgd_step(model.params(), grads, [&](const nn::ParamView& p) {
      if (p.group == nn::ParamGroup::kAdjacency) return phase.lr_adjacency;
      if (p.group == nn::ParamGroup::kCausalLayer) return phase.lr_gae;
      return 0.0;
    });
    model.enforce_constraints();
  }

  // Remaining weights, from the same noise draw through the updated layer.
  {
    rerun_from_noise(model, cache);
    const double h = acyclicity_h(model.adjacency);
    GcvamdModel grad = loss_gradient(model, cache, images, labels,
                                     total_loss_coefficients(phase.l1_weights, dual, h), GradientScope::kRest);
    const auto grads = grad.params();
    guard_gradients(grads);
    sgd_step(model.params(), grads,
             [&](const nn::ParamView& p) { return in_causal_group(p) ? 0.0 : phase.lr_rest; });
    model.enforce_constraints();
  }

  const double h_new = acyclicity_h(model.adjacency);
  guard("h", h_new);
  dual = auglag_update(dual, h_new);
  record.h = h_new;
  record.alpha = dual.alpha;
  record.rho = dual.rho;
  return record;
}

StepRecord train_step(GcvamdModel& model, const ImageBatch& images, const Matrix& labels, const PhaseConfig& phase,
                      AugLagState& dual, Engine& engine) {
  if (!(images.shape == model.config().input)) throw std::invalid_argument("image shape does not match the model");
  const Matrix eta = standard_normal(model.d(), images.count(), engine);
  return train_step(model, images.data, labels, phase, dual, eta);
}

void train_gcvamd(GcvamdModel& model, const ImageBatch& images, const Matrix& labels,
                  const std::vector<PhaseConfig>& phases, TrainState& state, const TrainOptions& options) {
  if (images.count() == 0) throw std::invalid_argument("training set is empty");
  if (!(images.shape == model.config().input)) throw std::invalid_argument("image shape does not match the model");
  if (labels.rows() != images.count()) throw std::invalid_argument("label count does not match image count");
  for (const auto& p : phases) p.validate();
  state.dual.validate();
  const Matrix u = prepare_labels(labels, options.scale_labels);

  int run = 0;
  while (state.cursor.phase < static_cast<int>(phases.size())) {
    const PhaseConfig& phase = phases[static_cast<std::size_t>(state.cursor.phase)];
    if (state.cursor.epoch >= phase.epochs) {
      ++state.cursor.phase;
      state.cursor.epoch = 0;
      continue;
    }
    if (options.max_epochs >= 0 && run >= options.max_epochs) return;
    const auto global_epoch = static_cast<std::uint64_t>(state.history.size());
    Engine engine(derive_seed(state.seed, Stream::kReparameterization, global_epoch));
    const Matrix eta = standard_normal(model.d(), images.count(), engine);
    StepRecord record = train_step(model, images.data, u, phase, state.dual, eta);
    record.epoch = static_cast<int>(global_epoch) + 1;
    state.history.push_back(record);
    ++state.cursor.epoch;
    ++run;
    if (options.on_epoch) options.on_epoch(record);
  }
}

void write_history_csv(const TrainHistory& history, std::ostream& out) {
  out << "epoch,L1,L2,bce_eps,l_z,l_u,l_zu,h,alpha,rho\n";
  out << std::setprecision(17);
  for (const auto& r : history)
    out << r.epoch << ',' << r.l1 << ',' << r.l2 << ',' << r.bce_eps << ',' << r.l_z << ',' << r.l_u << ','
        << r.l_zu << ',' << r.h << ',' << r.alpha << ',' << r.rho << '\n';
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_history_csv(history, out);
}

Checkpoint make_model_checkpoint(GcvamdModel& model, const TrainState& state) {
  Checkpoint checkpoint;
  const ConvNetConfig& config = model.config();
  Matrix input(1, 3);
  input << config.input.h, config.input.w, config.input.c;
  Matrix convs(static_cast<Eigen::Index>(config.convs.size()), 3);
  for (std::size_t i = 0; i < config.convs.size(); ++i)
    convs.row(static_cast<Eigen::Index>(i)) << config.convs[i].filters, config.convs[i].kernel,
        config.convs[i].stride;
  auto widths = [](const std::vector<int>& v) {
    Matrix m(1, static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
    return m;
  };
  Matrix latent(1, 2);
  latent << model.d(), model.hidden_multiplier();
  checkpoint.arrays.push_back(ArrayRecord::from_matrix("config/input", input));
  checkpoint.arrays.push_back(ArrayRecord::from_matrix("config/convs", convs));
  checkpoint.arrays.push_back(ArrayRecord::from_matrix("config/encoder_dense", widths(config.encoder_dense)));
  checkpoint.arrays.push_back(ArrayRecord::from_matrix("config/decoder_dense", widths(config.decoder_dense)));
  checkpoint.arrays.push_back(ArrayRecord::from_matrix("config/latent", latent));
  Matrix history(static_cast<Eigen::Index>(state.history.size()), kHistoryColumns);
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const auto row = history_row(state.history[i]);
    for (int k = 0; k < kHistoryColumns; ++k) history(static_cast<Eigen::Index>(i), k) = row[static_cast<std::size_t>(k)];
  }
  checkpoint.arrays.push_back(ArrayRecord::from_matrix("history", history));
  append_params(checkpoint, model.params());
  checkpoint.footer = {state.seed, static_cast<std::uint32_t>(state.cursor.phase),
                       static_cast<std::uint32_t>(state.cursor.epoch), state.dual};
  return checkpoint;
}

LoadedModel restore_model_checkpoint(const Checkpoint& checkpoint) {
  auto ints = [&](const std::string& name) {
    const Matrix m = checkpoint.require(name).to_matrix();
    std::vector<int> out;
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(static_cast<int>(m.data()[i]));
    return out;
  };
  ConvNetConfig config;
  const auto input = ints("config/input");
  if (input.size() != 3) throw CheckpointFormatError("config/input must hold three values");
  config.input = {input[0], input[1], input[2]};
  const Matrix convs = checkpoint.require("config/convs").to_matrix();
  if (convs.cols() != 3 && convs.size() != 0) throw CheckpointFormatError("config/convs must be k x 3");
  config.convs.clear();
  for (Eigen::Index i = 0; i < convs.rows(); ++i)
    config.convs.push_back(
        {static_cast<int>(convs(i, 0)), static_cast<int>(convs(i, 1)), static_cast<int>(convs(i, 2))});
  config.encoder_dense = ints("config/encoder_dense");
  config.decoder_dense = ints("config/decoder_dense");
  const auto latent = ints("config/latent");
  if (latent.size() != 2) throw CheckpointFormatError("config/latent must hold two values");

  LoadedModel loaded{GcvamdModel(config, latent[0], 0, latent[1]), TrainState{}};
  restore_params(checkpoint, loaded.model.params(),
                 {"config/input", "config/convs", "config/encoder_dense", "config/decoder_dense", "config/latent",
                  "history"});
  const Matrix history = checkpoint.require("history").to_matrix();
  if (history.rows() > 0 && history.cols() != kHistoryColumns)
    throw CheckpointFormatError("history array has the wrong width");
  for (Eigen::Index i = 0; i < history.rows(); ++i) loaded.state.history.push_back(history_record(history, i));
  loaded.state.seed = checkpoint.footer.seed;
  loaded.state.cursor = {static_cast<int>(checkpoint.footer.phase), static_cast<int>(checkpoint.footer.epoch)};
  loaded.state.dual = checkpoint.footer.dual;
  return loaded;
}

void save_model(GcvamdModel& model, const TrainState& state, const std::string& path) {
  save_checkpoint(make_model_checkpoint(model, state), path);
}

LoadedModel load_model(const std::string& path) { return restore_model_checkpoint(load_checkpoint(path)); }

namespace {

double soft_threshold(double v, double t) { return std::copysign(std::max(std::abs(v) - t, 0.0), v); }

struct TabularObjective {
  double reconstruction = 0.0;
  double total = 0.0;
};

bool is_weight(const nn::ParamView& p) { return p.name.size() >= 6 && p.name.compare(p.name.size() - 6, 6, "weight") == 0; }

std::vector<nn::ParamView> layer_params(CausalLayerGAE& layer) {
  std::vector<nn::ParamView> out;
  layer.g1.stack().collect_params("g1", nn::ParamGroup::kCausalLayer, out);
  layer.g2.stack().collect_params("g2", nn::ParamGroup::kCausalLayer, out);
  return out;
}

double weight_norm2(CausalLayerGAE& layer) {
  double sum = 0.0;
  for (const auto& p : layer_params(layer))
    if (is_weight(p)) sum += p.map().squaredNorm();
  return sum;
}

TabularObjective tabular_objective(CausalLayerGAE& layer, const WeightedAdjacency& a, const Matrix& x,
                                   const TabularGaeConfig& config, const AugLagState& dual) {
  const double rec = (causal_reconstruct(layer, a, x) - x).squaredNorm() / static_cast<double>(x.cols());
  const double h = acyclicity_h(a);
  const double total = rec + config.lambda * a.weights().cwiseAbs().sum() + 0.5 * config.weight_decay * weight_norm2(layer) +
                       dual.alpha * h + 0.5 * dual.rho * h * h;
  return {rec, std::isfinite(total) ? total : std::numeric_limits<double>::infinity()};
}

}  // namespace

namespace {

TabularResult train_gae_tabular_once(const Matrix& data, const TabularGaeConfig& config, std::uint64_t seed) {
  const auto n = data.rows();
  const auto d = static_cast<int>(data.cols());
  Engine engine(seed);
  TabularResult result{WeightedAdjacency(d), make_causal_layer(d, config.hidden_multiplier, engine), {}};
  AugLagState dual = config.dual;
  const Matrix x = data.transpose();
  const double nd = static_cast<double>(n);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    CausalLayerCache cache;
    const Matrix residual = causal_reconstruct(result.layer, result.adjacency, x, &cache) - x;
    const double reconstruction = residual.squaredNorm() / nd;
    guard("reconstruction", reconstruction);
    const TabularObjective current = tabular_objective(result.layer, result.adjacency, x, config, dual);

    CausalLayerGAE grad{result.layer.g1.zeros_like(), result.layer.g2.zeros_like()};
    Matrix dadj = Matrix::Zero(d, d);
    causal_reconstruct_backward(result.layer, result.adjacency, cache, (2.0 / nd) * residual, &grad, &dadj);
    const double h = acyclicity_h(result.adjacency);
    dadj += (dual.alpha + dual.rho * h) * acyclicity_grad(result.adjacency);
    if (!dadj.allFinite()) throw TrainingDivergence("adjacency", "gradient is not finite");
    const auto grads = layer_params(grad);
    const auto current_params = layer_params(result.layer);
    for (std::size_t i = 0; i < grads.size(); ++i)
      if (is_weight(grads[i])) grads[i].map() += config.weight_decay * current_params[i].map();
    guard_gradients(grads);

    // Gradient step on the smooth part, soft-threshold for the L1 part, and
    // the step halved until the objective does not increase.
    double step = config.lr;
    for (int attempt = 0; attempt <= config.max_halvings; ++attempt, step *= 0.5) {
      CausalLayerGAE layer = result.layer;
      sgd_step(layer_params(layer), grads, [step](const nn::ParamView&) { return step; });
      layer.g1.apply_masks();
      layer.g2.apply_masks();
      WeightedAdjacency adjacency = result.adjacency;
      Matrix& w = adjacency.mutable_weights();
      const double shrink = step * config.lambda;
      w -= step * dadj;
      w = w.unaryExpr([shrink](double v) { return soft_threshold(v, shrink); });
      adjacency.pin_diagonal();
      if (tabular_objective(layer, adjacency, x, config, dual).total <= current.total) {
        result.layer = std::move(layer);
        result.adjacency = std::move(adjacency);
        break;
      }
    }

    const double h_new = acyclicity_h(result.adjacency);
    guard("h", h_new);
    if ((epoch + 1) % config.dual_every == 0) dual = auglag_update(dual, h_new);
    result.history.push_back({epoch + 1, reconstruction, config.lambda * result.adjacency.weights().cwiseAbs().sum(),
                              h_new, dual.alpha, dual.rho});
  }
  return result;
}

}  // namespace

TabularResult train_gae_tabular(const Matrix& data, const TabularGaeConfig& config) {
  const auto n = data.rows();
  const auto d = data.cols();
  if (d < 1 || n < d) throw std::invalid_argument("tabular data needs n >= d >= 1");
  if (!data.allFinite()) throw std::invalid_argument("tabular data must be finite");
  if (config.epochs < 0 || !(config.lr > 0.0) || !(config.lambda >= 0.0) || config.dual_every < 1 ||
      config.max_halvings < 0 || !(config.weight_decay >= 0.0) || config.restarts < 1 ||
      !(config.restart_h_tolerance >= 0.0))
    throw std::invalid_argument("invalid tabular GAE configuration");
  config.dual.validate();

  // Restarts are ranked by (h above tolerance, reconstruction + L1), lowest first.
  auto score = [&](const TabularResult& r) {
    const double h = acyclicity_h(r.adjacency);
    const double fit = r.history.empty() ? 0.0 : r.history.back().reconstruction + r.history.back().l1;
    return std::pair{h > config.restart_h_tolerance ? h : 0.0, fit};
  };
  TabularResult best = train_gae_tabular_once(data, config, config.seed);
  auto best_score = score(best);
  for (int r = 1; r < config.restarts; ++r) {
    TabularResult candidate = train_gae_tabular_once(data, config, derive_seed(config.seed, Stream::kInit, r));
    const auto candidate_score = score(candidate);
    if (candidate_score < best_score) {
      best = std::move(candidate);
      best_score = candidate_score;
    }
  }
  return best;
}

}  // namespace gcvamd
