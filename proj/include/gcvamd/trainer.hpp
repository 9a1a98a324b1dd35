#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "gcvamd/causal_graph.hpp"
#include "gcvamd/checkpoint.hpp"
#include "gcvamd/image.hpp"
#include "gcvamd/model.hpp"

namespace gcvamd {

struct PhaseConfig {
  int epochs = 0;
  LossWeights l1_weights;
  LossWeights l2_weights;
  double lr_adjacency = 2e-2;
  double lr_gae = 3e-3;
  double lr_rest = 2e-3;

  /// Epochs may be zero here (an empty phase); learning rates must be >= 0.
  void validate() const;
};

std::pair<PhaseConfig, PhaseConfig> default_schedule();

/// One epoch. Loss values are measured on the epoch's forward pass before any
/// update; h, alpha and rho are the values after the dual update.
struct StepRecord {
  int epoch = 0;  // 1-based, counted across phases
  double l1 = 0.0;
  double l2 = 0.0;
  double bce_eps = 0.0;
  double bce = 0.0;
  double l_z = 0.0;
  double l_u = 0.0;
  double l_zu = 0.0;
  double h = 0.0;
  double alpha = 0.0;
  double rho = 0.0;
};

using TrainHistory = std::vector<StepRecord>;

inline constexpr double kDivergenceLimit = 1e6;

/// One full-batch step: the adjacency and causal layer move along the
/// gradient of the second loss, then the remaining weights along the gradient
/// of the first loss evaluated after that update, then masks, diagonal and
/// dual state are refreshed. `labels` is d x N (see prepare_labels).
/// Throws TrainingDivergence on non-finite or oversized losses or gradients.
StepRecord train_step(GcvamdModel& model, const Matrix& images, const Matrix& labels, const PhaseConfig& phase,
                      AugLagState& dual, const Matrix& eta);
StepRecord train_step(GcvamdModel& model, const ImageBatch& images, const Matrix& labels, const PhaseConfig& phase,
                      AugLagState& dual, Engine& engine);

/// Position of the next epoch to run.
struct TrainCursor {
  int phase = 0;
  int epoch = 0;
};

struct TrainState {
  std::uint64_t seed = 0;  // root of the per-epoch noise stream
  AugLagState dual;
  TrainCursor cursor;
  TrainHistory history;
};

struct TrainOptions {
  bool scale_labels = true;
  /// Stop after this many epochs in this call (negative: run to the end).
  int max_epochs = -1;
  std::function<void(const StepRecord&)> on_epoch;
};

/// Runs the phases from `state.cursor` onward. The epoch-e noise draw depends
/// only on (state.seed, e), so a resumed run matches an uninterrupted one.
/// `labels` is N x 3 with raw severity.
void train_gcvamd(GcvamdModel& model, const ImageBatch& images, const Matrix& labels,
                  const std::vector<PhaseConfig>& phases, TrainState& state, const TrainOptions& options = {});

void write_history_csv(const TrainHistory& history, std::ostream& out);
void write_history_csv(const TrainHistory& history, const std::string& path);

/// Model weights, architecture, training state and history in one container.
Checkpoint make_model_checkpoint(GcvamdModel& model, const TrainState& state);
struct LoadedModel {
  GcvamdModel model;
  TrainState state;
};
LoadedModel restore_model_checkpoint(const Checkpoint& checkpoint);

void save_model(GcvamdModel& model, const TrainState& state, const std::string& path);
LoadedModel load_model(const std::string& path);

struct TabularGaeConfig {
  double lambda = 0.01;
  AugLagState dual;
  int epochs = 2000;
  double lr = 0.05;
  int hidden_multiplier = 4;
  int dual_every = 100;   // gradient epochs between dual updates
  double weight_decay = 0.0;  // L2 on g1/g2 weights; pins the scale traded between A and g1
  int max_halvings = 30;  // step halvings tried before an epoch leaves the weights unchanged
  int restarts = 1;       // independent initializations; the best acyclic fit is kept
  double restart_h_tolerance = 1e-5;  // runs above this h count as cyclic
  std::uint64_t seed = 0;
};

struct TabularRecord {
  int epoch = 0;
  double reconstruction = 0.0;
  double l1 = 0.0;
  double h = 0.0;
  double alpha = 0.0;
  double rho = 0.0;
};

struct TabularResult {
  WeightedAdjacency adjacency;
  CausalLayerGAE layer;
  std::vector<TabularRecord> history;
};

/// Fits a causal layer and adjacency to n x d data by minimizing
/// (1/n) sum ||x - g2(A^T g1(x))||^2 + lambda ||A||_1 + alpha h + rho/2 h^2.
/// The smooth part takes a gradient step and the L1 part a soft-threshold step;
/// the step starts at lr and is halved until the objective does not increase.
/// With several restarts the acyclic run with the lowest final fit is returned.
TabularResult train_gae_tabular(const Matrix& data, const TabularGaeConfig& config);

}  // namespace gcvamd
