#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "gcvamd/dataio.hpp"
#include "gcvamd/model.hpp"
#include "gcvamd/trainer.hpp"

namespace gcvamd {

struct DatasetSection {
  std::string kind = "synthetic";  // or "octdl"
  std::string root;
  std::string manifest;
  DatasetMapping mapping;
  SynthConfig synth;
};

struct ModelSection {
  std::string geometry = "reduced";  // or "full"
  int hidden_multiplier = 4;
  bool scale_labels = true;

  ConvNetConfig net() const;
};

struct EvaluationSection {
  std::string truth_graph;
  double fraction = 0.2;
  std::vector<double> lasso_alphas{0.1, 0.1, 0.01};
  std::array<std::vector<double>, 3> traversal{default_traversal_values(0), default_traversal_values(1),
                                               default_traversal_values(2)};
};

struct DownstreamSection {
  int ae_epochs = 300;
  int dnn_epochs = 400;
  int train_per_class = 150;
  int synthetic_n = 1000;
};

/// Everything a command needs besides its own flags. Sections mirror the INI
/// file: top-level `seed` and `out`, then [dataset], [dataset.value_maps.<field>],
/// [model], [schedule], [evaluation] and [downstream].
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  DatasetSection dataset;
  ModelSection model;
  PhaseConfig phase1 = default_schedule().first;
  PhaseConfig phase2 = default_schedule().second;
  EvaluationSection evaluation;
  DownstreamSection downstream;
};

/// Defaults overlaid with the keys present in the file. Unknown sections or
/// keys and unparsable values raise ConfigError.
RunConfig load_run_config(const std::string& path);
void write_run_config(const RunConfig& config, std::ostream& out);

std::vector<double> parse_double_list(const std::string& text);

}  // namespace gcvamd
