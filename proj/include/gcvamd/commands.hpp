#pragma once

#include <string>
#include <vector>

#include "gcvamd/config.hpp"

namespace gcvamd {

// Each command writes its artifacts into config.out, echoes the effective
// configuration there as effective_config.ini, and writes manifest.json last.

void cmd_synth(const RunConfig& config);

struct TrainCommandOptions {
  std::string data;  // bundle cache; empty means build from the dataset section
  bool resume = false;
  int stop_after = -1;  // epochs to run in this invocation; negative runs to the end
};
void cmd_train(const RunConfig& config, const TrainCommandOptions& options);

void cmd_eval_graph(const RunConfig& config, const std::string& checkpoint);

struct DisentangleCommandOptions {
  std::string checkpoint;
  std::string data;
  std::string relevance_csv;  // precomputed relevance (or normalized) matrix; skips the lasso fits
};
void cmd_disentangle(const RunConfig& config, const DisentangleCommandOptions& options);

struct GenerateCommandOptions {
  std::string checkpoint;
  std::string data;
  int index = 0;
  std::vector<double> values;  // traversal values; empty uses the configured set
  double value = 0.0;          // intervention value
  int rows = 3;                // base images
};
void cmd_traverse(const RunConfig& config, const GenerateCommandOptions& options);
void cmd_intervene(const RunConfig& config, const GenerateCommandOptions& options);

struct DownstreamCommandOptions {
  std::string checkpoint;
  bool skip_gcvamd = false;
};
void cmd_downstream(const RunConfig& config, const DownstreamCommandOptions& options);

/// Numeric CSV without header, one row per line.
Matrix read_numeric_csv(const std::string& path);

}  // namespace gcvamd
