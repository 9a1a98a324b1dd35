#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gcvamd/commands.hpp"
#include "gcvamd/errors.hpp"

namespace {

// Exit codes.
constexpr int kFailure = 1;
constexpr int kBadConfig = 2;
constexpr int kDiverged = 3;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct Overrides {
  std::optional<int> n;
  std::optional<int> phase1_epochs;
  std::optional<int> phase2_epochs;
  std::optional<double> fraction;
  std::string truth_graph;
  std::string lasso_alphas;
  std::optional<int> ae_epochs;
  std::optional<int> dnn_epochs;
};

gcvamd::RunConfig resolve(const GlobalFlags& g, const Overrides& o) {
  gcvamd::RunConfig config = g.config.empty() ? gcvamd::RunConfig{} : gcvamd::load_run_config(g.config);
  if (g.seed) config.seed = *g.seed;
  if (!g.out.empty()) config.out = g.out;
  if (o.n) config.dataset.synth.n = *o.n;
  if (o.phase1_epochs) config.phase1.epochs = *o.phase1_epochs;
  if (o.phase2_epochs) config.phase2.epochs = *o.phase2_epochs;
  if (o.fraction) config.evaluation.fraction = *o.fraction;
  if (!o.truth_graph.empty()) config.evaluation.truth_graph = o.truth_graph;
  if (!o.lasso_alphas.empty()) {
    config.evaluation.lasso_alphas = gcvamd::parse_double_list(o.lasso_alphas);
    if (config.evaluation.lasso_alphas.size() != 3) throw gcvamd::ConfigError("--alphas needs three values");
  }
  if (o.ae_epochs) config.downstream.ae_epochs = *o.ae_epochs;
  if (o.dnn_epochs) config.downstream.dnn_epochs = *o.dnn_epochs;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GCVAMD: causal VAE with a graph-autoencoder causal layer"};
  app.require_subcommand(1);
  GlobalFlags global;
  Overrides over;
  app.add_option("--config", global.config, "INI run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", global.seed, "root seed");
  app.add_option("--out", global.out, "output directory");

  gcvamd::TrainCommandOptions train;
  gcvamd::DisentangleCommandOptions dis;
  gcvamd::GenerateCommandOptions gen;
  gcvamd::DownstreamCommandOptions down;
  std::string values_text;
  std::string eval_checkpoint;

  auto* synth = app.add_subcommand("synth", "generate the synthetic bundle");
  synth->add_option("--n", over.n, "number of samples");

  auto* tr = app.add_subcommand("train", "train the model");
  tr->add_option("--data", train.data, "bundle cache to train on");
  tr->add_flag("--resume", train.resume, "continue from <out>/model.gcvd");
  tr->add_option("--stop-after", train.stop_after, "epochs to run in this invocation");
  tr->add_option("--n", over.n, "synthetic sample count");
  tr->add_option("--phase1-epochs", over.phase1_epochs);
  tr->add_option("--phase2-epochs", over.phase2_epochs);

  auto* eg = app.add_subcommand("eval-graph", "score the learned adjacency");
  eg->add_option("--checkpoint", eval_checkpoint);
  eg->add_option("--truth", over.truth_graph, "true graph file");
  eg->add_option("--fraction", over.fraction, "fraction of entries kept as edges");

  auto* di = app.add_subcommand("disentangle", "lasso relevance and disentanglement");
  di->add_option("--checkpoint", dis.checkpoint);
  di->add_option("--data", dis.data);
  di->add_option("--relevance-csv", dis.relevance_csv, "precomputed relevance matrix");
  di->add_option("--alphas", over.lasso_alphas, "three comma-separated lasso penalties");
  di->add_option("--n", over.n);

  auto* tv = app.add_subcommand("traverse", "latent traversal grid");
  auto* iv = app.add_subcommand("intervene", "do-intervention grid");
  for (auto* sub : {tv, iv}) {
    sub->add_option("--checkpoint", gen.checkpoint);
    sub->add_option("--data", gen.data);
    sub->add_option("--index", gen.index, "latent factor")->check(CLI::Range(0, 2));
    sub->add_option("--rows", gen.rows, "base images");
    sub->add_option("--n", over.n);
  }
  tv->add_option("--values", values_text, "comma-separated traversal values");
  iv->add_option("--value", gen.value, "intervention value")->required();

  auto* ds = app.add_subcommand("downstream", "AMD classification with and without latents");
  ds->add_option("--checkpoint", down.checkpoint);
  ds->add_flag("--skip-gcvamd", down.skip_gcvamd, "only the baseline classifier");
  ds->add_option("--ae-epochs", over.ae_epochs);
  ds->add_option("--dnn-epochs", over.dnn_epochs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kBadConfig;
  }

  try {
    const gcvamd::RunConfig config = resolve(global, over);
    if (!values_text.empty()) gen.values = gcvamd::parse_double_list(values_text);
    if (synth->parsed()) gcvamd::cmd_synth(config);
    if (tr->parsed()) gcvamd::cmd_train(config, train);
    if (eg->parsed()) gcvamd::cmd_eval_graph(config, eval_checkpoint);
    if (di->parsed()) gcvamd::cmd_disentangle(config, dis);
    if (tv->parsed()) gcvamd::cmd_traverse(config, gen);
    if (iv->parsed()) gcvamd::cmd_intervene(config, gen);
    if (ds->parsed()) gcvamd::cmd_downstream(config, down);
  } catch (const gcvamd::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kBadConfig;
  } catch (const gcvamd::TrainingDivergence& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kDiverged;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return 0;
}
