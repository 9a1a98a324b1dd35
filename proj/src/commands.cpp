#include "gcvamd/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <json.hpp>

#include "gcvamd/checkpoint.hpp"
#include "gcvamd/downstream.hpp"
#include "gcvamd/errors.hpp"
#include "gcvamd/image_io.hpp"
#include "gcvamd/metrics.hpp"

namespace gcvamd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModelFile = "model.gcvd";
constexpr const char* kBundleFile = "bundle.gcvd";

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Tracks the files a command emits and writes the manifest once at the end.
class Artifacts {
 public:
  Artifacts(const RunConfig& config, std::string command) : dir_(config.out), command_(std::move(command)) {
    fs::create_directories(dir_);
    std::ostringstream ini;
    write_run_config(config, ini);
    text("effective_config.ini", ini.str());
  }

  fs::path path(const std::string& name) {
    files_.push_back(name);
    return dir_ / name;
  }
  void text(const std::string& name, const std::string& content) {
    std::ofstream out(path(name), std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
  }
  void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }

  void finish() {
    json entries = json::array();
    for (const auto& name : files_) {
      const std::string bytes = read_file(dir_ / name);
      std::ostringstream hash;
      hash << std::hex << std::setw(16) << std::setfill('0') << fnv1a(bytes);
      entries.push_back({{"file", name}, {"bytes", bytes.size()}, {"fnv1a64", hash.str()}});
    }
    const json manifest = {{"command", command_}, {"files", entries}};
    std::ofstream out(dir_ / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
  }

 private:
  fs::path dir_;
  std::string command_;
  std::vector<std::string> files_;
};

SynthConfig synth_config(const RunConfig& config, int n) {
  SynthConfig synth = config.dataset.synth;
  synth.shape = config.model.net().input;
  synth.seed = config.seed;
  synth.n = n;
  return synth;
}

DatasetBundle octdl_bundle(const RunConfig& config) {
  if (config.dataset.manifest.empty()) throw ConfigError("dataset.manifest is required for octdl data");
  const LoadReport report = load_octdl(config.dataset.root, config.dataset.manifest, config.dataset.mapping);
  std::vector<std::string> errors;
  DatasetBundle bundle = load_bundle(report.records, config.model.net().input, &errors);
  for (const auto& e : report.errors) std::fprintf(stderr, "warning: %s\n", e.c_str());
  for (const auto& e : errors) std::fprintf(stderr, "warning: %s\n", e.c_str());
  if (report.skipped) std::fprintf(stderr, "warning: skipped %zu rows of other diseases\n", report.skipped);
  return bundle;
}

SplitIndices octdl_split(const RunConfig& config, const DatasetBundle& bundle, int per_class) {
  Engine engine(derive_seed(config.seed, Stream::kDataSampling));
  return sample_splits(bundle.diagnosis(), engine, {per_class, per_class});
}

DatasetBundle training_data(const RunConfig& config, const std::string& data) {
  if (!data.empty()) return load_bundle_cache(data);
  if (config.dataset.kind == "synthetic") return synth_generate(synth_config(config, config.dataset.synth.n)).data;
  const DatasetBundle all = octdl_bundle(config);
  return all.select(octdl_split(config, all, 150).train, "train");
}

std::string checkpoint_path(const RunConfig& config, const std::string& given) {
  const std::string path = given.empty() ? (fs::path(config.out) / kModelFile).string() : given;
  if (!fs::exists(path)) throw ConfigError("model checkpoint not found: " + path);
  return path;
}

json matrix_json(const Matrix& m) { return to_json(m); }

json record_json(const StepRecord& r) {
  return {{"epoch", r.epoch}, {"L1", r.l1},     {"L2", r.l2}, {"bce", r.bce},     {"bce_eps", r.bce_eps},
          {"l_z", r.l_z},     {"l_u", r.l_u},   {"l_zu", r.l_zu}, {"h", r.h},     {"alpha", r.alpha},
          {"rho", r.rho}};
}

/// Latent codes z (N x d) with the reparameterization noise switched off.
Matrix noiseless_codes(const GcvamdModel& model, const ImageBatch& images) {
  const Matrix eta = Matrix::Zero(model.d(), images.count());
  return run_forward(model, images.data, eta).noise.z.transpose();
}

std::vector<Eigen::Index> first_rows(const DatasetBundle& data, int rows) {
  if (rows <= 0) throw ConfigError("rows must be positive");
  const auto n = std::min<Eigen::Index>(rows, data.size());
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; ++i) idx.push_back(i);
  return idx;
}

std::string values_text(const std::vector<double>& values) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
  return out.str();
}

}  // namespace

Matrix read_numeric_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    boost::algorithm::trim(line);
    if (line.empty()) continue;
    rows.push_back(parse_double_list(line));
    if (rows.back().size() != rows.front().size()) throw ConfigError("ragged rows in " + path);
  }
  if (rows.empty()) throw ConfigError(path + " holds no rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void cmd_synth(const RunConfig& config) {
  Artifacts out(config, "synth");
  const SynthBundle synth = synth_generate(synth_config(config, config.dataset.synth.n));
  save_bundle(synth.data, out.path(kBundleFile).string());
  out.text("truth_graph.txt", synth.data.truth->to_text());
  std::vector<Eigen::Index> preview;
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(8, synth.data.size()); ++i) preview.push_back(i);
  if (!preview.empty()) write_png(make_grid({synth.data.images.select(preview)}), out.path("preview.png").string());
  out.finish();
}

void cmd_train(const RunConfig& config, const TrainCommandOptions& options) {
  Artifacts out(config, "train");
  const DatasetBundle data = training_data(config, options.data);
  const fs::path model_path = fs::path(config.out) / kModelFile;
  std::optional<LoadedModel> loaded;
  if (options.resume && fs::exists(model_path)) {
    loaded.emplace(load_model(model_path.string()));
  } else {
    loaded.emplace(LoadedModel{
        GcvamdModel(config.model.net(), 3, derive_seed(config.seed, Stream::kInit), config.model.hidden_multiplier),
        TrainState{}});
    loaded->state.seed = derive_seed(config.seed, Stream::kReparameterization);
  }
  TrainOptions train_options;
  train_options.scale_labels = config.model.scale_labels;
  train_options.max_epochs = options.stop_after;
  train_gcvamd(loaded->model, data.images, data.labels, {config.phase1, config.phase2}, loaded->state,
               train_options);
  save_model(loaded->model, loaded->state, out.path(kModelFile).string());
  std::ostringstream csv;
  write_history_csv(loaded->state.history, csv);
  out.text("history.csv", csv.str());
  const bool finished = loaded->state.cursor.phase >= 2;
  json report = {{"epochs_completed", loaded->state.history.size()},
                 {"finished", finished},
                 {"cursor", {{"phase", loaded->state.cursor.phase}, {"epoch", loaded->state.cursor.epoch}}},
                 {"adjacency", matrix_json(loaded->model.adjacency.weights())}};
  if (!loaded->state.history.empty()) {
    report["first_epoch"] = record_json(loaded->state.history.front());
    report["last_epoch"] = record_json(loaded->state.history.back());
  }
  out.json_file("train_report.json", report);
  out.finish();
}

void cmd_eval_graph(const RunConfig& config, const std::string& checkpoint) {
  if (config.evaluation.truth_graph.empty()) throw ConfigError("evaluation.truth_graph is not set");
  if (!fs::exists(config.evaluation.truth_graph))
    throw ConfigError("truth graph file not found: " + config.evaluation.truth_graph);
  const BinaryGraph truth = BinaryGraph::load(config.evaluation.truth_graph);
  const LoadedModel loaded = load_model(checkpoint_path(config, checkpoint));
  Artifacts out(config, "eval-graph");
  const WeightedAdjacency& a = loaded.model.adjacency;
  const BinaryGraph learned = binarize_top_fraction(a, config.evaluation.fraction);
  json edges = json::array();
  for (const auto& [i, j] : learned.edges()) edges.push_back({i, j});
  out.json_file("eval_graph.json", {{"weights", matrix_json(a.weights())},
                                    {"fraction", config.evaluation.fraction},
                                    {"binarized_edges", edges},
                                    {"h", acyclicity_h(a)},
                                    {"shd", shd(learned, truth)}});
  out.text("learned_graph.txt", learned.to_text());
  out.finish();
}

void cmd_disentangle(const RunConfig& config, const DisentangleCommandOptions& options) {
  Matrix relevance;
  if (!options.relevance_csv.empty()) {
    relevance = read_numeric_csv(options.relevance_csv);
  } else {
    const LoadedModel loaded = load_model(checkpoint_path(config, options.checkpoint));
    const DatasetBundle data = training_data(config, options.data);
    relevance = relevance_matrix(noiseless_codes(loaded.model, data.images), data.labels,
                                 config.evaluation.lasso_alphas);
  }
  const DisentanglementScores scores = disentanglement_scores(relevance);
  Artifacts out(config, "disentangle");
  json report = disentanglement_report(relevance, scores);
  report["lasso_alphas"] = config.evaluation.lasso_alphas;
  out.json_file("disentangle.json", report);
  out.finish();
}

void cmd_traverse(const RunConfig& config, const GenerateCommandOptions& options) {
  if (options.index < 0 || options.index > 2) throw ConfigError("traversal index must be 0, 1 or 2");
  const std::vector<double> values =
      options.values.empty() ? config.evaluation.traversal[static_cast<std::size_t>(options.index)] : options.values;
  if (values.empty()) throw ConfigError("traversal needs at least one value");
  const LoadedModel loaded = load_model(checkpoint_path(config, options.checkpoint));
  const DatasetBundle data = training_data(config, options.data);
  const std::uint64_t seed = derive_seed(config.seed, Stream::kReparameterization, 0xabc);
  std::vector<ImageBatch> rows;
  for (Eigen::Index i : first_rows(data, options.rows))
    rows.push_back(traverse(loaded.model, data.images.select({i}), options.index, values, seed));
  Artifacts out(config, "traverse");
  const std::string stem = "traverse_z" + std::to_string(options.index);
  write_png(make_grid(rows), out.path(stem + ".png").string());
  out.text(stem + ".txt", "index=" + std::to_string(options.index) + "\nvalues=" + values_text(values) +
                              "\nseed=" + std::to_string(seed) + "\nrows=" + std::to_string(rows.size()) + "\n");
  out.finish();
}

void cmd_intervene(const RunConfig& config, const GenerateCommandOptions& options) {
  if (options.index < 0 || options.index > 2) throw ConfigError("intervention index must be 0, 1 or 2");
  const LoadedModel loaded = load_model(checkpoint_path(config, options.checkpoint));
  const DatasetBundle data = training_data(config, options.data);
  const std::uint64_t seed = derive_seed(config.seed, Stream::kReparameterization, 0xdef);
  std::vector<ImageBatch> rows;
  for (Eigen::Index i : first_rows(data, options.rows)) {
    const ImageBatch base = data.images.select({i});
    Engine recon_engine(seed);
    Engine do_engine(seed);
    const ImageBatch recon = forward(loaded.model, base, recon_engine).reconstruction;
    const ImageBatch intervened = intervene(loaded.model, base, options.index, options.value, do_engine);
    ImageBatch row(base.shape, 3);
    row.data.col(0) = base.data.col(0);
    row.data.col(1) = recon.data.col(0);
    row.data.col(2) = intervened.data.col(0);
    rows.push_back(std::move(row));
  }
  Artifacts out(config, "intervene");
  const std::string stem = "intervene_z" + std::to_string(options.index);
  write_png(make_grid(rows), out.path(stem + ".png").string());
  std::ostringstream value;
  value << std::setprecision(17) << options.value;
  out.text(stem + ".txt", "index=" + std::to_string(options.index) + "\nvalue=" + value.str() +
                              "\nseed=" + std::to_string(seed) + "\ncolumns=input,reconstruction,intervened\n");
  out.finish();
}

void cmd_downstream(const RunConfig& config, const DownstreamCommandOptions& options) {
  const int per_class = config.downstream.train_per_class;
  DatasetBundle train;
  DatasetBundle test;
  if (config.dataset.kind == "synthetic") {
    const DatasetBundle all = synth_generate(synth_config(config, config.downstream.synthetic_n)).data;
    Engine engine(derive_seed(config.seed, Stream::kDataSampling));
    const SplitIndices split = sample_splits(all.diagnosis(), engine, {per_class, per_class});
    train = all.select(split.train, "train");
    test = all.select(split.test, "test");
  } else {
    const DatasetBundle all = octdl_bundle(config);
    const SplitIndices split = octdl_split(config, all, per_class);
    train = all.select(split.train, "train");
    test = all.select(split.test, "test");
  }
  std::optional<LoadedModel> gcvamd;
  if (!options.skip_gcvamd) gcvamd.emplace(load_model(checkpoint_path(config, options.checkpoint)));

  ConvAE ae(config.model.net(), derive_seed(config.seed, Stream::kDownstream, 0));
  FitOptions ae_options = default_ae_options();
  ae_options.epochs = config.downstream.ae_epochs;
  ae_options.seed = derive_seed(config.seed, Stream::kDownstream, 1);
  const FitLog ae_log = train_conv_ae(ae, train.images, ae_options);

  FitOptions dnn_options = default_dnn_options();
  dnn_options.epochs = config.downstream.dnn_epochs;
  dnn_options.seed = derive_seed(config.seed, Stream::kDownstream, 2);
  const auto train_labels = train.diagnosis();
  const auto test_labels = test.diagnosis();

  auto run_variant = [&](bool incorporate, std::uint64_t init) {
    const GcvamdModel* model = gcvamd ? &gcvamd->model : nullptr;
    const FeatureSet train_features = extract_features(ae, model, train.images, incorporate);
    const FeatureSet test_features = extract_features(ae, model, test.images, incorporate);
    DnnClassifier dnn(static_cast<int>(train_features.features.cols()), init);
    train_dnn(dnn, train_features.features, train_labels, dnn_options);
    return evaluate_variant(dnn, test_features.features, test_labels);
  };

  Artifacts out(config, "downstream");
  json report = {{"train_size", train.size()},
                 {"test_size", test.size()},
                 {"autoencoder", {{"initial_bce", ae_log.initial_loss}, {"final_bce", ae_log.final_loss}}}};
  const VariantReport baseline = run_variant(false, derive_seed(config.seed, Stream::kDownstream, 3));
  report["not_incorporated"] = to_json(baseline);
  if (gcvamd) {
    const VariantReport incorporated = run_variant(true, derive_seed(config.seed, Stream::kDownstream, 4));
    report["causality_incorporated"] = to_json(incorporated);
    out.text("downstream_table.txt", comparison_table({incorporated, baseline}));
  }
  out.json_file("downstream.json", report);
  out.finish();
}

}  // namespace gcvamd
