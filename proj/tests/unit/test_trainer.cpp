#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "gcvamd/errors.hpp"
#include "gcvamd/optim.hpp"
#include "gcvamd/trainer.hpp"

namespace gcvamd {
namespace {

namespace fs = std::filesystem;

struct Fixture {
  GcvamdModel model;
  ImageBatch images;
  Matrix raw_labels;  // N x 3
  Matrix labels;      // d x N
  Matrix eta;
};

Fixture make_fixture(std::uint64_t seed, int n = 4) {
  Fixture f{GcvamdModel(ConvNetConfig::gradient_check(), 3, seed), {}, {}, {}, {}};
  Engine engine(seed + 1000);
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  f.images = ImageBatch(f.model.config().input,
                        Matrix::NullaryExpr(f.model.config().input.size(), n, [&] { return pixel(engine); }));
  std::uniform_int_distribution<int> bit(0, 1), severity(0, 3);
  f.raw_labels.resize(n, 3);
  for (int i = 0; i < n; ++i) f.raw_labels.row(i) << bit(engine), bit(engine), severity(engine);
  f.labels = prepare_labels(f.raw_labels, true);
  std::normal_distribution<double> normal;
  f.eta = Matrix::NullaryExpr(3, n, [&] { return normal(engine); });
  f.model.adjacency.set(0, 2, 0.2);
  f.model.adjacency.set(2, 0, 0.1);  // a two-cycle so that h > 0
  return f;
}

bool is_rest(const nn::ParamView& p) {
  return p.group != nn::ParamGroup::kAdjacency && p.group != nn::ParamGroup::kCausalLayer;
}

std::vector<Matrix> snapshot(GcvamdModel& model) {
  std::vector<Matrix> out;
  for (const auto& p : model.params()) out.emplace_back(p.map());
  return out;
}

PhaseConfig short_phase(int epochs) {
  PhaseConfig p = default_schedule().first;
  p.epochs = epochs;
  return p;
}

TEST(Schedule, DefaultValues) {
  const auto [p1, p2] = default_schedule();
  EXPECT_EQ(p1.epochs, 150);
  EXPECT_EQ(p2.epochs, 100);
  for (const auto* p : {&p1, &p2}) {
    EXPECT_EQ(p->l1_weights.omega, 1.0);
    EXPECT_EQ(p->l1_weights.beta, 0.3);
    EXPECT_EQ(p->l1_weights.gamma, 0.3);
    EXPECT_EQ(p->l1_weights.nu, 0.1);
    EXPECT_EQ(p->lr_gae, 3e-3);
    EXPECT_EQ(p->lr_rest, 2e-3);
  }
  EXPECT_EQ(p1.l2_weights.omega, 0.3);
  EXPECT_EQ(p1.l2_weights.beta, 2.0);
  EXPECT_EQ(p1.l2_weights.gamma, 0.5);
  EXPECT_EQ(p1.l2_weights.nu, 0.1);
  EXPECT_EQ(p2.l2_weights.nu, 0.3);
  EXPECT_EQ(p1.lr_adjacency, 2e-2);
  EXPECT_EQ(p2.lr_adjacency, 4e-2);
}

TEST(Schedule, RejectsNegativeValues) {
  PhaseConfig p = short_phase(1);
  p.lr_rest = -1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = short_phase(-1);
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(TrainStep, ZeroRatesOnlyUpdateDual) {
  auto f = make_fixture(1);
  PhaseConfig phase = short_phase(1);
  phase.lr_adjacency = phase.lr_gae = phase.lr_rest = 0.0;
  const auto before = snapshot(f.model);
  const double h = acyclicity_h(f.model.adjacency);
  ASSERT_GT(h, 0.0);
  AugLagState dual;
  const AugLagState expected = auglag_update(dual, h);
  const auto record = train_step(f.model, f.images.data, f.labels, phase, dual, f.eta);
  EXPECT_EQ(snapshot(f.model), before);
  EXPECT_EQ(dual.alpha, expected.alpha);
  EXPECT_EQ(dual.rho, expected.rho);
  EXPECT_EQ(record.h, h);
}

TEST(TrainStep, ZeroRestRateFreezesRestGroups) {
  auto f = make_fixture(2);
  PhaseConfig phase = short_phase(1);
  phase.lr_rest = 0.0;
  const auto before = snapshot(f.model);
  AugLagState dual;
  train_step(f.model, f.images.data, f.labels, phase, dual, f.eta);
  const auto after = snapshot(f.model);
  const auto params = f.model.params();
  bool adjacency_moved = false;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (is_rest(params[p])) {
      EXPECT_EQ(after[p], before[p]) << params[p].name;
    }
    if (params[p].group == nn::ParamGroup::kAdjacency) adjacency_moved = after[p] != before[p];
  }
  EXPECT_TRUE(adjacency_moved);
}

TEST(TrainStep, SnapshotReplayOfBothGroups) {
  auto f = make_fixture(3);
  const PhaseConfig phase = short_phase(1);
  GcvamdModel oracle = f.model;
  AugLagState dual;
  const AugLagState dual0 = dual;
  train_step(f.model, f.images.data, f.labels, phase, dual, f.eta);

  // Replay: causal group along the second loss, then the rest along the first
  // loss re-evaluated through the updated causal group.
  ForwardCache cache = run_forward(oracle, f.images.data, f.eta);
  const double h0 = acyclicity_h(oracle.adjacency);
  GcvamdModel g2 = loss_gradient(oracle, cache, f.images.data, f.labels,
                                 total_loss_coefficients(phase.l2_weights, dual0, h0), GradientScope::kAll);
  auto op = oracle.params();
  auto gp = g2.params();
  for (std::size_t p = 0; p < op.size(); ++p) {
    if (op[p].group == nn::ParamGroup::kAdjacency) op[p].map() -= phase.lr_adjacency * gp[p].map();
    if (op[p].group == nn::ParamGroup::kCausalLayer) op[p].map() -= phase.lr_gae * gp[p].map();
  }
  oracle.enforce_constraints();
  const ForwardCache second = run_forward(oracle, f.images.data, f.eta);
  GcvamdModel g1 = loss_gradient(oracle, second, f.images.data, f.labels,
                                 total_loss_coefficients(phase.l1_weights, dual0, acyclicity_h(oracle.adjacency)),
                                 GradientScope::kAll);
  op = oracle.params();
  gp = g1.params();
  for (std::size_t p = 0; p < op.size(); ++p)
    if (is_rest(op[p])) op[p].map() -= phase.lr_rest * gp[p].map();
  oracle.enforce_constraints();

  const auto trained = f.model.params();
  const auto replayed = oracle.params();
  for (std::size_t p = 0; p < trained.size(); ++p)
    EXPECT_TRUE(trained[p].map().isApprox(replayed[p].map(), 1e-12)) << trained[p].name;
}

TEST(TrainStep, ConstraintsHoldAfterStep) {
  auto f = make_fixture(4);
  AugLagState dual;
  for (int i = 0; i < 3; ++i) train_step(f.model, f.images.data, f.labels, short_phase(1), dual, f.eta);
  EXPECT_TRUE(f.model.adjacency.weights().diagonal().isZero(0.0));
  for (auto* mlp : {&f.model.noise_map.f3, &f.model.noise_map.f4, &f.model.causal_layer.g1, &f.model.causal_layer.g2})
    for (const auto& layer : mlp->stack().layers) {
      const auto& dense = std::get<nn::Dense>(layer);
      EXPECT_TRUE(dense.weight.cwiseProduct((1.0 - dense.mask.array()).matrix()).isZero(0.0));
    }
}

TEST(TrainStep, OverflowingPenaltyDiverges) {
  auto f = make_fixture(5);
  f.model.adjacency.set(0, 2, 30.0);
  f.model.adjacency.set(2, 0, 30.0);
  AugLagState dual;
  try {
    train_step(f.model, f.images.data, f.labels, short_phase(1), dual, f.eta);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergence& e) {
    EXPECT_FALSE(e.component().empty());
  }
}

TEST(TrainGcvamd, ZeroEpochPhases) {
  auto f = make_fixture(6);
  const auto before = snapshot(f.model);
  TrainState state;
  train_gcvamd(f.model, f.images, f.raw_labels, {short_phase(0), short_phase(0)}, state);
  EXPECT_TRUE(state.history.empty());
  EXPECT_EQ(snapshot(f.model), before);
}

TEST(TrainGcvamd, DefaultScheduleLengthAndDualTrace) {
  auto f = make_fixture(7, 2);
  const auto [p1, p2] = default_schedule();
  TrainState state;
  state.seed = 42;
  const AugLagState initial = state.dual;
  train_gcvamd(f.model, f.images, f.raw_labels, {p1, p2}, state);
  ASSERT_EQ(state.history.size(), 250u);
  double alpha = initial.alpha;
  double rho = initial.rho;
  double h_prev = initial.h_prev;
  for (std::size_t i = 0; i < state.history.size(); ++i) {
    const auto& r = state.history[i];
    EXPECT_EQ(r.epoch, static_cast<int>(i) + 1);
    alpha += rho * r.h;
    if (r.h > 0.0 && r.h >= initial.gamma * h_prev) rho *= initial.beta;
    h_prev = r.h;
    EXPECT_NEAR(r.alpha, alpha, 1e-12 * std::max(1.0, alpha));
    EXPECT_NEAR(r.rho, rho, 1e-12 * rho);
    if (i) {
      EXPECT_GE(r.rho, state.history[i - 1].rho);
    }
  }
}

TEST(TrainGcvamd, DeterministicHistory) {
  auto a = make_fixture(8);
  auto b = make_fixture(8);
  TrainState sa, sb;
  sa.seed = sb.seed = 9;
  train_gcvamd(a.model, a.images, a.raw_labels, {short_phase(3), short_phase(2)}, sa);
  train_gcvamd(b.model, b.images, b.raw_labels, {short_phase(3), short_phase(2)}, sb);
  std::ostringstream ha, hb;
  write_history_csv(sa.history, ha);
  write_history_csv(sb.history, hb);
  EXPECT_EQ(ha.str(), hb.str());
  EXPECT_EQ(serialize_checkpoint(make_model_checkpoint(a.model, sa)),
            serialize_checkpoint(make_model_checkpoint(b.model, sb)));
}

TEST(TrainGcvamd, ResumeMatchesStraightRun) {
  const std::vector<PhaseConfig> phases{short_phase(3), short_phase(3)};
  auto straight = make_fixture(10);
  TrainState s1;
  s1.seed = 77;
  train_gcvamd(straight.model, straight.images, straight.raw_labels, phases, s1);

  auto split = make_fixture(10);
  TrainState s2;
  s2.seed = 77;
  TrainOptions options;
  options.max_epochs = 4;
  train_gcvamd(split.model, split.images, split.raw_labels, phases, s2, options);
  EXPECT_EQ(s2.history.size(), 4u);
  EXPECT_EQ(s2.cursor.phase, 1);
  EXPECT_EQ(s2.cursor.epoch, 1);
  const auto bytes = serialize_checkpoint(make_model_checkpoint(split.model, s2));
  LoadedModel loaded = restore_model_checkpoint(deserialize_checkpoint(bytes));
  train_gcvamd(loaded.model, split.images, split.raw_labels, phases, loaded.state);

  std::ostringstream h1, h2;
  write_history_csv(s1.history, h1);
  write_history_csv(loaded.state.history, h2);
  EXPECT_EQ(h1.str(), h2.str());
  EXPECT_EQ(serialize_checkpoint(make_model_checkpoint(straight.model, s1)),
            serialize_checkpoint(make_model_checkpoint(loaded.model, loaded.state)));
}

TEST(TrainGcvamd, HistoryCsvHeader) {
  std::ostringstream out;
  write_history_csv(TrainHistory{StepRecord{1, 0.5, 0.25, 0.75, 0.7, 0.1, 0.2, 0.3, 0.0, 0.6, 0.1}}, out);
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "epoch,L1,L2,bce_eps,l_z,l_u,l_zu,h,alpha,rho");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
}

class CheckpointFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("gcvamd_ckpt_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST_F(CheckpointFiles, SaveLoadSaveIsByteIdentical) {
  auto f = make_fixture(11);
  TrainState state;
  state.seed = 5;
  train_gcvamd(f.model, f.images, f.raw_labels, {short_phase(2)}, state);
  save_model(f.model, state, path("a.gcvd"));
  LoadedModel loaded = load_model(path("a.gcvd"));
  save_model(loaded.model, loaded.state, path("b.gcvd"));
  EXPECT_EQ(read_bytes(path("a.gcvd")), read_bytes(path("b.gcvd")));
  EXPECT_EQ(loaded.state.seed, 5u);
  EXPECT_EQ(loaded.state.history.size(), 2u);
  EXPECT_EQ(loaded.state.dual.rho, state.dual.rho);
}

TEST_F(CheckpointFiles, LoadedModelReplaysLoss) {
  auto f = make_fixture(12);
  TrainState state;
  save_model(f.model, state, path("m.gcvd"));
  LoadedModel loaded = load_model(path("m.gcvd"));
  const auto a = evaluate_components(f.model, run_forward(f.model, f.images.data, f.eta), f.images.data, f.labels);
  const auto b =
      evaluate_components(loaded.model, run_forward(loaded.model, f.images.data, f.eta), f.images.data, f.labels);
  EXPECT_EQ(a.bce, b.bce);
  EXPECT_EQ(a.l_z, b.l_z);
  EXPECT_EQ(a.l_zu, b.l_zu);
  EXPECT_EQ(a.h, b.h);
}

TEST_F(CheckpointFiles, CorruptFilesAreRejected) {
  auto f = make_fixture(13);
  TrainState state;
  const auto bytes = serialize_checkpoint(make_model_checkpoint(f.model, state));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), CheckpointFormatError);
  auto bad_version = bytes;
  bad_version[4] = 99;
  EXPECT_THROW(deserialize_checkpoint(bad_version), CheckpointFormatError);
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2));
  EXPECT_THROW(deserialize_checkpoint(truncated), CheckpointFormatError);
  Checkpoint extra = make_model_checkpoint(f.model, state);
  extra.arrays.push_back(ArrayRecord::from_matrix("mystery", Matrix::Zero(1, 1)));
  EXPECT_THROW(restore_model_checkpoint(extra), CheckpointFormatError);
  EXPECT_ANY_THROW(load_model(path("missing.gcvd")));
}

TEST(CheckpointFormat, RoundTripIsBitExact) {
  Engine engine(3);
  std::normal_distribution<double> n;
  Checkpoint c;
  c.arrays.push_back(ArrayRecord::from_matrix("w", Matrix::NullaryExpr(3, 5, [&] { return n(engine); })));
  c.arrays.push_back(ArrayRecord::from_matrix("bytes", Matrix::Constant(2, 2, 255.0), DType::kUInt8));
  c.footer.seed = 0xfeedfacecafebeefULL;
  c.footer.phase = 1;
  c.footer.epoch = 17;
  c.footer.dual = {0.125, 3.5, 1.01, 0.9, 1e-9};
  const auto bytes = serialize_checkpoint(c);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GCVD");
  const Checkpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.require("w").to_matrix(), c.arrays[0].to_matrix());
  EXPECT_EQ(back.require("bytes").dtype, DType::kUInt8);
  EXPECT_EQ(back.footer.seed, c.footer.seed);
  EXPECT_EQ(back.footer.epoch, 17u);
  EXPECT_EQ(back.footer.dual.h_prev, 1e-9);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  EXPECT_THROW(back.require("nope"), CheckpointFormatError);
}

nn::ParamView scalar_view(Matrix& m) { return {"x", m.data(), 1, 1, nn::ParamGroup::kDownstream, true}; }

TEST(Adam, ZeroGradientLeavesParameters) {
  Matrix x(1, 1), g(1, 1);
  x << 0.7;
  g << 0.0;
  AdamState state;
  adam_step({scalar_view(x)}, {scalar_view(g)}, state, AdamConfig{});
  EXPECT_EQ(x(0, 0), 0.7);
  EXPECT_EQ(state.t, 1);
}

TEST(Adam, FirstStepClosedForm) {
  for (double grad : {3.0, -0.02, 1e-4}) {
    Matrix x(1, 1), g(1, 1);
    x << 1.0;
    g << grad;
    AdamState state;
    AdamConfig config;
    config.lr = 0.01;
    adam_step({scalar_view(x)}, {scalar_view(g)}, state, config);
    EXPECT_NEAR(x(0, 0), 1.0 - 0.01 * grad / (std::abs(grad) + 1e-8), 1e-15);
  }
}

TEST(Adam, TwoStepHandTrace) {
  Matrix x(1, 1), g(1, 1);
  x << 0.5;
  AdamState state;
  AdamConfig config;
  config.lr = 0.1;
  double m = 0.0, v = 0.0, expected = 0.5;
  const double grads[2] = {0.4, -0.2};
  for (int t = 1; t <= 2; ++t) {
    g << grads[t - 1];
    adam_step({scalar_view(x)}, {scalar_view(g)}, state, config);
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    const double m_hat = m / (1.0 - std::pow(0.9, t));
    const double v_hat = v / (1.0 - std::pow(0.999, t));
    expected -= 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
    EXPECT_NEAR(x(0, 0), expected, 1e-14);
  }
}

TEST(Sgd, PerArrayRates) {
  Matrix a(1, 2), b(1, 2), ga(1, 2), gb(1, 2);
  a << 1, 2;
  b << 3, 4;
  ga << 1, 1;
  gb << 1, 1;
  std::vector<nn::ParamView> params{{"a", a.data(), 1, 2, nn::ParamGroup::kEncoder, true},
                                    {"b", b.data(), 1, 2, nn::ParamGroup::kDecoder, true}};
  std::vector<nn::ParamView> grads{{"a", ga.data(), 1, 2, nn::ParamGroup::kEncoder, true},
                                   {"b", gb.data(), 1, 2, nn::ParamGroup::kDecoder, true}};
  sgd_step(params, grads, [](const nn::ParamView& p) { return p.group == nn::ParamGroup::kEncoder ? 0.5 : 0.0; });
  EXPECT_EQ(a, (Matrix(1, 2) << 0.5, 1.5).finished());
  EXPECT_EQ(b, (Matrix(1, 2) << 3, 4).finished());
}

TEST(TabularGae, HugePenaltyZeroesAdjacency) {
  Engine engine(1);
  std::normal_distribution<double> n;
  Matrix x(100, 3);
  for (int i = 0; i < 100; ++i) {
    x(i, 0) = n(engine);
    x(i, 1) = n(engine);
    x(i, 2) = 0.8 * x(i, 0) + 0.6 * x(i, 1) + 0.1 * n(engine);
  }
  TabularGaeConfig config;
  config.lambda = 1e3;
  config.epochs = 200;
  const auto result = train_gae_tabular(x, config);
  EXPECT_LT(result.adjacency.weights().cwiseAbs().maxCoeff(), 0.01);
  EXPECT_EQ(result.history.size(), 200u);
}

TEST(TabularGae, ValidatesInput) {
  TabularGaeConfig config;
  EXPECT_THROW(train_gae_tabular(Matrix::Zero(2, 3), config), std::invalid_argument);
  Matrix bad = Matrix::Zero(10, 3);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(train_gae_tabular(bad, config), std::invalid_argument);
  config.restarts = 0;
  EXPECT_THROW(train_gae_tabular(Matrix::Ones(10, 3), config), std::invalid_argument);
}

TEST(TabularGae, DeterministicAndRhoMonotone) {
  Engine engine(2);
  std::normal_distribution<double> n;
  const Matrix x = Matrix::NullaryExpr(50, 3, [&] { return n(engine); });
  TabularGaeConfig config;
  config.epochs = 300;
  config.dual_every = 10;
  config.seed = 4;
  const auto a = train_gae_tabular(x, config);
  const auto b = train_gae_tabular(x, config);
  EXPECT_EQ(a.adjacency.weights(), b.adjacency.weights());
  for (std::size_t i = 1; i < a.history.size(); ++i) EXPECT_GE(a.history[i].rho, a.history[i - 1].rho);
}

}  // namespace
}  // namespace gcvamd
