#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rom/control.hpp"
#include "rom/gradcheck.hpp"
#include "rom/io.hpp"
#include "test_util.hpp"

namespace {

using namespace rom;
using namespace rom::control;
using rom::testing::random_matrix;

DeepRoc make_controller(ControllerConfig c, std::uint64_t seed) {
  DeepRoc ctrl(c);
  Rng rng(seed);
  ctrl.init(rng);
  return ctrl;
}

deep::DeepRom mini_rom(std::uint64_t seed) {
  deep::ModelConfig c;
  c.nodes = 8;
  c.rx = 2;
  c.channels = 2;
  c.fc_hidden = 4;
  c.dyn_hidden = 6;
  deep::DeepRom m(c);
  Rng rng(seed);
  m.init(rng);
  return m;
}

ControllerConfig small_controller() {
  ControllerConfig c;
  c.hidden = 6;
  return c;
}

TEST(Lyapunov, ValuesAndGradient) {
  const auto ctrl = make_controller({}, 1);
  const auto [v0, g0] = ctrl.lyapunov(Vector::Zero(2));
  EXPECT_EQ(v0, 0.0);
  EXPECT_EQ(g0, Vector(Vector::Zero(2)));
  const auto [v, g] = ctrl.lyapunov(Vector::Ones(2));
  EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_DOUBLE_EQ(g[0], 1.0);
  EXPECT_DOUBLE_EQ(g[1], 1.0);

  const Vector z = random_matrix(2, 1, 2);
  const auto [vz, gz] = ctrl.lyapunov(z);
  for (int i = 0; i < 2; ++i) {
    const double h = 1e-5;
    Vector zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    EXPECT_NEAR((ctrl.lyapunov(zp).first - ctrl.lyapunov(zm).first) / (2 * h), gz[i], 1e-8);
  }
  nn::Tape t(false);
  EXPECT_NEAR(ctrl.lyapunov(t, t.constant(deep::rows_tensor(z))).value().item(), vz, 1e-15);
}

TEST(TargetRhs, OriginIsEquilibrium) {
  const auto ctrl = make_controller({}, 3);
  EXPECT_EQ(ctrl.target_rhs(Vector::Zero(2)), Vector(Vector::Zero(2)));
  // Guarded rows are zeroed inside a batch as well.
  Matrix z = random_matrix(2, 3, 4);
  z.col(1).setZero();
  nn::Tape t(false);
  const Matrix fs = deep::columns_matrix(ctrl.target_rhs(t, t.constant(deep::rows_tensor(z))).value());
  EXPECT_EQ(Vector(fs.col(1)), Vector(Vector::Zero(2)));
  EXPECT_LE((fs.col(0) - ctrl.target_rhs(Vector(z.col(0)))).norm(), 1e-15);
}

// P(z) = -z through ReLU layers: relu(z) and relu(-z) recombined.
void set_negative_identity(nn::Mlp& net, std::size_t r) {
  auto& l = net.layers();
  for (auto& layer : l) {
    layer.weight.value.fill(0.0);
    layer.bias.value.fill(0.0);
  }
  auto w0 = l[0].weight.value.as_matrix(l[0].out(), r);
  auto w1 = l[1].weight.value.as_matrix(l[1].out(), l[1].in());
  auto w2 = l[2].weight.value.as_matrix(r, l[2].in());
  for (std::size_t i = 0; i < r; ++i) {
    const auto a = Eigen::Index(i), b = Eigen::Index(r + i);
    w0(a, a) = 1.0;
    w0(b, a) = -1.0;
    w1(a, a) = 1.0;
    w1(b, b) = 1.0;
    w2(a, a) = -1.0;
    w2(a, b) = 1.0;
  }
}

TEST(TargetRhs, InactiveConstraintLeavesP) {
  auto ctrl = make_controller({}, 5);
  set_negative_identity(ctrl.p_net, 2);
  for (int probe = 0; probe < 10; ++probe) {
    const Vector z = 3.0 * random_matrix(2, 1, 10 + probe);
    EXPECT_EQ(ctrl.target_rhs(z), Vector(-z));
  }
}

TEST(TargetRhs, StabilityCertificateOverRandomProbes) {
  Rng rng(6);
  double worst = -1e300;
  for (int net = 0; net < 10; ++net) {
    auto ctrl = make_controller({}, 100 + net);
    for (auto* p : ctrl.trainable_parameters())
      for (auto& v : p->value.values()) v *= 1.0 + 4.0 * rng.uniform();
    for (int probe = 0; probe < 100; ++probe) {
      const double scale = std::pow(10.0, rng.uniform(-4.0, 3.0));
      const Vector z = scale * Vector{{rng.normal(), rng.normal()}};
      const auto [v, g] = ctrl.lyapunov(z);
      const double lhs = g.dot(ctrl.target_rhs(z)) + ctrl.config().alpha * v;
      worst = std::max(worst, lhs / std::max(1.0, v));
    }
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(TargetRhs, ConfigValidation) {
  ControllerConfig c;
  c.alpha = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.k_scale = -1.0;
  EXPECT_THROW(DeepRoc{c}, std::invalid_argument);
}

TEST(ControllerLoss, GradientMatchesFiniteDifferences) {
  auto rom = mini_rom(7);
  auto ctrl = make_controller(small_controller(), 8);
  ctrl.set_offset(Vector{{0.3, -0.2}});
  rom.set_trainable(false);
  const nn::Tensor z = deep::rows_tensor(random_matrix(2, 6, 9));
  const auto check = nn::check_parameter_gradients(ctrl.parameters(), [&](nn::Tape& t) {
    return controller_loss(t, rom, ctrl, t.constant(z));
  });
  EXPECT_EQ(check.coordinates, [&] {
    std::size_t n = 0;
    for (auto* p : ctrl.trainable_parameters()) n += p->value.size();
    return n;
  }());
  EXPECT_LE(check.max_rel_error, 1e-5);
}

TEST(ControllerLoss, MatchesDirectEvaluation) {
  const auto rom = mini_rom(10);
  auto ctrl = make_controller(small_controller(), 11);
  const Vector c{{0.1, 0.4}};
  ctrl.set_offset(c);
  const Matrix z = random_matrix(2, 5, 12);
  double ctrl_sum = 0.0, reg_sum = 0.0;
  for (Eigen::Index i = 0; i < 5; ++i) {
    const Vector zc = z.col(i) - c;
    const Vector u = ctrl.policy(zc);
    ctrl_sum += (rom.latent_rhs(z.col(i), u) - ctrl.target_rhs(zc)).squaredNorm();
    reg_sum += u.squaredNorm();
  }
  const auto l = evaluate_controller_loss(rom, ctrl, z);
  EXPECT_NEAR(l.ctrl, ctrl_sum / 5, 1e-13);
  EXPECT_NEAR(l.reg, reg_sum / 5, 1e-13);
  EXPECT_NEAR(l.total, l.ctrl + 0.2 * l.reg, 1e-13);
}

TEST(TrainController, FrozenRomAndDecreasingLoss) {
  auto rom = mini_rom(13);
  auto ctrl = make_controller(small_controller(), 14);
  const Matrix latents = 2.0 * random_matrix(2, 200, 15);
  const auto before = nn::snapshot(rom.parameters());
  ctrl.set_offset(rom.encode(Vector(Vector::Zero(8))));
  const double initial = evaluate_controller_loss(rom, ctrl, latents).total;

  ControllerTrainConfig cfg;
  cfg.epochs = 20;
  const auto log = train_controller(rom, ctrl, latents, cfg);
  ASSERT_EQ(log.size(), 20u);
  EXPECT_LT(log.back().loss, initial);
  EXPECT_EQ(ctrl.offset(), rom.encode(Vector(Vector::Zero(8))));
  const auto after = nn::snapshot(rom.parameters());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
  for (auto* p : rom.parameters()) EXPECT_TRUE(p->trainable) << p->name;

  rom.set_trainable(false);
  nn::Tape t;
  const auto grads = t.backward(
      controller_loss(t, rom, ctrl, t.constant(deep::rows_tensor(latents.leftCols(10)))));
  for (auto* p : rom.parameters()) EXPECT_EQ(grads.find(*p), nullptr) << p->name;
  EXPECT_EQ(grads.find(ctrl.k_param), nullptr);
}

TEST(TrainController, RegularizationShrinksPolicy) {
  auto rom = mini_rom(16);
  const Matrix latents = 2.0 * random_matrix(2, 200, 17);
  double previous = 1e300;
  for (double beta3 : {0.2, 2.0, 20.0}) {
    ControllerConfig c = small_controller();
    c.beta3 = beta3;
    auto ctrl = make_controller(c, 18);
    ControllerTrainConfig cfg;
    cfg.epochs = 30;
    train_controller(rom, ctrl, latents, cfg);
    const double reg = evaluate_controller_loss(rom, ctrl, latents).reg;
    EXPECT_LT(reg, previous) << beta3;
    previous = reg;
  }
}

TEST(TrainController, Deterministic) {
  auto rom = mini_rom(19);
  const Matrix latents = random_matrix(2, 64, 20);
  auto a = make_controller(small_controller(), 21), b = make_controller(small_controller(), 21);
  ControllerTrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 4;
  train_controller(rom, a, latents, cfg);
  train_controller(rom, b, latents, cfg);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
}

TEST(Act, ComposesPolicyAndEncoder) {
  const auto rom = mini_rom(22);
  auto ctrl = make_controller(small_controller(), 23);
  ctrl.set_offset(Vector{{0.5, -0.5}});
  const Vector x = random_matrix(8, 1, 24);
  const Vector u = ctrl.act(rom, x);
  EXPECT_EQ(u.size(), 1);
  EXPECT_EQ(u, ctrl.policy(Vector(rom.encode(x) - ctrl.offset())));
  EXPECT_EQ(u, ctrl.act(rom, x));
}

linear::LinearRom scalar_rom(double a, double b) {
  return {Matrix::Identity(1, 1), Matrix::Identity(1, 1), Matrix::Constant(1, 1, a),
          Matrix::Constant(1, 1, b)};
}

TEST(Lqr, ScalarRiccatiClosedForm) {
  const auto lqr = lqr_fit(scalar_rom(1.1, 1.0));
  const double p = (1.21 + std::sqrt(1.21 * 1.21 + 4.0)) / 2.0;
  EXPECT_NEAR(lqr.gain(0, 0), 1.1 * p / (1.0 + p), 1e-10);
  EXPECT_NEAR(lqr.act(Vector::Ones(1))[0], -lqr.gain(0, 0), 1e-15);
}

TEST(Lqr, UncontrollableStableGivesZeroGain) {
  linear::LinearRom rom{Matrix::Identity(2, 2), Matrix::Identity(2, 2),
                        Matrix{{0.5, 0.1}, {0.0, 0.3}}, Matrix::Zero(2, 1)};
  EXPECT_LE(lqr_fit(rom).gain.norm(), 1e-14);
}

TEST(Lqr, UnstabilizableIsRejected) {
  EXPECT_THROW(lqr_fit(scalar_rom(2.0, 0.0)), std::runtime_error);
  EXPECT_THROW(lqr_fit(scalar_rom(0.5, 1.0), 0.0, 1.0), std::invalid_argument);
}

TEST(Lqr, DmdcRomOfReactionDiffusionDataIsStabilized) {
  pde::DatasetOptions o;
  o.count = 20;
  o.steps = 50;
  const auto ds = pde::generate_dataset(o, {}, {});
  const auto rom = linear::fit_dmdc(linear::assemble_snapshots(ds), 2, 3);
  const auto lqr = lqr_fit(rom);
  const auto eig = linalg::eig(rom.a_r - rom.b_r * lqr.gain);
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) EXPECT_LT(std::abs(eig.values[i]), 1.0);
}

TEST(ClosedLoop, ZeroPolicyAtEquilibrium) {
  pde::Grid g;
  const auto r = closed_loop_sim([](const Vector&) { return Vector(Vector::Zero(1)); },
                                 Vector::Zero(256), 1.0, {}, g);
  EXPECT_EQ(r.states.cols(), 101);
  EXPECT_EQ(r.mse.maxCoeff(), 0.0);
  EXPECT_EQ(r.actuation_cumulative(), 0.0);
  EXPECT_DOUBLE_EQ(r.times[100], 1.0);
}

TEST(ClosedLoop, UncontrolledReferenceStateSettlesNearPlusOne) {
  pde::Grid g;
  const Vector x0 = reference_initial_state(g);
  EXPECT_NEAR(x0[0], 1.0, 1e-12);  // 2 + cos(-2 pi) cos(-pi)
  const auto r = closed_loop_sim([](const Vector&) { return Vector(Vector::Zero(1)); }, x0, 5.0,
                                 {}, g);
  const Vector last = r.states.col(r.states.cols() - 1);
  EXPECT_GT(last.minCoeff(), 0.9);
  EXPECT_LT(last.maxCoeff(), 1.1);
  EXPECT_GT(r.mse[r.mse.size() - 1], 0.8);
}

TEST(ClosedLoop, CumulativeActuationIsLeftRiemannSum) {
  pde::Grid g;
  const Vector x0 = 0.1 * reference_initial_state(g);
  const Policy policy = [](const Vector& x) { return Vector(Vector::Constant(1, -5.0 * x.mean())); };
  const auto r = closed_loop_sim(policy, x0, 0.5, {}, g);
  ASSERT_EQ(r.actuations.cols(), 50);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < 50; ++i) {
    EXPECT_EQ(r.actuations(0, i), -5.0 * r.states.col(i).mean());
    EXPECT_EQ(r.states.col(i + 1), pde::step(r.states.col(i), r.actuations(0, i), {}, g));
    sum += std::abs(r.actuations(0, i)) * 0.01;
    EXPECT_EQ(r.cumulative[i + 1], sum);
  }
  for (Eigen::Index i = 0; i <= 50; ++i) EXPECT_EQ(r.mse[i], r.states.col(i).squaredNorm() / 256.0);
}

TEST(ClosedLoopIo, CsvAndHistoryRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "rom_closed_loop_io";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  pde::Grid g;
  const auto r = closed_loop_sim([](const Vector&) { return Vector(Vector::Ones(1)); },
                                 reference_initial_state(g), 0.05, {}, g);
  write_closed_loop_csv(dir / "trace.csv", r);
  std::ifstream in(dir / "trace.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 7u);
  EXPECT_EQ(lines[0], "t,mse,u,cumulative_actuation");
  EXPECT_EQ(lines[1].substr(0, 2), "0,");
  EXPECT_NE(lines[6].find(",,"), std::string::npos);

  write_state_history(dir / "history", r, 0.01);
  EXPECT_EQ(read_state_history(dir / "history"), r.states);
  {
    std::fstream f(dir / "history" / "history.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put('\x7f');
  }
  EXPECT_THROW(read_state_history(dir / "history"), io::FormatError);
  std::filesystem::remove_all(dir);
}

TEST(ControllerIo, CheckpointRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "rom_controller_io";
  std::filesystem::remove_all(dir);
  auto ctrl = make_controller({}, 25);
  ctrl.set_offset(Vector{{1.5, -2.5}});
  save_controller(ctrl, dir);
  const auto back = load_controller(dir);
  EXPECT_EQ(back.offset(), ctrl.offset());
  EXPECT_EQ(back.k(), ctrl.k());
  EXPECT_FALSE(back.k_param.trainable);
  const Vector z = random_matrix(2, 1, 26);
  EXPECT_EQ(back.target_rhs(z), ctrl.target_rhs(z));
  EXPECT_EQ(back.policy(z), ctrl.policy(z));
  EXPECT_THROW(deep::load_deeprom(dir), io::FormatError);

  write_controller_csv(dir / "log.csv", {{0, 1.0, 0.5, 2.5, 0.001}});
  std::ifstream in(dir / "log.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,loss,ctrl_loss,reg_loss,lr");
  std::filesystem::remove_all(dir);
}

}  // namespace
