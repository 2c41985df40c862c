#include "rom/control.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "rom/io.hpp"
#include "rom/linalg.hpp"
#include "rom/log.hpp"
#include "rom/optim.hpp"

namespace rom::control {

using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

constexpr double kGradGuard = 1e-12;
constexpr std::uint64_t kControllerShuffleStream = 0x4354524cULL;

Tensor latent_rows(const Matrix& latents, const std::vector<std::size_t>& cols) {
  const auto rx = static_cast<std::size_t>(latents.rows());
  Tensor t(Shape{cols.size(), rx});
  for (std::size_t r = 0; r < cols.size(); ++r)
    for (std::size_t k = 0; k < rx; ++k)
      t[r * rx + k] = latents(Eigen::Index(k), Eigen::Index(cols[r]));
  return t;
}

}  // namespace

void ControllerConfig::validate() const {
  if (rx == 0 || du == 0 || hidden == 0) throw std::invalid_argument("ControllerConfig: widths must be positive");
  if (!(k_scale > 0.0)) throw std::invalid_argument("ControllerConfig: K must be positive definite");
  if (!(alpha > 0.0)) throw std::invalid_argument("ControllerConfig: alpha must be positive");
  if (!(beta3 >= 0.0)) throw std::invalid_argument("ControllerConfig: beta3 must be non-negative");
}

nlohmann::json ControllerConfig::to_json() const {
  return {{"r_x", rx},         {"d_u", du},       {"hidden", hidden},
          {"k_scale", k_scale}, {"alpha", alpha}, {"beta3", beta3}};
}

ControllerConfig ControllerConfig::from_json(const nlohmann::json& j) {
  ControllerConfig c;
  c.rx = j.at("r_x").get<std::size_t>();
  c.du = j.at("d_u").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.k_scale = j.at("k_scale").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.beta3 = j.at("beta3").get<double>();
  c.validate();
  return c;
}

DeepRoc::DeepRoc(ControllerConfig config) : config_(config) {
  config_.validate();
  p_net = nn::Mlp("p", nn::MlpSpec::relu_net(config_.rx, config_.hidden, config_.rx));
  pi_net = nn::Mlp("pi", nn::MlpSpec::relu_net(config_.rx, config_.hidden, config_.du));
  k_param = {"k", Tensor::from_matrix(config_.k_scale * Matrix::Identity(Eigen::Index(config_.rx),
                                                                        Eigen::Index(config_.rx))),
             false};
  offset_param = {"offset", Tensor(Shape{config_.rx}), false};
}

void DeepRoc::init(Rng& rng) {
  p_net.init(rng);
  pi_net.init(rng);
}

nn::ParameterRefs DeepRoc::trainable_parameters() {
  nn::ParameterRefs out;
  p_net.collect(out);
  pi_net.collect(out);
  return out;
}

nn::ParameterRefs DeepRoc::parameters() {
  auto out = trainable_parameters();
  out.push_back(&k_param);
  out.push_back(&offset_param);
  return out;
}

Matrix DeepRoc::k() const { return k_param.value.to_matrix(); }

Vector DeepRoc::offset() const {
  return Eigen::Map<const Vector>(offset_param.value.data(), Eigen::Index(config_.rx));
}

void DeepRoc::set_offset(const Vector& offset) {
  if (static_cast<std::size_t>(offset.size()) != config_.rx) {
    throw std::invalid_argument("set_offset: expected " + std::to_string(config_.rx) + " entries");
  }
  offset_param.value = Tensor(Shape{config_.rx}, std::vector<double>(offset.begin(), offset.end()));
}

std::pair<double, Vector> DeepRoc::lyapunov(const Vector& z) const {
  const Matrix kk = k();
  return {z.dot(kk * z), 2.0 * kk * z};
}

Var DeepRoc::lyapunov(Tape& tape, Var z) const {
  Var kz = nn::matmul(z, tape.param(k_param));  // rows of (K z)^T, K symmetric
  return nn::row_dot(z, kz);
}

Var DeepRoc::target_rhs(Tape& tape, Var z) const {
  Var p = p_net.forward(tape, z);
  Var grad = 2.0 * nn::matmul(z, tape.param(k_param));
  Var v = 0.5 * nn::row_dot(z, grad);
  Var num = nn::relu(nn::row_dot(grad, p) + config_.alpha * v);
  Var den = nn::row_dot(grad, grad);
  Var fs = p - nn::scale_rows(grad, nn::guarded_div(num, den, kGradGuard));

  const Tensor& d = den.value();
  bool any_guarded = false;
  Tensor keep(Shape{d.size(), 1}, 1.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] < kGradGuard) {
      keep[i] = 0.0;
      any_guarded = true;
    }
  }
  return any_guarded ? nn::scale_rows(fs, tape.constant(keep)) : fs;
}

Var DeepRoc::policy(Tape& tape, Var z) const { return pi_net.forward(tape, z); }

Vector DeepRoc::target_rhs(const Vector& z) const {
  Tape tape(false);
  return deep::columns_matrix(target_rhs(tape, tape.constant(deep::rows_tensor(z))).value()).col(0);
}

Vector DeepRoc::policy(const Vector& z) const {
  Tape tape(false);
  return deep::columns_matrix(policy(tape, tape.constant(deep::rows_tensor(z))).value()).col(0);
}

Vector DeepRoc::act(const deep::DeepRom& rom, const Vector& x) const {
  return policy(Vector(rom.encode(x) - offset()));
}

void ControllerTrainConfig::validate() const {
  if (epochs == 0 || batch == 0) throw std::invalid_argument("ControllerTrainConfig: counts must be positive");
  if (!(lr > 0.0) || !(lr_decay > 0.0 && lr_decay <= 1.0)) {
    throw std::invalid_argument("ControllerTrainConfig: lr > 0 and lr_decay in (0, 1] required");
  }
}

Matrix training_latents(const deep::DeepRom& rom, const pde::TrajectoryDataset& ds,
                        const std::vector<std::size_t>& sequences) {
  std::size_t n = 0;
  for (auto s : sequences) n += static_cast<std::size_t>(ds.sequences.at(s).actuations.size());
  Matrix states(Eigen::Index(ds.grid.nodes), Eigen::Index(n));
  Eigen::Index col = 0;
  for (auto s : sequences) {
    const auto& seq = ds.sequences[s];
    const auto steps = seq.actuations.size();
    states.middleCols(col, steps) = seq.states.leftCols(steps);
    col += steps;
  }
  Matrix out(Eigen::Index(rom.config().rx), Eigen::Index(n));
  constexpr Eigen::Index kChunk = 256;
  for (Eigen::Index start = 0; start < states.cols(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, states.cols() - start);
    out.middleCols(start, len) = rom.encode(Matrix(states.middleCols(start, len)));
  }
  return out;
}

namespace {

struct LossParts {
  Var total, ctrl, reg;
};

LossParts loss_parts(Tape& tape, const deep::DeepRom& rom, const DeepRoc& ctrl, const Tensor& z) {
  const std::size_t rx = ctrl.config().rx;
  Tensor centred = z;
  for (std::size_t i = 0; i < z.dim(0); ++i)
    for (std::size_t k = 0; k < rx; ++k) centred[i * rx + k] -= ctrl.offset_param.value[k];
  Var zv = tape.constant(z), zc = tape.constant(centred);
  Var u = ctrl.policy(tape, zc);
  Var ctrl_loss = nn::mean_squared_norm(rom.latent_rhs(tape, zv, u) - ctrl.target_rhs(tape, zc));
  Var reg = nn::mean_squared_norm(u);
  return {ctrl_loss + ctrl.config().beta3 * reg, ctrl_loss, reg};
}

}  // namespace

Var controller_loss(Tape& tape, const deep::DeepRom& rom, const DeepRoc& ctrl, Var z) {
  return loss_parts(tape, rom, ctrl, z.value()).total;
}

ControllerLoss evaluate_controller_loss(const deep::DeepRom& rom, const DeepRoc& ctrl,
                                        const Matrix& latents) {
  std::vector<std::size_t> all(static_cast<std::size_t>(latents.cols()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Tape tape(false);
  const auto parts = loss_parts(tape, rom, ctrl, latent_rows(latents, all));
  return {parts.total.value().item(), parts.ctrl.value().item(), parts.reg.value().item()};
}

std::vector<ControllerEpochLog> train_controller(deep::DeepRom& rom, DeepRoc& ctrl,
                                                 const Matrix& latents,
                                                 const ControllerTrainConfig& config) {
  config.validate();
  if (static_cast<std::size_t>(latents.rows()) != ctrl.config().rx ||
      rom.config().rx != ctrl.config().rx || rom.config().du != ctrl.config().du) {
    throw std::invalid_argument("train_controller: ROM, controller and latent widths differ");
  }
  if (latents.cols() == 0) throw std::invalid_argument("train_controller: no latent states");

  const auto rom_params = rom.parameters();
  std::vector<bool> was_trainable;
  for (auto* p : rom_params) {
    was_trainable.push_back(p->trainable);
    p->trainable = false;
  }
  ctrl.set_offset(rom.encode(Vector(Vector::Zero(Eigen::Index(rom.config().nodes)))));

  nn::Adam adam(ctrl.trainable_parameters(),
                nn::AdamOptions{.lr = config.lr, .epoch_decay = config.lr_decay});
  Rng rng = Rng::substream(config.seed, kControllerShuffleStream);
  std::vector<std::size_t> order(static_cast<std::size_t>(latents.cols()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<ControllerEpochLog> log;
  try {
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      const double lr = adam.lr();
      shuffle(order, rng);
      std::vector<std::size_t> index;
      for (std::size_t start = 0; start < order.size(); start += config.batch) {
        const std::size_t end = std::min(order.size(), start + config.batch);
        index.assign(order.begin() + std::ptrdiff_t(start), order.begin() + std::ptrdiff_t(end));
        Tape tape;
        Var loss = loss_parts(tape, rom, ctrl, latent_rows(latents, index)).total;
        adam.step(tape.backward(loss));
      }
      const auto l = evaluate_controller_loss(rom, ctrl, latents);
      if (!std::isfinite(l.total)) throw nn::NumericalError("non-finite controller loss");
      log.push_back({epoch, l.total, l.ctrl, l.reg, lr});
      adam.end_epoch();
    }
  } catch (const nn::NumericalError& err) {
    for (std::size_t i = 0; i < rom_params.size(); ++i) rom_params[i]->trainable = was_trainable[i];
    std::ostringstream msg;
    msg << "train_controller diverged after " << log.size() << " epochs: " << err.what();
    if (!log.empty()) msg << " (last loss " << log.back().loss << ")";
    throw nn::NumericalError(msg.str());
  }
  for (std::size_t i = 0; i < rom_params.size(); ++i) rom_params[i]->trainable = was_trainable[i];
  return log;
}

Vector LqrController::act(const Vector& x) const { return -gain * (rom.e * x); }

LqrController lqr_fit(const linear::LinearRom& rom, double q_weight, double r_weight) {
  rom.validate();
  if (!(q_weight > 0.0) || !(r_weight > 0.0)) throw std::invalid_argument("lqr_fit: weights must be positive");
  const auto rx = rom.rx(), du = rom.du();
  const Matrix q = q_weight * Matrix::Identity(rx, rx);
  const Matrix r = r_weight * Matrix::Identity(du, du);
  const Matrix p = linalg::solve_dare(rom.a_r, rom.b_r, q, r);
  LqrController out{linalg::dare_gain(rom.a_r, rom.b_r, r, p), rom, q_weight, r_weight};
  const double rho = linalg::spectral_radius(rom.a_r - rom.b_r * out.gain);
  if (!(rho < 1.0)) {
    throw std::runtime_error("lqr_fit: closed-loop spectral radius " + std::to_string(rho) + " >= 1");
  }
  return out;
}

ClosedLoopResult closed_loop_sim(const Policy& policy, const Vector& x0, double horizon,
                                 const pde::SimParams& params, const pde::Grid& grid) {
  params.validate();
  grid.validate();
  if (static_cast<std::size_t>(x0.size()) != grid.nodes) {
    throw std::invalid_argument("closed_loop_sim: x0 has the wrong length");
  }
  if (!(horizon >= 0.0)) throw std::invalid_argument("closed_loop_sim: negative horizon");
  const auto steps = static_cast<Eigen::Index>(std::llround(horizon / params.dt));
  ClosedLoopResult r;
  r.states.resize(x0.size(), steps + 1);
  r.times.resize(steps + 1);
  r.mse.resize(steps + 1);
  r.cumulative.resize(steps + 1);
  r.states.col(0) = x0;
  r.cumulative[0] = 0.0;
  for (Eigen::Index i = 0; i <= steps; ++i) {
    r.times[i] = double(i) * params.dt;
    r.mse[i] = r.states.col(i).squaredNorm() / double(x0.size());
    if (i == steps) break;
    const Vector u = policy(r.states.col(i));
    if (u.size() != 1) throw std::invalid_argument("closed_loop_sim: the plant takes one actuation");
    if (i == 0) r.actuations.resize(u.size(), steps);
    r.actuations.col(i) = u;
    r.cumulative[i + 1] = r.cumulative[i] + u.cwiseAbs().sum() * params.dt;
    r.states.col(i + 1) = pde::step(r.states.col(i), u[0], params, grid);
  }
  if (steps == 0) r.actuations.resize(1, 0);
  return r;
}

Vector reference_initial_state(const pde::Grid& grid) {
  const Vector z = grid.coordinates();
  const double pi = std::numbers::pi;
  return (2.0 + ((2.0 * pi * z.array()).cos() * (pi * z.array()).cos())).matrix();
}

void write_closed_loop_csv(const std::filesystem::path& path, const ClosedLoopResult& r) {
  std::ofstream out(path);
  if (!out) throw io::FormatError("cannot write " + path.string());
  out << "t,mse,u,cumulative_actuation\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < r.times.size(); ++i) {
    out << r.times[i] << ',' << r.mse[i] << ',';
    if (i < r.actuations.cols()) out << r.actuations(0, i);
    out << ',' << r.cumulative[i] << '\n';
  }
}

void write_state_history(const std::filesystem::path& dir, const ClosedLoopResult& r, double dt) {
  std::filesystem::create_directories(dir);
  // Column-major storage of nodes x times is time-major.
  const auto crc = io::write_f64(dir / "history.bin",
                                 std::span<const double>(r.states.data(), std::size_t(r.states.size())));
  io::write_json(dir / "history.json",
                 {{"format", "rom-history-v1"},
                  {"dtype", "float64-le"},
                  {"layout", "time-major"},
                  {"shape", {r.states.cols(), r.states.rows()}},
                  {"dt", dt},
                  {"crc32", crc}});
}

Matrix read_state_history(const std::filesystem::path& dir) {
  const auto j = io::read_json(dir / "history.json");
  if (j.value("format", "") != "rom-history-v1") throw io::FormatError("history.json: unknown format");
  const auto times = j.at("shape").at(0).get<std::size_t>(), nodes = j.at("shape").at(1).get<std::size_t>();
  const auto values = io::read_f64(dir / "history.bin", times * nodes, j.at("crc32").get<std::uint32_t>());
  return Eigen::Map<const Matrix>(values.data(), Eigen::Index(nodes), Eigen::Index(times));
}

void write_controller_csv(const std::filesystem::path& path,
                          const std::vector<ControllerEpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw io::FormatError("cannot write " + path.string());
  out << "epoch,loss,ctrl_loss,reg_loss,lr\n" << std::setprecision(17);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.loss << ',' << e.ctrl_loss << ',' << e.reg_loss << ',' << e.lr << '\n';
  }
}

void save_controller(DeepRoc& ctrl, const std::filesystem::path& dir, const nlohmann::json& meta) {
  nlohmann::json m = meta;
  m["kind"] = "deeproc";
  m["controller"] = ctrl.config().to_json();
  io::save_parameters(dir, ctrl.parameters(), m);
}

DeepRoc load_controller(const std::filesystem::path& dir) {
  const auto meta = io::load_meta(dir);
  if (meta.value("kind", "") != "deeproc") throw io::FormatError(dir.string() + ": not a controller checkpoint");
  DeepRoc ctrl(ControllerConfig::from_json(meta.at("controller")));
  io::load_parameters(dir, ctrl.parameters());
  return ctrl;
}

}  // namespace rom::control
