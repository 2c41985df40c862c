#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "rom/deeprom.hpp"
#include "rom/linear_rom.hpp"
#include "rom/nn.hpp"
#include "rom/pde.hpp"

namespace rom::control {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ControllerConfig {
  std::size_t rx = 2;
  std::size_t du = 1;
  std::size_t hidden = 100;
  double k_scale = 0.5;  // K = k_scale * I
  double alpha = 0.2;
  double beta3 = 0.2;

  void validate() const;
  nlohmann::json to_json() const;
  static ControllerConfig from_json(const nlohmann::json& j);
};

/// Stability-constrained latent controller. Latents are measured relative to
/// `offset`, the encoding of the target field, so the target sits at 0.
class DeepRoc {
 public:
  DeepRoc() = default;
  explicit DeepRoc(ControllerConfig config);

  void init(Rng& rng);
  const ControllerConfig& config() const { return config_; }
  nn::ParameterRefs parameters();  // trainable nets plus frozen K and offset
  nn::ParameterRefs trainable_parameters();

  Matrix k() const;
  Vector offset() const;
  void set_offset(const Vector& offset);

  /// V = z^T K z and its gradient 2 K z.
  std::pair<double, Vector> lyapunov(const Vector& z) const;

  // Tape forms on rows [batch, rx].
  nn::Var lyapunov(nn::Tape& tape, nn::Var z) const;  // [batch, 1]
  /// P(z) - relu(grad V . P + alpha V) / |grad V|^2 grad V, and exactly 0
  /// where |grad V|^2 < 1e-12.
  nn::Var target_rhs(nn::Tape& tape, nn::Var z) const;
  nn::Var policy(nn::Tape& tape, nn::Var z) const;

  Vector target_rhs(const Vector& z) const;
  Vector policy(const Vector& z) const;
  /// Pi(E(x) - offset).
  Vector act(const deep::DeepRom& rom, const Vector& x) const;

  nn::Mlp p_net, pi_net;
  nn::Parameter k_param;       // [rx, rx], frozen
  nn::Parameter offset_param;  // [rx], frozen

 private:
  ControllerConfig config_;
};

struct ControllerTrainConfig {
  std::size_t epochs = 100;
  std::size_t batch = 32;
  double lr = 1e-3;
  double lr_decay = 0.99;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ControllerEpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double ctrl_loss = 0.0;
  double reg_loss = 0.0;
  double lr = 0.0;
};

struct ControllerLoss {
  double total = 0.0;
  double ctrl = 0.0;  // mean |F(z, Pi(z - c)) - F_s(z - c)|^2
  double reg = 0.0;   // mean |Pi(z - c)|^2
};

/// Encoded states of every snapshot x(t_i), i < steps, of the given sequences.
Matrix training_latents(const deep::DeepRom& rom, const pde::TrajectoryDataset& ds,
                        const std::vector<std::size_t>& sequences);

/// L_ctrl + beta3 L_reg on latent rows z (absolute coordinates). z is read
/// as a constant; gradients reach only the controller.
nn::Var controller_loss(nn::Tape& tape, const deep::DeepRom& rom, const DeepRoc& ctrl,
                        nn::Var z);
ControllerLoss evaluate_controller_loss(const deep::DeepRom& rom, const DeepRoc& ctrl,
                                        const Matrix& latents);

/// Trains P and Pi with the ROM frozen. The controller's offset is set to
/// E(0) before training. Latents are columns (rx x n).
std::vector<ControllerEpochLog> train_controller(deep::DeepRom& rom, DeepRoc& ctrl,
                                                 const Matrix& latents,
                                                 const ControllerTrainConfig& config);

struct LqrController {
  Matrix gain;  // du x rx
  linear::LinearRom rom;
  double q_weight = 1.0;
  double r_weight = 1.0;

  /// -gain E x.
  Vector act(const Vector& x) const;
};

/// DARE with Q = q I, R = r I on (A_R, B_R). Throws std::runtime_error if
/// the closed loop is not stable.
LqrController lqr_fit(const linear::LinearRom& rom, double q_weight = 1.0, double r_weight = 1.0);

using Policy = std::function<Vector(const Vector& x)>;

struct ClosedLoopResult {
  Matrix states;      // nodes x (steps + 1)
  Matrix actuations;  // du x steps
  Vector times;       // steps + 1
  Vector mse;         // mean(x(t_i)^2)
  Vector cumulative;  // sum_{j < i} |u_j|_1 dt, steps + 1
  double actuation_cumulative() const { return cumulative[cumulative.size() - 1]; }
};

/// Zero-order hold: u_i = policy(x_i) applied over [t_i, t_{i+1}].
ClosedLoopResult closed_loop_sim(const Policy& policy, const Vector& x0, double horizon,
                                 const pde::SimParams& params, const pde::Grid& grid);

/// 2 + cos(2 pi zeta) cos(pi zeta).
Vector reference_initial_state(const pde::Grid& grid);

/// Columns t, mse, u, cumulative_actuation; u is empty on the final row.
void write_closed_loop_csv(const std::filesystem::path& path, const ClosedLoopResult& r);
/// history.bin (time-major float64) plus history.json with shape and crc32.
void write_state_history(const std::filesystem::path& dir, const ClosedLoopResult& r, double dt);
Matrix read_state_history(const std::filesystem::path& dir);

void write_controller_csv(const std::filesystem::path& path,
                          const std::vector<ControllerEpochLog>& log);

void save_controller(DeepRoc& ctrl, const std::filesystem::path& dir,
                     const nlohmann::json& meta = nlohmann::json::object());
DeepRoc load_controller(const std::filesystem::path& dir);

}  // namespace rom::control
