#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "rom/autodiff.hpp"
#include "rom/nn.hpp"
#include "rom/pde.hpp"

namespace rom::deep {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  std::size_t nodes = 256;
  std::size_t rx = 5;
  std::size_t du = 1;
  double dt = 0.01;
  std::size_t channels = 32;
  std::size_t fc_hidden = 64;
  std::size_t dyn_hidden = 100;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Convolutional autoencoder plus the split latent vector field
/// F(z, u) = F_auto(z) + F_forced(z, u) - F_forced(z, 0).
///
/// Encoder: conv(1->C, k3 s2 p1) ReLU, conv(C->C, k3 s2 p1), flatten,
/// FC -> fc_hidden ReLU, FC -> rx without bias. The decoder mirrors it with
/// transposed convolutions (output padding 1) and ReLU after every layer but
/// the last.
class DeepRom {
 public:
  DeepRom() = default;
  explicit DeepRom(ModelConfig config);

  void init(Rng& rng);
  const ModelConfig& config() const { return config_; }

  nn::ParameterRefs parameters();
  nn::ParameterRefs autoencoder_parameters();
  nn::ParameterRefs dynamics_parameters();
  /// Marks every parameter trainable or frozen.
  void set_trainable(bool trainable);

  // Tape forms. Fields are [batch, nodes]; latents [batch, rx]; u [batch, du].
  nn::Var encode(nn::Tape& tape, nn::Var x) const;
  nn::Var decode(nn::Tape& tape, nn::Var z) const;
  nn::Var latent_rhs(nn::Tape& tape, nn::Var z, nn::Var u) const;
  /// One RK4 step of length dt with u held constant.
  nn::Var predict_next(nn::Tape& tape, nn::Var z, nn::Var u) const;

  // Gradient-free forms on columns.
  Matrix encode(const Matrix& x) const;
  Matrix decode(const Matrix& z) const;
  Vector encode(const Vector& x) const;
  Vector decode(const Vector& z) const;
  Vector latent_rhs(const Vector& z, const Vector& u) const;
  Vector predict_next(const Vector& z, const Vector& u) const;

  nn::Conv1d enc_conv1, enc_conv2;
  nn::Linear enc_fc1, enc_fc2;
  nn::Linear dec_fc1, dec_fc2;
  nn::ConvTranspose1d dec_conv1, dec_conv2;
  nn::Mlp f_auto, f_forced;

 private:
  ModelConfig config_;
  std::size_t len1_ = 0;  // after the first conv
  std::size_t len2_ = 0;  // after the second conv
};

/// Rank-2 tensor [cols, rows] holding the columns of m as rows.
nn::Tensor rows_tensor(const Matrix& m);
Matrix columns_matrix(const nn::Tensor& t);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch = 32;
  double lr = 1e-3;
  double lr_decay = 0.99;
  double beta2 = 1.0;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  /// Leave the encoder and decoder at their initial values.
  bool freeze_autoencoder = false;
  bool keep_best = true;  // false: return the last epoch's parameters

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  std::vector<std::size_t> train_sequences;
  std::vector<std::size_t> validation_sequences;
};

/// Transition pairs (x_i, u_i, x_{i+1}) from a set of sequences, one per row.
struct Transitions {
  nn::Tensor x;       // [n, nodes]
  nn::Tensor u;       // [n, du]
  nn::Tensor x_next;  // [n, nodes]
  std::size_t size() const { return x.shape().empty() ? 0 : x.dim(0); }
};
Transitions collect_transitions(const pde::TrajectoryDataset& ds,
                                const std::vector<std::size_t>& sequences);
/// The rows listed in `index`, in that order.
Transitions gather(const Transitions& t, const std::vector<std::size_t>& index);

/// Sequence-level split; both lists sorted. At least one sequence goes to
/// each side.
void split_sequences(std::size_t count, double validation_fraction, std::uint64_t seed,
                     std::vector<std::size_t>& train, std::vector<std::size_t>& validation);

/// L_pred + beta2 L_recon on one batch. L_pred is the mean squared latent
/// one-step error; L_recon the mean squared reconstruction error over the
/// batch states plus the zero field.
nn::Var deeprom_loss(nn::Tape& tape, const DeepRom& model, const Transitions& batch,
                     double beta2);
/// Row-weighted mean of deeprom_loss over consecutive chunks of `batch`
/// rows, without gradients. Use the training batch size so the zero-field
/// term carries the same weight as in training.
double evaluate_loss(const DeepRom& model, const Transitions& data, double beta2,
                     std::size_t batch = 32);

/// Adam over the model parameters with per-epoch decay; the returned model
/// holds the parameters of the epoch with the lowest validation loss.
TrainResult train_deeprom(DeepRom& model, const pde::TrajectoryDataset& ds,
                          const TrainConfig& config);

struct Rollout {
  Matrix states;  // nodes x (steps + 1), decoded predictions
  Matrix latents; // rx x (steps + 1)
  bool truncated = false;
};
/// Encode x0 once, integrate the latent state recursively, decode each step.
/// A non-finite latent stops the rollout early with `truncated` set.
Rollout rollout(const DeepRom& model, const Vector& x0, const Matrix& actuations);

void write_training_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log);

void save_deeprom(DeepRom& model, const std::filesystem::path& dir,
                  const nlohmann::json& meta = nlohmann::json::object());
DeepRom load_deeprom(const std::filesystem::path& dir);

}  // namespace rom::deep
