#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "rom/control.hpp"
#include "rom/deeprom.hpp"
#include "rom/linear_rom.hpp"
#include "rom/pde.hpp"

namespace rom::harness {

namespace fs = std::filesystem;
using nlohmann::json;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kSchemaVersion = 1;

/// Every accepted key with its default value.
json default_config();

/// Overlays `user` on the defaults. Unknown keys and type mismatches throw
/// ConfigError naming the dotted key path.
json resolve_config(const json& user);

struct DataSettings {
  pde::DatasetOptions train;
  pde::DatasetOptions test;
  pde::SimParams params;
  pde::Grid grid;
};

struct DmdcSettings {
  std::size_t rx = 5;
  std::size_t rxu = 6;
};

struct LaromSettings {
  std::size_t rx = 3;
  linear::LaromOptions options;
};

struct DeepRomSettings {
  deep::ModelConfig model;
  deep::TrainConfig train;
};

struct ControlSettings {
  DeepRomSettings rom;
  control::ControllerConfig controller;
  control::ControllerTrainConfig train;
  DmdcSettings dmdc;
  double lqr_q = 1.0;
  double lqr_r = 1.0;
  double horizon = 5.0;
};

struct RunConfig {
  json resolved;
  std::vector<std::uint64_t> seeds;
  DataSettings data;
  DmdcSettings dmdc;
  LaromSettings larom;
  DeepRomSettings deeprom;
  ControlSettings control;
  std::vector<std::string> pred_methods;
  std::size_t pred_horizon = 50;
  std::string train_model;
  DmdcSettings modes_dmdc;

  /// Resolves and validates; `seed` replaces the seed list when given.
  static RunConfig from_json(const json& user, std::optional<std::uint64_t> seed = std::nullopt);
  static RunConfig load(const fs::path& path, std::optional<std::uint64_t> seed = std::nullopt);
};

/// Output layout below the run root.
struct Layout {
  fs::path root;

  fs::path train_data() const { return root / "data" / "train"; }
  fs::path test_data() const { return root / "data" / "test"; }
  fs::path model(const std::string& method) const { return root / "models" / method; }
  fs::path model(const std::string& method, std::uint64_t seed) const;
  fs::path control(std::uint64_t seed) const;
  fs::path eval_pred() const { return root / "eval_pred"; }
  fs::path eval_ctrl() const { return root / "eval_ctrl"; }
  fs::path modes() const { return root / "modes"; }
};

/// Writes dir/config.resolved.json.
void write_resolved_config(const fs::path& dir, const RunConfig& config);

/// Maps (x0, actuations) to the predicted states t_0..t_n as columns.
using Predictor = std::function<Matrix(const Vector& x0, const Vector& actuations)>;

/// NMSE(t_k) = sum_s |xhat_s(t_k) - x_s(t_k)|^2 / sum_s |x_s(t_k)|^2 for
/// k = 0..horizon, over every sequence of `ds`. A zero denominator yields
/// 0 when the numerator is 0 as well and +inf otherwise.
Vector nmse_curve(const Predictor& predictor, const pde::TrajectoryDataset& ds,
                  std::size_t horizon);

Predictor linear_predictor(const linear::LinearRom& rom);
Predictor deeprom_predictor(const deep::DeepRom& model);

/// Singular values of a snapshot block via its Gram matrix, descending.
Vector singular_values(const Matrix& m);

// Commands. Each writes its outputs plus a resolved-config copy and returns
// a summary that is also stored as JSON.
json cmd_gen_data(const RunConfig& config, const Layout& layout);
/// model is one of dmdc, larom, deeprom; empty selects config "train.model".
json cmd_train(const RunConfig& config, const Layout& layout, const std::string& model = "");
json cmd_train_ctrl(const RunConfig& config, const Layout& layout);
json cmd_eval_pred(const RunConfig& config, const Layout& layout);
json cmd_eval_ctrl(const RunConfig& config, const Layout& layout);
json cmd_modes(const RunConfig& config, const Layout& layout);

}  // namespace rom::harness
