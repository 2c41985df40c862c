#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "rom/random.hpp"

namespace rom::pde {

using Field = Eigen::VectorXd;

/// Uniform nodes on [left, right], endpoints included.
struct Grid {
  double left = -1.0;
  double right = 1.0;
  std::size_t nodes = 256;
  double actuation_lo = -0.2;
  double actuation_hi = 0.2;

  void validate() const;
  double spacing() const { return (right - left) / static_cast<double>(nodes - 1); }
  double node(std::size_t j) const { return left + spacing() * static_cast<double>(j); }
  Field coordinates() const;
  /// 1 at nodes strictly inside the actuation window, 0 elsewhere.
  Field actuation_mask() const;
};

struct SimParams {
  double sigma = 0.2;
  double dt = 0.01;
  std::size_t substeps = 10;
  bool reaction = true;  // false leaves pure diffusion, for testing

  void validate() const;
};

/// Discrete Laplacian with ghost-node zero-flux closure.
Field laplacian(const Field& q, const Grid& grid);
Field rhs(const Field& q, double w, const SimParams& params, const Grid& grid);

/// One outer step of length dt, w held constant. Each of the `substeps`
/// inner steps is Strang-split: explicit RK4 half step of the pointwise
/// reaction and actuation, Crank-Nicolson diffusion step, second half step.
Field step(const Field& q, double w, const SimParams& params, const Grid& grid);

/// Columns are the states t_0..t_n for n = actuations.size().
Eigen::MatrixXd simulate(const Field& initial, const Eigen::VectorXd& actuations,
                         const SimParams& params, const Grid& grid);

/// |a| * sum_k b_k T_k(zeta) at the grid nodes.
Field chebyshev_field(const Grid& grid, double a, const std::array<double, 5>& b);

struct InitialCondition {
  Field field;
  double a = 0.0;
  std::array<double, 5> b{};
};
/// Draws a ~ N(0,1), then b_0..b_4 ~ U(-1,1).
InitialCondition chebyshev_ic(Rng& rng, const Grid& grid);

struct Sequence {
  Eigen::MatrixXd states;       // nodes x (steps + 1)
  Eigen::VectorXd actuations;   // steps
  double a = 0.0;
  std::array<double, 5> b{};
  Eigen::VectorXd gains;        // g_i draws, steps
};

struct DatasetOptions {
  std::size_t count = 100;
  std::size_t steps = 50;
  std::uint64_t seed = 0;
  /// Sequence i uses Rng::substream(seed, stream_base + i).
  std::uint64_t stream_base = 0;
  double actuation_gain = 10.0;
};

struct TrajectoryDataset {
  Grid grid;
  SimParams params;
  DatasetOptions options;
  std::vector<Sequence> sequences;

  std::size_t steps() const { return options.steps; }
};

/// w_i = gain * g_i * max|q(t_i)| with g_i ~ U(-1,1), applied over [t_i, t_{i+1}].
TrajectoryDataset generate_dataset(const DatasetOptions& options, const SimParams& params,
                                   const Grid& grid);

bool operator==(const TrajectoryDataset& a, const TrajectoryDataset& b);

/// Directory with manifest.json plus one raw float64 file per array.
void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& dir);
TrajectoryDataset load_dataset(const std::filesystem::path& dir);
/// crc32 of every array, keyed by array name, as recorded in the manifest.
std::vector<std::pair<std::string, std::uint32_t>> dataset_checksums(
    const std::filesystem::path& dir);

/// Columns t, zeta_0..zeta_{nodes-1}; one row per state.
void write_trajectory_csv(const std::filesystem::path& path, const Eigen::MatrixXd& states,
                          const Grid& grid, double dt);

}  // namespace rom::pde
