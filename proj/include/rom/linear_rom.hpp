#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "rom/linalg.hpp"
#include "rom/pde.hpp"

namespace rom::linear {

using linalg::ComplexMatrix;
using linalg::ComplexVector;
using linalg::Index;
using linalg::Matrix;
using linalg::Vector;

/// Raised when a Gram matrix is singular and no regularization is allowed,
/// or when the data rank is below a requested truncation.
class RankError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// y: successor states (d_x x n); omega: stacked [x; u] (d_x + d_u rows).
struct SnapshotMatrices {
  Matrix y;
  Matrix omega;
  Index dx = 0;
  Index du = 0;

  Index n() const { return y.cols(); }
  auto x() const { return omega.topRows(dx); }
  auto u() const { return omega.bottomRows(du); }
};

/// states[s]: d_x x (n_s + 1), actuations[s]: d_u x n_s. Transitions never
/// cross sequence boundaries.
SnapshotMatrices assemble_snapshots(const std::vector<Matrix>& states,
                                    const std::vector<Matrix>& actuations);
SnapshotMatrices assemble_snapshots(const pde::TrajectoryDataset& ds);

struct LinearRom {
  Matrix e;    // r_x x d_x
  Matrix d;    // d_x x r_x
  Matrix a_r;  // r_x x r_x
  Matrix b_r;  // r_x x d_u

  Index rx() const { return a_r.rows(); }
  Index dx() const { return e.cols(); }
  Index du() const { return b_r.cols(); }
  Matrix g() const;  // [a_r b_r]
  void validate() const;
};

/// Truncated-SVD DMDc. Requires r_x < r_xu < min(d_x + d_u, n).
LinearRom fit_dmdc(const SnapshotMatrices& snap, Index rx, Index rxu);

/// D (A E x + B u).
Vector rom_predict(const LinearRom& rom, const Vector& x, const Vector& u);
/// Recursive rollout from x0 in the latent space; columns are decoded states
/// t_0..t_n where n = u.cols().
Matrix rom_rollout(const LinearRom& rom, const Vector& x0, const Matrix& u);

/// blkdiag(E, I_du).
Matrix stacked_encoder(const Matrix& e, Index du);

struct ClosedFormOptions {
  /// Regularize instead of failing when the projected Gram is singular.
  bool allow_ridge = true;
  /// Ridge weight relative to trace(Gram) / size. Zero selects the
  /// vanishing-ridge limit, i.e. the minimum-norm solution rhs * Gram^+.
  double ridge_scale = 0.0;
};

/// G = E Y Omega^T Exu^T (Exu Omega Omega^T Exu^T)^{-1}. A singular Gram
/// falls back to the regularized solution when allowed.
Matrix closed_form_G(const SnapshotMatrices& snap, const Matrix& e,
                     const ClosedFormOptions& options = {});
/// ||G Gram - rhs||_F / ||rhs||_F for the normal equations of L_pred.
double normal_equation_residual(const SnapshotMatrices& snap, const Matrix& e, const Matrix& g);
/// (1/n) sum ||E y_i - G Exu omega_i||^2.
double pred_loss(const SnapshotMatrices& snap, const Matrix& e, const Matrix& g);
/// Lipschitz constant of the L_pred gradient in G: 2 lambda_max(Gram) / n.
double pred_loss_lipschitz(const SnapshotMatrices& snap, const Matrix& e);

/// Leading r_x left singular vectors of Y, transposed.
Matrix dmdc_encoder(const SnapshotMatrices& snap, Index rx);
/// E Y V (Exu U Sigma)^+ from the full SVD of Omega, with E = U_Y^T.
Matrix pinv_G(const SnapshotMatrices& snap, Index rx);
/// Same form with Omega's SVD truncated to r_xu terms.
Matrix truncated_pinv_G(const SnapshotMatrices& snap, Index rx, Index rxu);

struct LaromOptions {
  double beta1 = 1.0;
  double beta4 = 1.0;
  std::size_t iterations = 2000;
  double lr = 1e-3;
  /// Stop once ||grad|| <= grad_tol * (1 + |initial loss|).
  double grad_tol = 1e-6;
  std::uint64_t seed = 0;
  enum class Method { kAdam, kGradientDescent } method = Method::kAdam;
  /// When false the encoder stays at its initial value and only G moves.
  bool train_encoder = true;
  std::optional<Matrix> initial_encoder;
  std::optional<Matrix> initial_g;
};

struct LaromResult {
  LinearRom rom;
  std::vector<double> loss;  // at each visited iterate, including the last
  double grad_norm = 0.0;    // at the returned parameters
  std::size_t iterations = 0;  // updates applied
  bool converged = false;
};

/// L_pred + beta1 L_recon + beta4 ||E E^T - I||_F^2 with D = E^T, full batch.
LaromResult fit_larom(const SnapshotMatrices& snap, Index rx, const LaromOptions& options);
/// The same objective evaluated directly.
double larom_loss(const SnapshotMatrices& snap, const Matrix& e, const Matrix& g,
                  double beta1, double beta4);

/// Replaces the n snapshot columns by k = rank-bounded columns with the same
/// second moments, so every quadratic loss over the data is unchanged when
/// divided by the original n (kept in `weight_n`).
struct CompressedSnapshots {
  SnapshotMatrices snap;
  double weight_n = 0.0;
};
CompressedSnapshots compress_snapshots(const SnapshotMatrices& snap);

struct DynamicModeSet {
  ComplexMatrix modes;  // d_x x r_x, unit columns
  ComplexVector eigenvalues;
};

/// phi_i = D z_i for eigenvectors z_i of A_R; ordered by descending |lambda|,
/// unit 2-norm, phase chosen so the largest-magnitude entry is real positive.
DynamicModeSet dynamic_modes(const LinearRom& rom);

struct ModeMatch {
  std::vector<Index> partner;  // partner[i] = index in b matched to mode i of a
  std::vector<double> scores;  // |<phi_a, phi_b>|
  std::vector<double> eigenvalue_gaps;
  double mean_score = 0.0;
};

/// Pairs modes by minimum total eigenvalue distance and scores alignment.
ModeMatch match_modes(const DynamicModeSet& a, const DynamicModeSet& b);

void save_linear_rom(const LinearRom& rom, const std::filesystem::path& dir,
                     const nlohmann::json& meta = nlohmann::json::object());
LinearRom load_linear_rom(const std::filesystem::path& dir);

/// Columns zeta, re_phi_i, im_phi_i per mode; one row per node.
void write_modes_csv(const std::filesystem::path& path, const DynamicModeSet& modes,
                     const Vector& zeta);

}  // namespace rom::linear
