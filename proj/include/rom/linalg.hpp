#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace rom::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using Index = Eigen::Index;

/// Raised when an iterative kernel fails to converge.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, int iterations)
      : std::runtime_error(what + " (after " + std::to_string(iterations) +
                           " iterations)"),
        iterations_(iterations) {}
  int iterations() const { return iterations_; }

 private:
  int iterations_;
};

/// Singular value decomposition m = u * diag(s) * vt.
///
/// Thin form: u is rows x k, vt is k x cols with k = min(rows, cols).
/// Full form: u is rows x rows and vt is cols x cols; s still has k entries.
struct SvdResult {
  Matrix u;
  Vector s;  // non-negative, non-increasing
  Matrix vt;
};

/// Eigenpairs of a real square matrix, sorted by descending |value|.
/// Eigenvectors are columns with unit 2-norm.
struct EigResult {
  ComplexVector values;
  ComplexMatrix vectors;
};

void require_finite(const Matrix& m, std::string_view what);

/// One-sided Jacobi SVD (Householder QR preconditioning for tall inputs).
/// Throws ConvergenceError if the sweeps do not converge.
SvdResult svd(const Matrix& m, bool full = false);

/// Leading r singular triplets of svd(m). Requires 1 <= r <= min(rows, cols).
SvdResult truncated_svd(const Matrix& m, Index r);

/// Moore-Penrose pseudoinverse. Singular values below tol * s_max are treated
/// as zero; the default tol is 1e-12 * max(rows, cols).
Matrix pinv(const Matrix& m, std::optional<double> tol = std::nullopt);

/// Minimum-norm least-squares solution of a * x = b.
Matrix lstsq(const Matrix& a, const Matrix& b);

/// Eigendecomposition of a small (<= 64) real square matrix.
EigResult eig(const Matrix& m);

double spectral_radius(const Matrix& m);

struct DareOptions {
  int max_iterations = 10000;
  double tolerance = 1e-12;  // max-norm change between iterates
};

/// One application of the discrete Riccati map
///   p -> q + a'pa - a'pb (r + b'pb)^-1 b'pa.
Matrix riccati_map(const Matrix& a, const Matrix& b, const Matrix& q,
                   const Matrix& r, const Matrix& p);

/// Stabilizing solution of the discrete algebraic Riccati equation, by
/// fixed-point iteration of riccati_map starting from p = q.
Matrix solve_dare(const Matrix& a, const Matrix& b, const Matrix& q,
                  const Matrix& r, const DareOptions& options = {});

/// Feedback gain (r + b'pb)^-1 b'pa so that u = -gain * x.
Matrix dare_gain(const Matrix& a, const Matrix& b, const Matrix& r,
                 const Matrix& p);

}  // namespace rom::linalg
