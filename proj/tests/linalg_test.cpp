#include "rom/linalg.hpp"

#include <cmath>
#include <complex>
#include <numbers>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace rom::linalg {
namespace {

using rom::testing::random_matrix;
using rom::testing::rel_fro;

Matrix reconstruct(const SvdResult& d) {
  const Index k = d.s.size();
  return d.u.leftCols(k) * d.s.asDiagonal() * d.vt.topRows(k);
}

void expect_orthonormal_columns(const Matrix& m, double tol) {
  const Matrix gram = m.transpose() * m;
  EXPECT_LE((gram - Matrix::Identity(m.cols(), m.cols())).cwiseAbs().maxCoeff(), tol);
}

TEST(Svd, Identity) {
  SvdResult d = svd(Matrix::Identity(3, 3));
  EXPECT_LE((d.s - Vector::Ones(3)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((d.u * d.vt - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Svd, RankOneOuterProduct) {
  Vector a(4);
  a << 2.0, 0.0, 0.0, 0.0;
  Vector b = Vector::Zero(3);
  b(0) = 1.0;
  b(1) = 2.0;
  b(2) = 2.0;  // ||b|| = 3
  SvdResult d = svd(a * b.transpose());
  ASSERT_EQ(d.s.size(), 3);
  EXPECT_NEAR(d.s(0), 6.0, 1e-14);
  EXPECT_NEAR(d.s(1), 0.0, 1e-14);
  EXPECT_NEAR(d.s(2), 0.0, 1e-14);
  expect_orthonormal_columns(d.u, 1e-10);
  expect_orthonormal_columns(d.vt.transpose(), 1e-10);
}

TEST(Svd, RandomMatchesSymmetricEigenOracle) {
  const Matrix m = random_matrix(8, 5, 11);
  SvdResult d = svd(m);
  EXPECT_LE(rel_fro(reconstruct(d), m), 1e-12);
  expect_orthonormal_columns(d.u, 1e-10);
  expect_orthonormal_columns(d.vt.transpose(), 1e-10);

  Eigen::SelfAdjointEigenSolver<Matrix> oracle(m.transpose() * m);
  Vector expected = oracle.eigenvalues().reverse().cwiseMax(0.0).cwiseSqrt();
  EXPECT_LE((d.s - expected).cwiseAbs().maxCoeff(), 1e-12);
  for (Index i = 1; i < d.s.size(); ++i) EXPECT_GE(d.s(i - 1), d.s(i));
}

TEST(Svd, WideAndFullForms) {
  const Matrix m = random_matrix(4, 9, 3);
  SvdResult thin = svd(m);
  EXPECT_EQ(thin.u.rows(), 4);
  EXPECT_EQ(thin.vt.rows(), 4);
  EXPECT_LE(rel_fro(reconstruct(thin), m), 1e-12);

  SvdResult full = svd(m, /*full=*/true);
  EXPECT_EQ(full.u.rows(), 4);
  EXPECT_EQ(full.vt.rows(), 9);
  EXPECT_EQ(full.vt.cols(), 9);
  expect_orthonormal_columns(full.vt.transpose(), 1e-10);
  EXPECT_LE(rel_fro(reconstruct(full), m), 1e-12);

  SvdResult tall_full = svd(m.transpose(), true);
  EXPECT_EQ(tall_full.u.rows(), 9);
  EXPECT_EQ(tall_full.u.cols(), 9);
  expect_orthonormal_columns(tall_full.u, 1e-10);
}

TEST(Svd, RejectsNonFinite) {
  Matrix m = Matrix::Identity(2, 2);
  m(0, 1) = std::nan("");
  EXPECT_THROW(svd(m), std::invalid_argument);
}

TEST(Svd, ReconstructionProperty) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const Index rows = 1 + static_cast<Index>(seed % 7) * 5;
    const Index cols = 1 + static_cast<Index>((seed * 3) % 11) * 3;
    const Matrix m = random_matrix(rows, cols, 100 + seed);
    SvdResult d = svd(m);
    EXPECT_LE(rel_fro(reconstruct(d), m), 1e-12) << rows << "x" << cols;
  }
}

TEST(TruncatedSvd, Diagonal) {
  Matrix m = Vector::LinSpaced(3, 3.0, 1.0).asDiagonal();
  SvdResult d = truncated_svd(m, 2);
  ASSERT_EQ(d.s.size(), 2);
  EXPECT_NEAR(d.s(0), 3.0, 1e-15);
  EXPECT_NEAR(d.s(1), 2.0, 1e-15);
  EXPECT_NEAR(std::abs(d.u(0, 0)), 1.0, 1e-15);
  EXPECT_NEAR(std::abs(d.u(1, 1)), 1.0, 1e-15);
  EXPECT_NEAR(d.u(2, 0), 0.0, 1e-15);
  EXPECT_NEAR(d.u(2, 1), 0.0, 1e-15);
}

TEST(TruncatedSvd, NoTruncationEqualsFull) {
  const Matrix m = random_matrix(7, 4, 5);
  SvdResult full = svd(m);
  SvdResult t = truncated_svd(m, 4);
  EXPECT_LE((full.s - t.s).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE((full.u - t.u).cwiseAbs().maxCoeff(), 0.0);
}

TEST(TruncatedSvd, EckartYoungResidual) {
  const Matrix m = random_matrix(10, 6, 21);
  SvdResult full = svd(m);
  SvdResult t = truncated_svd(m, 3);
  const double residual = (m - reconstruct(t)).squaredNorm();
  const double discarded = full.s.tail(3).squaredNorm();
  EXPECT_NEAR(residual, discarded, 1e-10);
}

TEST(TruncatedSvd, RankOutOfRange) {
  const Matrix m = random_matrix(4, 3, 1);
  EXPECT_THROW(truncated_svd(m, 0), std::invalid_argument);
  EXPECT_THROW(truncated_svd(m, 4), std::invalid_argument);
}

void expect_penrose(const Matrix& a, const Matrix& x, double tol) {
  const double scale = std::max(1.0, a.norm() * x.norm());
  EXPECT_LE((a * x * a - a).norm() / std::max(1.0, a.norm()), tol);
  EXPECT_LE((x * a * x - x).norm() / std::max(1.0, x.norm()), tol);
  EXPECT_LE(((a * x).transpose() - a * x).norm() / scale, tol);
  EXPECT_LE(((x * a).transpose() - x * a).norm() / scale, tol);
}

TEST(Pinv, InvertibleMatchesInverse) {
  Matrix m(2, 2);
  m << 4.0, 7.0, 2.0, 6.0;
  EXPECT_LE((pinv(m) - m.inverse()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Pinv, ZeroMatrix) {
  const Matrix z = Matrix::Zero(3, 5);
  const Matrix p = pinv(z);
  EXPECT_EQ(p.rows(), 5);
  EXPECT_EQ(p.cols(), 3);
  EXPECT_EQ(p.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Pinv, RankDeficientPenroseConditions) {
  const Matrix m = random_matrix(6, 2, 8) * random_matrix(2, 4, 9);
  expect_penrose(m, pinv(m), 1e-10);
}

TEST(Pinv, DoublePinvOfFullRank) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix m = random_matrix(5, 3, 300 + seed);
    EXPECT_LE(rel_fro(pinv(pinv(m)), m), 1e-10);
  }
}

TEST(Eig, Diagonal) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = -1.0;
  m(1, 1) = 5.0;
  EigResult e = eig(m);
  EXPECT_NEAR(e.values(0).real(), 5.0, 1e-14);
  EXPECT_NEAR(e.values(1).real(), -1.0, 1e-14);
  EXPECT_NEAR(std::abs(e.vectors(1, 0)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(e.vectors(0, 1)), 1.0, 1e-14);
}

TEST(Eig, Rotation) {
  const double th = std::numbers::pi / 4.0;
  Matrix m(2, 2);
  m << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  EigResult e = eig(m);
  EXPECT_NEAR(e.values(0).real(), std::cos(th), 1e-14);
  EXPECT_NEAR(e.values(1).real(), std::cos(th), 1e-14);
  EXPECT_NEAR(std::abs(e.values(0).imag()), std::sin(th), 1e-14);
  EXPECT_NEAR(e.values(0).imag(), -e.values(1).imag(), 1e-14);
}

TEST(Eig, DeterminantOracleAndResiduals) {
  const Matrix m = random_matrix(5, 5, 77);
  EigResult e = eig(m);
  std::complex<double> prod = 1.0;
  for (Index i = 0; i < e.values.size(); ++i) prod *= e.values(i);
  const double det = Eigen::FullPivLU<Matrix>(m).determinant();
  EXPECT_LE(std::abs(prod - det), 1e-8 * std::abs(det));

  const ComplexMatrix mc = m.cast<std::complex<double>>();
  const double norm = m.norm();
  for (Index i = 0; i < e.values.size(); ++i) {
    EXPECT_LE((mc * e.vectors.col(i) - e.values(i) * e.vectors.col(i)).norm(),
              1e-8 * norm);
    EXPECT_NEAR(e.vectors.col(i).norm(), 1.0, 1e-12);
    if (i > 0) {
      EXPECT_GE(std::abs(e.values(i - 1)) + 1e-12, std::abs(e.values(i)));
    }
  }
}

TEST(Eig, RejectsNonSquare) {
  EXPECT_THROW(eig(Matrix::Zero(2, 3)), std::invalid_argument);
  EXPECT_THROW(eig(Matrix::Zero(65, 65)), std::invalid_argument);
}

TEST(Dare, MemorylessScalar) {
  Matrix a = Matrix::Zero(1, 1), b = Matrix::Ones(1, 1);
  Matrix q = Matrix::Constant(1, 1, 2.5), r = Matrix::Ones(1, 1);
  EXPECT_NEAR(solve_dare(a, b, q, r)(0, 0), 2.5, 1e-15);
}

TEST(Dare, ScalarClosedForm) {
  // p = q + a^2 p - a^2 p^2 b^2 / (r + b^2 p)  rearranges to
  // b^2 p^2 + (r(1 - a^2) - q b^2) p - q r = 0.
  const double a = 0.5, b = 1.0, q = 1.0, r = 1.0;
  const double qa = b * b;
  const double qb = r * (1.0 - a * a) - q * b * b;
  const double qc = -q * r;
  const double root = (-qb + std::sqrt(qb * qb - 4.0 * qa * qc)) / (2.0 * qa);
  Matrix p = solve_dare(Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b),
                        Matrix::Constant(1, 1, q), Matrix::Constant(1, 1, r));
  EXPECT_NEAR(p(0, 0), root, 1e-12);
}

TEST(Dare, RandomStableClosedLoop) {
  Matrix a = random_matrix(2, 2, 42);
  a *= 0.9 / spectral_radius(a);
  const Matrix b = random_matrix(2, 1, 43);
  const Matrix q = Matrix::Identity(2, 2);
  const Matrix r = Matrix::Identity(1, 1);
  const Matrix p = solve_dare(a, b, q, r);
  EXPECT_LE((riccati_map(a, b, q, r, p) - p).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  Eigen::SelfAdjointEigenSolver<Matrix> es(p);
  EXPECT_GE(es.eigenvalues().minCoeff(), 0.0);
  const Matrix gain = dare_gain(a, b, r, p);
  EXPECT_LT(spectral_radius(a - b * gain), 1.0);
}

TEST(Dare, UnstableStabilizable) {
  Matrix a(2, 2);
  a << 1.2, 0.3, 0.0, 0.8;
  Matrix b(2, 1);
  b << 1.0, 0.5;
  const Matrix q = Matrix::Identity(2, 2);
  const Matrix r = Matrix::Identity(1, 1);
  const Matrix p = solve_dare(a, b, q, r);
  EXPECT_LE((riccati_map(a, b, q, r, p) - p).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT(spectral_radius(a - b * dare_gain(a, b, r, p)), 1.0);
}

TEST(Dare, NonConvergenceReportsIterations) {
  // (a, b) is not stabilizable: b has no influence and a is unstable.
  Matrix a = Matrix::Constant(1, 1, 1.5);
  Matrix b = Matrix::Zero(1, 1);
  DareOptions opts;
  opts.max_iterations = 50;
  try {
    solve_dare(a, b, Matrix::Ones(1, 1), Matrix::Ones(1, 1), opts);
    FAIL() << "expected divergence";
  } catch (const ConvergenceError& e) {
    EXPECT_GT(e.iterations(), 0);
  }
}

}  // namespace
}  // namespace rom::linalg
