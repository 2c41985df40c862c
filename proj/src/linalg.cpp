#include "rom/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <vector>

namespace rom::linalg {

namespace {

constexpr int kMaxJacobiSweeps = 100;
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Fills the columns of u flagged in `bad` with an orthonormal basis of the
// complement of the remaining columns.
void complete_basis(Matrix& u, const std::vector<bool>& bad) {
  const Index m = u.rows();
  std::vector<Index> good_idx;
  for (Index j = 0; j < u.cols(); ++j) {
    if (!bad[j]) good_idx.push_back(j);
  }
  Matrix good(m, static_cast<Index>(good_idx.size()));
  for (std::size_t j = 0; j < good_idx.size(); ++j) good.col(j) = u.col(good_idx[j]);

  Matrix q = Matrix::Identity(m, m);
  if (good.cols() > 0) {
    Eigen::HouseholderQR<Matrix> qr(good);
    q = qr.householderQ() * Matrix::Identity(m, m);
  }
  Index next = good.cols();
  for (Index j = 0; j < u.cols(); ++j) {
    if (!bad[j]) continue;
    u.col(j) = q.col(next++);
  }
}

// One-sided Jacobi on a matrix with rows >= cols. On return w holds u*s
// column-wise and v the accumulated right rotations.
void one_sided_jacobi(Matrix& w, Matrix& v) {
  const Index n = w.cols();
  v = Matrix::Identity(n, n);
  const double tol = 10.0 * kEps;
  for (int sweep = 1; sweep <= kMaxJacobiSweeps; ++sweep) {
    bool rotated = false;
    for (Index p = 0; p + 1 < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double alpha = w.col(p).squaredNorm();
        const double beta = w.col(q).squaredNorm();
        const double gamma = w.col(p).dot(w.col(q));
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Index i = 0; i < w.rows(); ++i) {
          const double wp = w(i, p);
          const double wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (Index i = 0; i < n; ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
  throw ConvergenceError("svd: one-sided Jacobi did not converge",
                         kMaxJacobiSweeps);
}

SvdResult svd_tall(const Matrix& m, bool full) {
  const Index rows = m.rows();
  const Index cols = m.cols();

  Matrix w;
  Matrix q_thin;
  Eigen::HouseholderQR<Matrix> qr;
  const bool precondition = rows > cols;
  if (precondition) {
    qr.compute(m);
    w = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
  } else {
    w = m;
  }

  Matrix v;
  one_sided_jacobi(w, v);

  Vector s(cols);
  for (Index j = 0; j < cols; ++j) s(j) = w.col(j).norm();

  std::vector<Index> order(static_cast<std::size_t>(cols));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return s(a) > s(b); });

  SvdResult out;
  out.s.resize(cols);
  Matrix u_small(w.rows(), cols);
  Matrix v_sorted(cols, cols);
  const double s_max = cols > 0 ? s(order[0]) : 0.0;
  const double zero_cut = s_max * static_cast<double>(std::max(rows, cols)) * kEps;
  std::vector<bool> bad(static_cast<std::size_t>(cols), false);
  for (Index j = 0; j < cols; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    out.s(j) = s(src);
    v_sorted.col(j) = v.col(src);
    if (s(src) <= zero_cut || s(src) == 0.0) {
      bad[static_cast<std::size_t>(j)] = true;
      u_small.col(j).setZero();
    } else {
      u_small.col(j) = w.col(src) / s(src);
    }
  }
  if (std::any_of(bad.begin(), bad.end(), [](bool b) { return b; })) {
    complete_basis(u_small, bad);
  }

  Matrix u_thin;
  if (precondition) {
    Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
    u_thin = q * u_small;
  } else {
    u_thin = u_small;
  }

  if (full && rows > cols) {
    Matrix u_full(rows, rows);
    u_full.leftCols(cols) = u_thin;
    u_full.rightCols(rows - cols).setZero();
    std::vector<bool> flags(static_cast<std::size_t>(rows), false);
    std::fill(flags.begin() + cols, flags.end(), true);
    complete_basis(u_full, flags);
    out.u = std::move(u_full);
  } else {
    out.u = std::move(u_thin);
  }
  out.vt = v_sorted.transpose();
  return out;
}

}  // namespace

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
  }
}

SvdResult svd(const Matrix& m, bool full) {
  require_finite(m, "svd");
  if (m.rows() == 0 || m.cols() == 0) {
    throw std::invalid_argument("svd: empty matrix");
  }
  if (m.rows() >= m.cols()) return svd_tall(m, full);
  SvdResult t = svd_tall(m.transpose(), full);
  SvdResult out;
  out.u = t.vt.transpose();
  out.s = std::move(t.s);
  out.vt = t.u.transpose();
  return out;
}

SvdResult truncated_svd(const Matrix& m, Index r) {
  const Index k = std::min(m.rows(), m.cols());
  if (r < 1 || r > k) {
    throw std::invalid_argument("truncated_svd: rank " + std::to_string(r) +
                                " outside [1, " + std::to_string(k) + "]");
  }
  SvdResult full = svd(m);
  SvdResult out;
  out.u = full.u.leftCols(r);
  out.s = full.s.head(r);
  out.vt = full.vt.topRows(r);
  return out;
}

Matrix pinv(const Matrix& m, std::optional<double> tol) {
  require_finite(m, "pinv");
  const double rel_tol =
      tol.value_or(1e-12 * static_cast<double>(std::max(m.rows(), m.cols())));
  if (rel_tol < 0.0) throw std::invalid_argument("pinv: negative tolerance");
  if (m.size() == 0) return Matrix::Zero(m.cols(), m.rows());
  SvdResult d = svd(m);
  const double cut = rel_tol * (d.s.size() > 0 ? d.s(0) : 0.0);
  Vector inv_s = Vector::Zero(d.s.size());
  for (Index i = 0; i < d.s.size(); ++i) {
    if (d.s(i) > cut && d.s(i) > 0.0) inv_s(i) = 1.0 / d.s(i);
  }
  return d.vt.transpose() * inv_s.asDiagonal() * d.u.transpose();
}

Matrix lstsq(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("lstsq: row mismatch");
  }
  return pinv(a) * b;
}

EigResult eig(const Matrix& m) {
  require_finite(m, "eig");
  if (m.rows() != m.cols()) throw std::invalid_argument("eig: matrix not square");
  if (m.rows() > 64) throw std::invalid_argument("eig: dimension above 64");
  const Index n = m.rows();
  EigResult out;
  if (n == 0) return out;

  Eigen::EigenSolver<Matrix> solver(m, /*computeEigenvectors=*/true);
  if (solver.info() != Eigen::Success) {
    throw ConvergenceError("eig: Hessenberg QR iteration failed",
                           static_cast<int>(40 * n));
  }
  const ComplexVector values = solver.eigenvalues();
  const ComplexMatrix vectors = solver.eigenvectors();

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  // Ties in magnitude: larger real part first, then positive imaginary first,
  // so that conjugate pairs come out in a fixed order.
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double ma = std::abs(values(a));
    const double mb = std::abs(values(b));
    if (std::abs(ma - mb) > 1e-12 * std::max(1.0, std::max(ma, mb))) return ma > mb;
    if (values(a).real() != values(b).real()) return values(a).real() > values(b).real();
    return values(a).imag() > values(b).imag();
  });

  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Index j = 0; j < n; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    out.values(j) = values(src);
    Eigen::VectorXcd v = vectors.col(src);
    const double norm = v.norm();
    if (norm > 0.0) v /= norm;
    out.vectors.col(j) = v;
  }
  return out;
}

double spectral_radius(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return std::abs(eig(m).values(0));
}

Matrix riccati_map(const Matrix& a, const Matrix& b, const Matrix& q,
                   const Matrix& r, const Matrix& p) {
  const Matrix pa = p * a;
  const Matrix bpa = b.transpose() * pa;
  const Matrix s = r + b.transpose() * p * b;
  const Matrix next = q + a.transpose() * pa - bpa.transpose() * s.ldlt().solve(bpa);
  return 0.5 * (next + next.transpose());
}

Matrix solve_dare(const Matrix& a, const Matrix& b, const Matrix& q,
                  const Matrix& r, const DareOptions& options) {
  const Index n = a.rows();
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n ||
      r.rows() != b.cols() || r.cols() != b.cols()) {
    throw std::invalid_argument("solve_dare: inconsistent shapes");
  }
  require_finite(a, "solve_dare(a)");
  require_finite(b, "solve_dare(b)");
  if (!q.isApprox(q.transpose(), 1e-10) && q.norm() > 0.0) {
    throw std::invalid_argument("solve_dare: q not symmetric");
  }
  Eigen::LLT<Matrix> r_llt(r);
  if (r_llt.info() != Eigen::Success) {
    throw std::invalid_argument("solve_dare: r not positive definite");
  }

  Matrix p = q;
  for (int it = 1; it <= options.max_iterations; ++it) {
    Matrix next = riccati_map(a, b, q, r, p);
    if (!next.allFinite()) {
      throw ConvergenceError("solve_dare: iteration diverged", it);
    }
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = std::move(next);
    if (change <= options.tolerance * std::max(1.0, p.cwiseAbs().maxCoeff())) {
      return p;
    }
  }
  throw ConvergenceError("solve_dare: fixed-point iteration did not converge",
                         options.max_iterations);
}

Matrix dare_gain(const Matrix& a, const Matrix& b, const Matrix& r,
                 const Matrix& p) {
  const Matrix s = r + b.transpose() * p * b;
  return s.ldlt().solve(b.transpose() * p * a);
}

}  // namespace rom::linalg
