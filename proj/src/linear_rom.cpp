#include "rom/linear_rom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rom/autodiff.hpp"
#include "rom/io.hpp"
#include "rom/log.hpp"
#include "rom/nn.hpp"
#include "rom/optim.hpp"

namespace rom::linear {

namespace {

void require_rank_range(const SnapshotMatrices& snap, Index rx) {
  if (rx < 1 || rx >= std::min(snap.dx, snap.n())) {
    throw std::invalid_argument("r_x must satisfy 1 <= r_x < min(d_x, n); got " +
                                std::to_string(rx));
  }
}

void require_snapshots(const SnapshotMatrices& snap) {
  if (snap.n() == 0) throw std::invalid_argument("snapshot matrices are empty");
  if (snap.y.rows() != snap.dx || snap.omega.rows() != snap.dx + snap.du ||
      snap.omega.cols() != snap.y.cols()) {
    throw std::invalid_argument("snapshot matrices have inconsistent shapes");
  }
}

nn::Tensor rows_of(const Matrix& m) { return nn::Tensor::from_matrix(m.transpose()); }

Matrix from_tensor(const nn::Tensor& t) { return t.to_matrix(); }

}  // namespace

SnapshotMatrices assemble_snapshots(const std::vector<Matrix>& states,
                                    const std::vector<Matrix>& actuations) {
  if (states.empty() || states.size() != actuations.size()) {
    throw std::invalid_argument("assemble_snapshots: need matching, non-empty sequence lists");
  }
  const Index dx = states[0].rows(), du = actuations[0].rows();
  Index n = 0;
  for (std::size_t s = 0; s < states.size(); ++s) {
    if (states[s].rows() != dx || actuations[s].rows() != du) {
      throw std::invalid_argument("assemble_snapshots: sequence " + std::to_string(s) +
                                  " has inconsistent dimensions");
    }
    if (states[s].cols() != actuations[s].cols() + 1) {
      throw std::invalid_argument("assemble_snapshots: sequence " + std::to_string(s) +
                                  " needs one more state than actuations");
    }
    n += actuations[s].cols();
  }
  SnapshotMatrices snap{Matrix(dx, n), Matrix(dx + du, n), dx, du};
  Index col = 0;
  for (std::size_t s = 0; s < states.size(); ++s) {
    const Index m = actuations[s].cols();
    snap.y.middleCols(col, m) = states[s].rightCols(m);
    snap.omega.block(0, col, dx, m) = states[s].leftCols(m);
    snap.omega.block(dx, col, du, m) = actuations[s];
    col += m;
  }
  return snap;
}

SnapshotMatrices assemble_snapshots(const pde::TrajectoryDataset& ds) {
  std::vector<Matrix> states, actuations;
  for (const auto& s : ds.sequences) {
    states.push_back(s.states);
    actuations.push_back(s.actuations.transpose());
  }
  return assemble_snapshots(states, actuations);
}

Matrix LinearRom::g() const {
  Matrix out(a_r.rows(), a_r.cols() + b_r.cols());
  out << a_r, b_r;
  return out;
}

void LinearRom::validate() const {
  const Index r = a_r.rows();
  if (a_r.cols() != r || e.rows() != r || d.cols() != r || b_r.rows() != r ||
      d.rows() != e.cols()) {
    throw std::invalid_argument("LinearRom: inconsistent shapes");
  }
}

LinearRom fit_dmdc(const SnapshotMatrices& snap, Index rx, Index rxu) {
  require_snapshots(snap);
  linalg::require_finite(snap.y, "Y");
  linalg::require_finite(snap.omega, "Omega");
  const Index limit = std::min(snap.dx + snap.du, snap.n());
  if (!(rx >= 1 && rx < rxu && rxu < limit)) {
    throw std::invalid_argument("DMDc truncation needs 1 <= r_x < r_xu < min(d_x + d_u, n) = " +
                                std::to_string(limit) + "; got r_x=" + std::to_string(rx) +
                                ", r_xu=" + std::to_string(rxu));
  }
  if (snap.u().cwiseAbs().maxCoeff() == 0.0) {
    log_warning("DMDc: actuation snapshots are identically zero; B_R is not identifiable");
  }
  const auto sy = linalg::truncated_svd(snap.y, rx);
  const auto so = linalg::truncated_svd(snap.omega, rxu);
  const double tol = 1e-12 * static_cast<double>(std::max(snap.omega.rows(), snap.n()));
  if (so.s[rxu - 1] <= tol * so.s[0]) {
    throw RankError("Omega has numerical rank below r_xu=" + std::to_string(rxu) +
                    "; choose a smaller truncation");
  }
  const Matrix& uy = sy.u;
  const Matrix core = uy.transpose() * snap.y * so.vt.transpose() *
                      so.s.cwiseInverse().asDiagonal();  // U_Y^T Y V S^-1
  LinearRom rom;
  rom.e = uy.transpose();
  rom.d = uy;
  rom.a_r = core * so.u.topRows(snap.dx).transpose() * uy;
  rom.b_r = core * so.u.bottomRows(snap.du).transpose();
  return rom;
}

Vector rom_predict(const LinearRom& rom, const Vector& x, const Vector& u) {
  rom.validate();
  if (x.size() != rom.dx() || u.size() != rom.du()) {
    throw std::invalid_argument("rom_predict: state or actuation size mismatch");
  }
  return rom.d * (rom.a_r * (rom.e * x) + rom.b_r * u);
}

Matrix rom_rollout(const LinearRom& rom, const Vector& x0, const Matrix& u) {
  rom.validate();
  if (x0.size() != rom.dx() || u.rows() != rom.du()) {
    throw std::invalid_argument("rom_rollout: state or actuation size mismatch");
  }
  Matrix out(rom.dx(), u.cols() + 1);
  Vector z = rom.e * x0;
  out.col(0) = rom.d * z;
  for (Index i = 0; i < u.cols(); ++i) {
    z = rom.a_r * z + rom.b_r * u.col(i);
    out.col(i + 1) = rom.d * z;
  }
  return out;
}

Matrix stacked_encoder(const Matrix& e, Index du) {
  Matrix exu = Matrix::Zero(e.rows() + du, e.cols() + du);
  exu.topLeftCorner(e.rows(), e.cols()) = e;
  exu.bottomRightCorner(du, du).setIdentity();
  return exu;
}

Matrix closed_form_G(const SnapshotMatrices& snap, const Matrix& e,
                     const ClosedFormOptions& options) {
  require_snapshots(snap);
  if (e.cols() != snap.dx) throw std::invalid_argument("closed_form_G: encoder width mismatch");
  const Matrix p = stacked_encoder(e, snap.du) * snap.omega;  // Exu Omega
  Matrix gram = p * p.transpose();
  const Matrix rhs = (e * snap.y) * p.transpose();
  const Index k = gram.rows();

  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() == Eigen::Success && llt.rcond() >= 1e-14) {
    return llt.solve(rhs.transpose()).transpose();
  }
  if (!options.allow_ridge) throw RankError("closed_form_G: projected Gram matrix is singular");
  if (options.ridge_scale > 0.0) {
    gram.diagonal().array() += options.ridge_scale * gram.trace() / static_cast<double>(k);
    llt.compute(gram);
    if (llt.info() != Eigen::Success) throw RankError("closed_form_G: Gram matrix not positive");
    return llt.solve(rhs.transpose()).transpose();
  }
  return rhs * linalg::pinv(gram);
}

double normal_equation_residual(const SnapshotMatrices& snap, const Matrix& e, const Matrix& g) {
  const Matrix p = stacked_encoder(e, snap.du) * snap.omega;
  const Matrix rhs = (e * snap.y) * p.transpose();
  return (g * (p * p.transpose()) - rhs).norm() / rhs.norm();
}

double pred_loss(const SnapshotMatrices& snap, const Matrix& e, const Matrix& g) {
  const Matrix r = e * snap.y - g * (stacked_encoder(e, snap.du) * snap.omega);
  return r.squaredNorm() / static_cast<double>(snap.n());
}

double pred_loss_lipschitz(const SnapshotMatrices& snap, const Matrix& e) {
  const Matrix p = stacked_encoder(e, snap.du) * snap.omega;
  Eigen::SelfAdjointEigenSolver<Matrix> es(p * p.transpose(), Eigen::EigenvaluesOnly);
  return 2.0 * es.eigenvalues().maxCoeff() / static_cast<double>(snap.n());
}

Matrix dmdc_encoder(const SnapshotMatrices& snap, Index rx) {
  require_snapshots(snap);
  require_rank_range(snap, rx);
  return linalg::truncated_svd(snap.y, rx).u.transpose();
}

Matrix truncated_pinv_G(const SnapshotMatrices& snap, Index rx, Index rxu) {
  require_snapshots(snap);
  require_rank_range(snap, rx);
  const Index full = std::min(snap.dx + snap.du, snap.n());
  if (rxu < 1 || rxu > full) {
    throw std::invalid_argument("r_xu must lie in [1, " + std::to_string(full) + "]");
  }
  const Matrix e = dmdc_encoder(snap, rx);
  // Columns of V beyond rank(Omega) meet zero rows of (Exu U Sigma)^+, so the
  // thin factors give the same product as the full SVD.
  const auto so = linalg::truncated_svd(snap.omega, rxu);
  const Matrix w = stacked_encoder(e, snap.du) * so.u * so.s.asDiagonal();
  return e * snap.y * so.vt.transpose() * linalg::pinv(w);
}

Matrix pinv_G(const SnapshotMatrices& snap, Index rx) {
  return truncated_pinv_G(snap, rx, std::min(snap.dx + snap.du, snap.n()));
}

CompressedSnapshots compress_snapshots(const SnapshotMatrices& snap) {
  require_snapshots(snap);
  const Index rows = 2 * snap.dx + snap.du;
  if (snap.n() <= rows) return {snap, static_cast<double>(snap.n())};
  // [Y; Omega]^T = Q R, so [Y; Omega] = R^T Q^T and Q^T drops out of every
  // Frobenius norm of a left-multiplied residual.
  Matrix m(snap.n(), rows);
  m << snap.y.transpose(), snap.omega.transpose();
  Eigen::HouseholderQR<Matrix> qr(m);
  const Matrix r = qr.matrixQR().topRows(rows).triangularView<Eigen::Upper>();
  SnapshotMatrices out{r.leftCols(snap.dx).transpose(), r.rightCols(snap.dx + snap.du).transpose(),
                       snap.dx, snap.du};
  return {std::move(out), static_cast<double>(snap.n())};
}

double larom_loss(const SnapshotMatrices& snap, const Matrix& e, const Matrix& g, double beta1,
                  double beta4) {
  const double n = static_cast<double>(snap.n());
  const Matrix ey = e * snap.y;
  const double lpred = (ey - g * (stacked_encoder(e, snap.du) * snap.omega)).squaredNorm() / n;
  const double lrecon = (snap.y - e.transpose() * ey).squaredNorm() / n;
  const double orth = (e * e.transpose() - Matrix::Identity(e.rows(), e.rows())).squaredNorm();
  return lpred + beta1 * lrecon + beta4 * orth;
}

LaromResult fit_larom(const SnapshotMatrices& snap_in, Index rx, const LaromOptions& options) {
  require_snapshots(snap_in);
  require_rank_range(snap_in, rx);
  if (!(options.beta1 > 0.0) || !(options.beta4 > 0.0)) {
    throw std::invalid_argument("fit_larom: beta1 and beta4 must be positive");
  }
  const CompressedSnapshots compressed = compress_snapshots(snap_in);
  const SnapshotMatrices& snap = compressed.snap;
  const double inv_n = 1.0 / compressed.weight_n;
  const auto dx = static_cast<std::size_t>(snap.dx), du = static_cast<std::size_t>(snap.du);
  const auto r = static_cast<std::size_t>(rx);

  nn::Parameter e{"larom.e", nn::Tensor({r, dx}), options.train_encoder};
  nn::Parameter g{"larom.g", nn::Tensor({r, r + du}), true};
  Rng rng = Rng::substream(options.seed, 0);
  if (options.initial_encoder) {
    if (options.initial_encoder->rows() != rx || options.initial_encoder->cols() != snap.dx) {
      throw std::invalid_argument("fit_larom: initial encoder has the wrong shape");
    }
    e.value = nn::Tensor::from_matrix(*options.initial_encoder);
  } else {
    nn::init_uniform(e.value, dx, rng);
  }
  if (options.initial_g) {
    if (options.initial_g->rows() != rx || options.initial_g->cols() != rx + snap.du) {
      throw std::invalid_argument("fit_larom: initial G has the wrong shape");
    }
    g.value = nn::Tensor::from_matrix(*options.initial_g);
  } else {
    nn::init_uniform(g.value, r + du, rng);
  }

  const nn::Tensor xr = rows_of(snap.x()), ur = rows_of(snap.u()), yr = rows_of(snap.y);
  const nn::Tensor eye = nn::Tensor::from_matrix(Matrix::Identity(rx, rx));

  auto evaluate = [&](nn::Tape& tape) {
    nn::Var ev = tape.param(e), gv = tape.param(g);
    nn::Var x = tape.constant(xr), u = tape.constant(ur), y = tape.constant(yr);
    nn::Var zx = nn::linear(x, ev), zy = nn::linear(y, ev);
    nn::Var pred = nn::linear(nn::concat_cols(zx, u), gv);
    nn::Var lpred = inv_n * nn::sum_squares(zy - pred);
    nn::Var lrecon = inv_n * nn::sum_squares(y - nn::matmul(zy, ev));
    nn::Var orth = nn::sum_squares(nn::matmul(ev, nn::transpose(ev)) - tape.constant(eye));
    return lpred + options.beta1 * lrecon + options.beta4 * orth;
  };

  nn::ParameterRefs params{&e, &g};
  std::optional<nn::Adam> adam;
  if (options.method == LaromOptions::Method::kAdam) {
    adam.emplace(params, nn::AdamOptions{.lr = options.lr});
  } else if (!(options.lr > 0.0)) {
    throw std::invalid_argument("fit_larom: learning rate must be positive");
  }

  LaromResult result;
  for (std::size_t it = 0;; ++it) {
    nn::Tape tape;
    double loss = 0.0;
    nn::Gradients grads;
    try {
      nn::Var l = evaluate(tape);
      loss = l.value().item();
      grads = tape.backward(l);
      if (!std::isfinite(loss) || !std::isfinite(grads.squared_norm())) {
        throw nn::NumericalError("non-finite loss or gradient");
      }
    } catch (const nn::NumericalError& err) {
      std::ostringstream msg;
      msg << "fit_larom diverged at iteration " << it << " (" << err.what() << "); last losses:";
      const std::size_t from = result.loss.size() > 5 ? result.loss.size() - 5 : 0;
      for (std::size_t i = from; i < result.loss.size(); ++i) msg << ' ' << result.loss[i];
      throw nn::NumericalError(msg.str());
    }
    result.loss.push_back(loss);
    result.grad_norm = std::sqrt(grads.squared_norm());
    result.iterations = it;
    if (result.grad_norm <= options.grad_tol * (1.0 + std::abs(result.loss.front()))) {
      result.converged = true;
      break;
    }
    if (it == options.iterations) break;
    if (adam) {
      adam->step(grads);
    } else {
      nn::sgd_step(params, grads, options.lr);
    }
  }

  result.rom.e = from_tensor(e.value);
  result.rom.d = result.rom.e.transpose();
  const Matrix gm = from_tensor(g.value);
  result.rom.a_r = gm.leftCols(rx);
  result.rom.b_r = gm.rightCols(snap.du);
  return result;
}

DynamicModeSet dynamic_modes(const LinearRom& rom) {
  rom.validate();
  const auto ed = linalg::eig(rom.a_r);
  DynamicModeSet out;
  out.eigenvalues = ed.values;
  out.modes = rom.d.cast<std::complex<double>>() * ed.vectors;
  for (Index i = 0; i < out.modes.cols(); ++i) {
    auto col = out.modes.col(i);
    const double norm = col.norm();
    if (norm == 0.0) throw std::runtime_error("dynamic_modes: decoder maps an eigenvector to 0");
    col /= norm;
    Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    col *= std::conj(col[arg]) / std::abs(col[arg]);
    col[arg] = std::abs(col[arg]);
  }
  return out;
}

ModeMatch match_modes(const DynamicModeSet& a, const DynamicModeSet& b) {
  const Index k = a.modes.cols();
  if (k != b.modes.cols() || a.modes.rows() != b.modes.rows()) {
    throw std::invalid_argument("match_modes: mode sets have different dimensions (" +
                                std::to_string(a.modes.rows()) + "x" + std::to_string(k) +
                                " vs " + std::to_string(b.modes.rows()) + "x" +
                                std::to_string(b.modes.cols()) + ")");
  }
  std::vector<Index> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  auto cost = [&](const std::vector<Index>& p) {
    double c = 0.0;
    for (Index i = 0; i < k; ++i) c += std::abs(a.eigenvalues[i] - b.eigenvalues[p[i]]);
    return c;
  };
  std::vector<Index> best = perm;
  if (k <= 8) {
    double best_cost = cost(perm);
    while (std::next_permutation(perm.begin(), perm.end())) {
      const double c = cost(perm);
      if (c < best_cost) {
        best_cost = c;
        best = perm;
      }
    }
  } else {
    std::vector<bool> used(static_cast<std::size_t>(k), false);
    for (Index i = 0; i < k; ++i) {
      Index arg = -1;
      for (Index j = 0; j < k; ++j) {
        if (used[j]) continue;
        if (arg < 0 || std::abs(a.eigenvalues[i] - b.eigenvalues[j]) <
                           std::abs(a.eigenvalues[i] - b.eigenvalues[arg])) {
          arg = j;
        }
      }
      used[arg] = true;
      best[i] = arg;
    }
  }
  ModeMatch out;
  out.partner = best;
  for (Index i = 0; i < k; ++i) {
    const Index j = best[i];
    out.scores.push_back(std::abs(a.modes.col(i).dot(b.modes.col(j))));
    out.eigenvalue_gaps.push_back(std::abs(a.eigenvalues[i] - b.eigenvalues[j]));
  }
  out.mean_score = k == 0 ? 0.0
                          : std::accumulate(out.scores.begin(), out.scores.end(), 0.0) /
                                static_cast<double>(k);
  return out;
}

void save_linear_rom(const LinearRom& rom, const std::filesystem::path& dir,
                     const nlohmann::json& meta) {
  rom.validate();
  nn::Parameter e{"e", nn::Tensor::from_matrix(rom.e)}, d{"d", nn::Tensor::from_matrix(rom.d)},
      a{"a_r", nn::Tensor::from_matrix(rom.a_r)}, b{"b_r", nn::Tensor::from_matrix(rom.b_r)};
  nlohmann::json m = meta;
  m["kind"] = "linear_rom";
  m["r_x"] = rom.rx();
  m["d_x"] = rom.dx();
  m["d_u"] = rom.du();
  io::save_parameters(dir, {&e, &d, &a, &b}, m);
}

LinearRom load_linear_rom(const std::filesystem::path& dir) {
  const auto meta = io::load_meta(dir);
  if (meta.value("kind", "") != "linear_rom") {
    throw io::FormatError(dir.string() + " is not a linear ROM checkpoint");
  }
  const auto rx = meta.at("r_x").get<std::size_t>(), dx = meta.at("d_x").get<std::size_t>(),
             du = meta.at("d_u").get<std::size_t>();
  nn::Parameter e{"e", nn::Tensor({rx, dx})}, d{"d", nn::Tensor({dx, rx})},
      a{"a_r", nn::Tensor({rx, rx})}, b{"b_r", nn::Tensor({rx, du})};
  io::load_parameters(dir, {&e, &d, &a, &b});
  return {e.value.to_matrix(), d.value.to_matrix(), a.value.to_matrix(), b.value.to_matrix()};
}

void write_modes_csv(const std::filesystem::path& path, const DynamicModeSet& modes,
                     const Vector& zeta) {
  if (zeta.size() != modes.modes.rows()) {
    throw std::invalid_argument("write_modes_csv: coordinate count does not match modes");
  }
  std::ofstream out(path);
  if (!out) throw io::FormatError("cannot open " + path.string());
  out.precision(17);
  out << "zeta";
  for (Index i = 0; i < modes.modes.cols(); ++i) out << ",re_phi_" << i << ",im_phi_" << i;
  out << '\n';
  for (Index j = 0; j < zeta.size(); ++j) {
    out << zeta[j];
    for (Index i = 0; i < modes.modes.cols(); ++i) {
      out << ',' << modes.modes(j, i).real() << ',' << modes.modes(j, i).imag();
    }
    out << '\n';
  }
}

}  // namespace rom::linear
