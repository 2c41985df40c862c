// Acceptance run: one PASS/FAIL line per criterion, exit status 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rom/autodiff.hpp"
#include "rom/control.hpp"
#include "rom/deeprom.hpp"
#include "rom/gradcheck.hpp"
#include "rom/harness.hpp"
#include "rom/io.hpp"
#include "rom/linalg.hpp"
#include "rom/linear_rom.hpp"
#include "rom/nn.hpp"
#include "rom/ode.hpp"
#include "rom/pde.hpp"

namespace {

namespace fs = std::filesystem;
using namespace rom;
using harness::json;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using linalg::Index;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = dist(gen);
  return m;
}

double rel_fro(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

linear::SnapshotMatrices random_snapshots(Index dx, Index du, Index n, std::uint64_t seed) {
  linear::SnapshotMatrices s{random_matrix(dx, n, seed), Matrix(dx + du, n), dx, du};
  s.omega << random_matrix(dx, n, seed + 1), random_matrix(du, n, seed + 2);
  return s;
}

// ---------------------------------------------------------------------------

Outcome gd_closed_form_equivalence() {
  const Timer timer;
  const auto s = random_snapshots(8, 2, 40, 1001);
  const Matrix e = random_matrix(3, 8, 1002);
  Eigen::JacobiSVD<Matrix> probe(e);
  const bool full_rank = probe.singularValues().minCoeff() > 1e-8;

  linear::LaromOptions o;
  o.method = linear::LaromOptions::Method::kGradientDescent;
  o.lr = 1.0 / linear::pred_loss_lipschitz(s, e);
  o.iterations = 100000;
  o.grad_tol = 1e-10;
  o.train_encoder = false;
  o.initial_encoder = e;
  const auto fit = linear::fit_larom(s, 3, o);
  const Matrix g = linear::closed_form_G(s, e);
  const double err = rel_fro(fit.rom.g(), g);
  const double residual = linear::normal_equation_residual(s, e, g);
  const double secs = timer.seconds();
  return {full_rank && err <= 1e-4 && residual <= 1e-8 && secs <= 5.0,
          "gd-vs-closed-form rel err " + fmt(err) + ", normal-equation residual " + fmt(residual) +
              ", " + std::to_string(fit.iterations) + " GD steps, " + fmt(secs) + " s"};
}

Outcome pinv_form_equivalence() {
  const Index rx = 3;
  double cor = 0.0, final_gap = 0.0;
  int monotone_draws = 0;
  std::string first_sweep;
  const int draws = 5;
  for (int draw = 0; draw < draws; ++draw) {
    const auto s = random_snapshots(8, 2, 40, 1001 + 10 * draw);
    cor = std::max(cor, rel_fro(linear::pinv_G(s, rx),
                                linear::closed_form_G(s, linear::dmdc_encoder(s, rx))));
    // Gap between the truncated pinv form and DMDc at the same r_xu, up to
    // the largest truncation DMDc admits.
    std::vector<double> gaps;
    const Index limit = std::min(s.dx + s.du, s.n());
    for (Index rxu = rx + 1; rxu < limit; ++rxu) {
      const Matrix dmdc = linear::fit_dmdc(s, rx, rxu).g();
      gaps.push_back(rel_fro(linear::truncated_pinv_G(s, rx, rxu), dmdc));
    }
    bool monotone = true;
    for (std::size_t i = 1; i < gaps.size(); ++i) monotone = monotone && gaps[i] <= gaps[i - 1];
    monotone_draws += monotone;
    final_gap = std::max(final_gap, gaps.back());
    if (draw == 0) {
      for (std::size_t i = 0; i < gaps.size(); ++i) {
        first_sweep += (i ? " " : "") + std::to_string(rx + 1 + Index(i)) + ":" + fmt(gaps[i]);
      }
    }
  }
  const bool ok = cor <= 1e-9 && monotone_draws == draws && final_gap <= 1e-6;
  return {ok, "pinv form vs closed form " + fmt(cor) + "; truncated-vs-DMDc gap monotone in " +
                  std::to_string(monotone_draws) + "/" + std::to_string(draws) +
                  " draws, worst gap at largest r_xu " + fmt(final_gap) + " (draw 0 by r_xu: " +
                  first_sweep + ")"};
}

Outcome dmdc_exactness() {
  const Index dx = 16, rank = 5, du = 2;
  Eigen::HouseholderQR<Matrix> qr(random_matrix(dx, rank, 2001));
  const Matrix q = qr.householderQ() * Matrix::Identity(dx, rank);
  const Matrix m = 0.9 * random_matrix(rank, rank, 2002) / std::sqrt(double(rank));
  const Matrix a = q * m * q.transpose();
  const Matrix b = q * random_matrix(rank, du, 2003);
  std::vector<Matrix> xs, us;
  for (int s = 0; s < 6; ++s) {
    Matrix x(dx, 21);
    const Matrix u = random_matrix(du, 20, 2100 + s);
    x.col(0) = q * random_matrix(rank, 1, 2200 + s);
    for (int i = 0; i < 20; ++i) x.col(i + 1) = a * x.col(i) + b * u.col(i);
    xs.push_back(x);
    us.push_back(u);
  }
  const auto snap = linear::assemble_snapshots(std::vector<Matrix>(xs.begin(), xs.begin() + 5),
                                               std::vector<Matrix>(us.begin(), us.begin() + 5));
  const auto rom = linear::fit_dmdc(snap, rank, rank + du);
  double worst = 0.0;
  for (Index i = 0; i < us[5].cols(); ++i) {
    const Vector pred = linear::rom_predict(rom, xs[5].col(i), us[5].col(i));
    worst = std::max(worst, (pred - xs[5].col(i + 1)).norm() / xs[5].col(i + 1).norm());
  }
  const auto ea = linalg::eig(a), er = linalg::eig(rom.a_r);
  double eig_err = 0.0;
  for (Index i = 0; i < rank; ++i) {
    double best = 1e300;
    for (Index j = 0; j < rank; ++j) best = std::min(best, std::abs(ea.values[i] - er.values[j]));
    eig_err = std::max(eig_err, best);
  }
  return {worst <= 1e-8 && eig_err <= 1e-6,
          "held-out one-step rel err " + fmt(worst) + ", eigenvalue err " + fmt(eig_err)};
}

harness::RunConfig pipeline_config() { return harness::RunConfig::from_json(json::object()); }

void ensure_data(const harness::RunConfig& config, const harness::Layout& layout) {
  if (!fs::exists(layout.train_data() / "manifest.json") ||
      !fs::exists(layout.test_data() / "manifest.json")) {
    harness::cmd_gen_data(config, layout);
  }
}

Outcome mode_alignment(const fs::path& work) {
  const auto config = harness::RunConfig::from_json(json::object(), 0);
  const harness::Layout layout{work / "pipeline"};
  ensure_data(config, layout);
  harness::cmd_train(config, layout, "larom");
  const json report = harness::cmd_modes(config, layout);
  const json& run = report.at("runs").at(0);
  const double mean = run.at("mean_score").get<double>();
  std::string scores;
  for (const auto& p : run.at("pairs")) scores += " " + fmt(p.at("score").get<double>());
  return {mean >= 0.95, "mean |<phi_dmdc, phi_larom>| " + fmt(mean) + " (per mode:" + scores + ")"};
}

// Every tape primitive is differentiated through a small scalar graph.
struct PrimitiveCase {
  std::string name;
  std::vector<nn::Shape> shapes;
  std::function<nn::Var(nn::Tape&, const std::vector<nn::Var>&)> graph;
};

Outcome gradient_integrity() {
  using namespace rom::nn;
  const Timer timer;
  std::vector<PrimitiveCase> cases = {
      {"add/sub/mul/scale/relu",
       {{3, 4}, {3, 4}},
       [](Tape&, const std::vector<Var>& v) {
         return sum(relu(add(mul(v[0], v[1]), sub(scale(v[0], -0.5), v[1]))));
       }},
      {"transpose/concat/reshape/matmul",
       {{3, 4}, {4, 2}, {4, 2}},
       [](Tape&, const std::vector<Var>& v) {
         return sum_squares(matmul(reshape(concat_cols(transpose(v[0]), v[1]), {5, 4}), v[2]));
       }},
      {"linear",
       {{5, 3}, {2, 3}, {2}},
       [](Tape&, const std::vector<Var>& v) {
         return add(sum_squares(nn::linear(v[0], v[1], v[2])), sum(nn::linear(v[0], v[1])));
       }},
      {"row_dot/scale_rows/guarded_div/mean_squared_norm",
       {{4, 3}, {4, 3}},
       [](Tape&, const std::vector<Var>& v) {
         Var q = guarded_div(row_dot(v[0], v[1]), row_dot(v[1], v[1]), 1e-12);
         return mean_squared_norm(add(scale_rows(v[0], q), v[1]));
       }},
      {"conv1d",
       {{2, 2, 8}, {3, 2, 3}, {3}},
       [](Tape&, const std::vector<Var>& v) { return sum_squares(conv1d(v[0], v[1], v[2], 2, 1)); }},
      {"conv1d_transpose",
       {{2, 3, 4}, {3, 2, 3}, {2}},
       [](Tape&, const std::vector<Var>& v) {
         return sum_squares(conv1d_transpose(v[0], v[1], v[2], 2, 1, 1));
       }},
      {"rk4_step",
       {{4, 3}, {4, 3}, {3, 3}},
       [](Tape&, const std::vector<Var>& v) {
         VectorField f = [&](Var x, Var u) { return add(matmul(x, v[2]), u); };
         return sum_squares(rk4_step(f, v[0], v[1], 0.1));
       }},
  };

  double worst = 0.0;
  std::string worst_name;
  std::uint64_t seed = 3001;
  for (const auto& c : cases) {
    std::vector<Parameter> params;
    for (const auto& shape : c.shapes) {
      Tensor t(shape);
      std::mt19937_64 gen(seed++);
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (double& v : t.values()) v = dist(gen);
      params.push_back({"p" + std::to_string(params.size()), t, true});
    }
    ParameterRefs refs;
    for (auto& p : params) refs.push_back(&p);
    const auto check = check_parameter_gradients(refs, [&](Tape& tape) {
      std::vector<Var> vars;
      for (auto& p : params) vars.push_back(tape.param(p));
      return c.graph(tape, vars);
    });
    if (check.max_rel_error >= worst) {
      worst = check.max_rel_error;
      worst_name = c.name;
    }
  }

  deep::ModelConfig mc;
  mc.nodes = 8;
  mc.rx = 2;
  mc.channels = 2;
  mc.fc_hidden = 4;
  mc.dyn_hidden = 5;
  deep::DeepRom model(mc);
  Rng rng(3101);
  model.init(rng);
  const deep::Transitions batch{deep::rows_tensor(random_matrix(8, 4, 3102)),
                                deep::rows_tensor(random_matrix(1, 4, 3103)),
                                deep::rows_tensor(random_matrix(8, 4, 3104))};
  const auto rom_check = check_parameter_gradients(
      model.parameters(), [&](Tape& t) { return deep::deeprom_loss(t, model, batch, 1.0); });

  control::ControllerConfig cc;
  cc.hidden = 6;
  control::DeepRoc ctrl(cc);
  Rng crng(3105);
  ctrl.init(crng);
  ctrl.set_offset(Vector{{0.3, -0.2}});
  model.set_trainable(false);
  const Tensor z = deep::rows_tensor(random_matrix(2, 6, 3106));
  const auto ctrl_check = check_parameter_gradients(ctrl.parameters(), [&](Tape& t) {
    return control::controller_loss(t, model, ctrl, t.constant(z));
  });

  const double secs = timer.seconds();
  const bool ok = worst <= 1e-5 && rom_check.max_rel_error <= 1e-5 &&
                  ctrl_check.max_rel_error <= 1e-5 && secs <= 30.0;
  return {ok, "primitives worst " + fmt(worst) + " (" + worst_name + "), DeepROM loss " +
                  fmt(rom_check.max_rel_error) + " over " + std::to_string(rom_check.coordinates) +
                  " coords, DeepROC loss " + fmt(ctrl_check.max_rel_error) + " over " +
                  std::to_string(ctrl_check.coordinates) + " coords, " + fmt(secs) + " s"};
}

Outcome stability_certificate() {
  control::DeepRoc ctrl(control::ControllerConfig{});
  Rng rng(4001);
  double worst = -1e300;
  for (int probe = 0; probe < 1000; ++probe) {
    // Fresh random P parameters every probe.
    ctrl.init(rng);
    const double scale = std::pow(10.0, rng.uniform(-3.0, 2.0));
    const Vector z = scale * Vector{{rng.normal(), rng.normal()}};
    const auto [v, g] = ctrl.lyapunov(z);
    worst = std::max(worst, g.dot(ctrl.target_rhs(z)) + ctrl.config().alpha * v);
  }
  const bool origin = ctrl.target_rhs(Vector::Zero(2)) == Vector(Vector::Zero(2));
  return {worst <= 1e-9 && origin, "max grad V . F_s + alpha V = " + fmt(worst) +
                                       ", F_s(0) == 0: " + (origin ? "yes" : "no")};
}

Outcome pde_solver() {
  const pde::Grid grid;
  const pde::SimParams params;
  double drift = 0.0;
  for (double c : {-1.0, 0.0, 1.0}) {
    pde::Field q = pde::Field::Constant(static_cast<Index>(grid.nodes), c);
    for (int i = 0; i < 1000; ++i) q = pde::step(q, 0.0, params, grid);
    drift = std::max(drift, (q.array() - c).abs().maxCoeff());
  }

  const double pi = std::acos(-1.0);
  std::vector<double> errors;
  for (std::size_t n : {33u, 65u, 129u, 257u}) {
    const pde::Grid g{-1, 1, n};
    const pde::Field z = g.coordinates();
    const pde::Field f = z.unaryExpr([&](double x) { return std::cos(pi * x); });
    errors.push_back((pde::laplacian(f, g) + pi * pi * f).cwiseAbs().maxCoeff());
  }
  double order_lo = 1e9, order_hi = -1e9;
  for (std::size_t i = 1; i < errors.size(); ++i) {
    const double order = std::log2(errors[i - 1] / errors[i]);
    order_lo = std::min(order_lo, order);
    order_hi = std::max(order_hi, order);
  }

  pde::SimParams fine = params;
  fine.dt = params.dt / 2;
  fine.substeps = params.substeps * 2;
  const pde::Field q0 = pde::chebyshev_field(grid, 1.3, {0.2, -0.5, 0.7, 0.1, -0.3});
  const Matrix a = pde::simulate(q0, Vector::Constant(50, 0.4), params, grid);
  const Matrix b = pde::simulate(q0, Vector::Constant(100, 0.4), fine, grid);
  const double refine = (a.col(50) - b.col(100)).cwiseAbs().maxCoeff();

  const bool ok = drift <= 1e-12 && std::abs(order_lo - 2.0) <= 0.2 &&
                  std::abs(order_hi - 2.0) <= 0.2 && refine <= 1e-6;
  return {ok, "equilibrium drift " + fmt(drift) + ", Laplacian order in [" + fmt(order_lo) + ", " +
                  fmt(order_hi) + "], dt-refinement diff at t=0.5 " + fmt(refine)};
}

Outcome prediction_trend(const fs::path& work) {
  const Timer timer;
  const auto config = pipeline_config();
  const harness::Layout layout{work / "pipeline"};
  ensure_data(config, layout);
  harness::cmd_train(config, layout, "dmdc");
  harness::cmd_train(config, layout, "deeprom");
  const json summary = harness::cmd_eval_pred(config, layout);
  const double secs = timer.seconds();
  int wins = 0;
  std::string detail;
  for (const auto seed : config.seeds) {
    const std::string key = std::to_string(seed);
    const double deep = summary.at("final").at("deeprom").at(key).get<double>();
    const double dmdc = summary.at("final").at("dmdc").at(key).get<double>();
    wins += deep < dmdc;
    detail += " seed " + key + ": deeprom " + fmt(deep) + " vs dmdc " + fmt(dmdc) + ";";
  }
  return {wins >= 2 && secs <= 1800.0, "50-step NMSE," + detail + " wins " + std::to_string(wins) +
                                           "/3, " + fmt(secs / 60.0) + " min"};
}

Outcome control_trend(const fs::path& work) {
  const auto config = pipeline_config();
  const harness::Layout layout{work / "pipeline"};
  ensure_data(config, layout);
  harness::cmd_train_ctrl(config, layout);
  const json summary = harness::cmd_eval_ctrl(config, layout);
  int good = 0;
  std::string detail;
  for (const auto seed : config.seeds) {
    const std::string key = std::to_string(seed);
    const json& roc = summary.at("deeproc").at(key);
    const json& lqr = summary.at("dmdc_lqr").at(key);
    const double mse = roc.at("final_mse").get<double>();
    const double lqr_mse = lqr.at("final_mse").get<double>();
    const double act = roc.at("cumulative_actuation").get<double>();
    const double lqr_act = lqr.at("cumulative_actuation").get<double>();
    const double ratio = std::max(mse, lqr_mse) / std::max(std::min(mse, lqr_mse), 1e-300);
    const bool ok = mse <= 1e-2 && ratio <= 3.0 && act <= lqr_act;
    good += ok;
    detail += " seed " + key + ": MSE(5) " + fmt(mse) + " vs " + fmt(lqr_mse) + ", actuation " +
              fmt(act) + " vs " + fmt(lqr_act) + (ok ? " ok;" : " no;");
  }
  return {good >= 2, "DeepROC vs DMDc+LQR," + detail + " " + std::to_string(good) + "/3 seeds"};
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  return std::equal(std::istreambuf_iterator<char>(fa), std::istreambuf_iterator<char>(),
                    std::istreambuf_iterator<char>(fb), std::istreambuf_iterator<char>());
}

// Every regular file below `root` except resolved-config copies and summaries
// that embed output paths.
std::map<std::string, fs::path> artifact_files(const fs::path& root) {
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name == "config.resolved.json" || name == "summary.json") continue;
    out[fs::relative(entry.path(), root).string()] = entry.path();
  }
  return out;
}

Outcome determinism(const fs::path& work) {
  const json small = {
      {"seeds", {5}},
      {"data", {{"train_count", 8}, {"test_count", 3}, {"steps", 12}}},
      {"larom", {{"iterations", 50}}},
      {"eval_pred", {{"horizon", 12}}},
      {"deeprom", {{"epochs", 2}, {"channels", 4}, {"fc_hidden", 8}, {"dyn_hidden", 10}}},
      {"control",
       {{"deeprom", {{"epochs", 2}, {"channels", 4}, {"fc_hidden", 8}, {"dyn_hidden", 10}}},
        {"epochs", 2},
        {"hidden", 10}}},
  };
  const auto config = harness::RunConfig::from_json(small);
  std::vector<std::map<std::string, std::uint32_t>> checksums;
  std::vector<fs::path> roots;
  for (int run = 0; run < 2; ++run) {
    const fs::path root = work / ("determinism_" + std::to_string(run));
    fs::remove_all(root);
    const harness::Layout layout{root};
    const json data = harness::cmd_gen_data(config, layout);
    std::map<std::string, std::uint32_t> sums;
    for (const auto& set : {"train", "test"})
      for (const auto& [k, v] : data.at(set).at("checksums").items())
        sums[std::string(set) + "/" + k] = v.get<std::uint32_t>();
    checksums.push_back(sums);
    for (const char* model : {"dmdc", "larom", "deeprom"}) {
      auto cfg = config;
      if (std::string(model) == "dmdc") cfg.dmdc = {2, 3};
      harness::cmd_train(cfg, layout, model);
    }
    auto ctrl_cfg = config;
    ctrl_cfg.control.dmdc = {2, 3};
    harness::cmd_train_ctrl(ctrl_cfg, layout);
    roots.push_back(root);
  }
  const auto a = artifact_files(roots[0]), b = artifact_files(roots[1]);
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& [rel, path] : a) {
    auto it = b.find(rel);
    if (it == b.end() || !same_bytes(path, it->second)) {
      differing.push_back(rel);
    }
    ++compared;
  }
  const bool sums_equal = checksums[0] == checksums[1] && !checksums[0].empty();
  const bool ok = sums_equal && differing.empty() && a.size() == b.size();
  std::string detail = "dataset checksums " + std::string(sums_equal ? "identical" : "DIFFER") +
                       ", " + std::to_string(compared) + " artifact files compared, " +
                       std::to_string(differing.size()) + " differ";
  if (!differing.empty()) detail += " (first: " + differing.front() + ")";
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory for pipeline artifacts")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria (1-10)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path root(work);
  fs::create_directories(root);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"LAROM gradient descent vs closed form", gd_closed_form_equivalence},
      {"pinv form and truncation sweep", pinv_form_equivalence},
      {"DMDc exactness", dmdc_exactness},
      {"LAROM vs DMDc mode alignment", [&] { return mode_alignment(root); }},
      {"gradient integrity", gradient_integrity},
      {"stability certificate", stability_certificate},
      {"PDE solver", pde_solver},
      {"prediction trend (DeepROM vs DMDc)", [&] { return prediction_trend(root); }},
      {"control trend (DeepROC vs DMDc+LQR)", [&] { return control_trend(root); }},
      {"determinism", [&] { return determinism(root); }},
  };

  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(number)) continue;
    Outcome out;
    const Timer timer;
    try {
      out = criteria[i].second();
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    failed += !out.pass;
    std::cout << (out.pass ? "PASS" : "FAIL") << " " << number << " " << criteria[i].first << ": "
              << out.detail << " [" << fmt(timer.seconds()) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
