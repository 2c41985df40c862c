#include "rom/pde.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "rom/io.hpp"

namespace rom::pde {

namespace {

using io::json;

// Precomputed Thomas elimination for (I - c L) with the ghost-node closure.
class ImplicitDiffusion {
 public:
  ImplicitDiffusion(std::size_t n, double c_over_h2) : lower_(n), diag_(n), upper_(n), cp_(n) {
    for (std::size_t i = 0; i < n; ++i) {
      diag_[i] = 1.0 + 2.0 * c_over_h2;
      lower_[i] = -c_over_h2;
      upper_[i] = -c_over_h2;
    }
    upper_[0] = -2.0 * c_over_h2;
    lower_[n - 1] = -2.0 * c_over_h2;
    denom_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = diag_[i] - (i > 0 ? lower_[i] * cp_[i - 1] : 0.0);
      if (!(std::abs(d) > 1e-300)) throw std::runtime_error("tridiagonal solve: zero pivot");
      denom_[i] = d;
      cp_[i] = upper_[i] / d;
    }
  }

  void solve(Field& x) const {
    const std::size_t n = diag_.size();
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = (x[i] - (i > 0 ? lower_[i] * x[i - 1] : 0.0)) / denom_[i];
    }
    for (std::size_t i = n - 1; i-- > 0;) x[i] -= cp_[i] * x[i + 1];
  }

 private:
  std::vector<double> lower_, diag_, upper_, cp_, denom_;
};

// Pointwise q' = q(1 - q^2) + mask * w over h, one classical RK4 step.
void local_half_step(Field& q, double w, const Field& mask, double h, bool reaction) {
  if (!reaction && w == 0.0) return;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const double f = mask[i] * w;
    auto g = [&](double v) { return (reaction ? v * (1.0 - v * v) : 0.0) + f; };
    const double k1 = g(q[i]);
    const double k2 = g(q[i] + 0.5 * h * k1);
    const double k3 = g(q[i] + 0.5 * h * k2);
    const double k4 = g(q[i] + h * k3);
    q[i] += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
}

void require_field(const Field& q, const Grid& grid) {
  if (static_cast<std::size_t>(q.size()) != grid.nodes) {
    throw std::invalid_argument("field has " + std::to_string(q.size()) + " values, grid has " +
                                std::to_string(grid.nodes) + " nodes");
  }
  if (!q.allFinite()) throw std::invalid_argument("field contains non-finite values");
}

json grid_json(const Grid& g) {
  return {{"left", g.left},
          {"right", g.right},
          {"nodes", g.nodes},
          {"actuation_window", {g.actuation_lo, g.actuation_hi}}};
}

json params_json(const SimParams& p) {
  return {{"sigma", p.sigma}, {"dt", p.dt}, {"substeps", p.substeps}, {"reaction", p.reaction}};
}

json options_json(const DatasetOptions& o) {
  return {{"count", o.count},
          {"steps", o.steps},
          {"seed", o.seed},
          {"stream_base", o.stream_base},
          {"actuation_gain", o.actuation_gain}};
}

}  // namespace

void Grid::validate() const {
  if (nodes < 3) throw std::invalid_argument("grid needs at least 3 nodes");
  if (!(right > left)) throw std::invalid_argument("grid: right must exceed left");
  if (!(actuation_lo > left && actuation_hi < right && actuation_lo < actuation_hi)) {
    throw std::invalid_argument("actuation window must lie strictly inside the domain");
  }
}

Field Grid::coordinates() const {
  Field z(static_cast<Eigen::Index>(nodes));
  for (std::size_t j = 0; j < nodes; ++j) z[static_cast<Eigen::Index>(j)] = node(j);
  return z;
}

Field Grid::actuation_mask() const {
  Field m = Field::Zero(static_cast<Eigen::Index>(nodes));
  // Nodes within rounding distance of an endpoint count as on it, so the
  // mask does not depend on how node() happens to round.
  const double tol = 1e-9 * spacing();
  for (std::size_t j = 0; j < nodes; ++j) {
    const double z = node(j);
    if (z > actuation_lo + tol && z < actuation_hi - tol) m[static_cast<Eigen::Index>(j)] = 1.0;
  }
  return m;
}

void SimParams::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("dt must be positive");
  if (substeps < 1) throw std::invalid_argument("substeps must be at least 1");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("sigma must be >= 0");
}

Field laplacian(const Field& q, const Grid& grid) {
  const Eigen::Index n = q.size();
  const double inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
  Field out(n);
  out[0] = 2.0 * (q[1] - q[0]) * inv_h2;
  for (Eigen::Index i = 1; i + 1 < n; ++i) out[i] = (q[i - 1] - 2.0 * q[i] + q[i + 1]) * inv_h2;
  out[n - 1] = 2.0 * (q[n - 2] - q[n - 1]) * inv_h2;
  return out;
}

Field rhs(const Field& q, double w, const SimParams& params, const Grid& grid) {
  grid.validate();
  require_field(q, grid);
  Field out = params.sigma * laplacian(q, grid);
  if (params.reaction) out.array() += q.array() * (1.0 - q.array().square());
  if (w != 0.0) out += w * grid.actuation_mask();
  return out;
}

Field step(const Field& q, double w, const SimParams& params, const Grid& grid) {
  grid.validate();
  params.validate();
  require_field(q, grid);
  if (!std::isfinite(w)) throw std::invalid_argument("actuation is not finite");

  const double tau = params.dt / static_cast<double>(params.substeps);
  const double half = 0.5 * tau * params.sigma;
  const ImplicitDiffusion implicit(grid.nodes, half / (grid.spacing() * grid.spacing()));
  const Field mask = grid.actuation_mask();

  Field x = q;
  for (std::size_t s = 0; s < params.substeps; ++s) {
    local_half_step(x, w, mask, 0.5 * tau, params.reaction);
    Field next = x + half * laplacian(x, grid);
    implicit.solve(next);
    x = std::move(next);
    local_half_step(x, w, mask, 0.5 * tau, params.reaction);
  }
  if (!x.allFinite()) throw std::runtime_error("PDE step produced non-finite values");
  return x;
}

Eigen::MatrixXd simulate(const Field& initial, const Eigen::VectorXd& actuations,
                         const SimParams& params, const Grid& grid) {
  grid.validate();
  params.validate();
  require_field(initial, grid);
  Eigen::MatrixXd states(initial.size(), actuations.size() + 1);
  states.col(0) = initial;
  for (Eigen::Index i = 0; i < actuations.size(); ++i) {
    states.col(i + 1) = step(states.col(i), actuations[i], params, grid);
  }
  return states;
}

Field chebyshev_field(const Grid& grid, double a, const std::array<double, 5>& b) {
  const Field z = grid.coordinates();
  Field out = Field::Zero(z.size());
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    double t_prev = 1.0, t_cur = z[j];
    double acc = b[0] * t_prev + b[1] * t_cur;
    for (std::size_t k = 2; k < b.size(); ++k) {
      const double t_next = 2.0 * z[j] * t_cur - t_prev;
      acc += b[k] * t_next;
      t_prev = t_cur;
      t_cur = t_next;
    }
    out[j] = std::abs(a) * acc;
  }
  return out;
}

InitialCondition chebyshev_ic(Rng& rng, const Grid& grid) {
  InitialCondition ic;
  ic.a = rng.normal();
  for (double& bk : ic.b) bk = rng.uniform(-1.0, 1.0);
  ic.field = chebyshev_field(grid, ic.a, ic.b);
  return ic;
}

TrajectoryDataset generate_dataset(const DatasetOptions& options, const SimParams& params,
                                   const Grid& grid) {
  grid.validate();
  params.validate();
  TrajectoryDataset ds{grid, params, options, {}};
  const auto n = static_cast<Eigen::Index>(options.steps);
  for (std::size_t s = 0; s < options.count; ++s) {
    Rng rng = Rng::substream(options.seed, options.stream_base + s);
    const InitialCondition ic = chebyshev_ic(rng, grid);
    Sequence seq;
    seq.a = ic.a;
    seq.b = ic.b;
    seq.states.resize(ic.field.size(), n + 1);
    seq.actuations.resize(n);
    seq.gains.resize(n);
    seq.states.col(0) = ic.field;
    for (Eigen::Index i = 0; i < n; ++i) {
      seq.gains[i] = rng.uniform(-1.0, 1.0);
      seq.actuations[i] =
          options.actuation_gain * seq.gains[i] * seq.states.col(i).cwiseAbs().maxCoeff();
      seq.states.col(i + 1) = step(seq.states.col(i), seq.actuations[i], params, grid);
    }
    ds.sequences.push_back(std::move(seq));
  }
  return ds;
}

bool operator==(const TrajectoryDataset& a, const TrajectoryDataset& b) {
  if (grid_json(a.grid) != grid_json(b.grid) || params_json(a.params) != params_json(b.params) ||
      options_json(a.options) != options_json(b.options) ||
      a.sequences.size() != b.sequences.size()) {
    return false;
  }
  for (std::size_t s = 0; s < a.sequences.size(); ++s) {
    const Sequence &x = a.sequences[s], &y = b.sequences[s];
    if (x.states != y.states || x.actuations != y.actuations || x.gains != y.gains ||
        x.a != y.a || x.b != y.b) {
      return false;
    }
  }
  return true;
}

void save_dataset(const TrajectoryDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t count = ds.sequences.size(), steps = ds.steps(), nodes = ds.grid.nodes;
  std::vector<double> states, actuations, amplitude, coeffs, gains;
  states.reserve(count * (steps + 1) * nodes);
  for (const Sequence& s : ds.sequences) {
    if (static_cast<std::size_t>(s.states.rows()) != nodes ||
        static_cast<std::size_t>(s.states.cols()) != steps + 1 ||
        static_cast<std::size_t>(s.actuations.size()) != steps) {
      throw std::invalid_argument("save_dataset: sequence shape disagrees with options");
    }
    // Column-major nodes x (steps+1) is row-major [steps+1, nodes].
    states.insert(states.end(), s.states.data(), s.states.data() + s.states.size());
    actuations.insert(actuations.end(), s.actuations.data(),
                      s.actuations.data() + s.actuations.size());
    amplitude.push_back(s.a);
    coeffs.insert(coeffs.end(), s.b.begin(), s.b.end());
    gains.insert(gains.end(), s.gains.data(), s.gains.data() + s.gains.size());
  }

  json arrays = json::object();
  auto put = [&](const std::string& name, const std::vector<double>& v,
                 std::vector<std::size_t> shape) {
    const std::string file = name + ".bin";
    const auto crc = io::write_f64(dir / file, v);
    arrays[name] = {{"file", file}, {"shape", shape}, {"crc32", crc}};
  };
  put("states", states, {count, steps + 1, nodes});
  put("actuations", actuations, {count, steps});
  put("ic_amplitude", amplitude, {count});
  put("ic_coefficients", coeffs, {count, 5});
  put("gains", gains, {count, steps});

  io::write_json(dir / "manifest.json",
                 {{"format", "rom-dataset-v1"},
                  {"dtype", "float64-little-endian"},
                  {"layout", "row-major"},
                  {"rng", "mt19937_64, sequence i seeded by splitmix64 mix of (seed, stream_base + i)"},
                  {"grid", grid_json(ds.grid)},
                  {"params", params_json(ds.params)},
                  {"options", options_json(ds.options)},
                  {"arrays", arrays}});
}

TrajectoryDataset load_dataset(const std::filesystem::path& dir) {
  const json m = io::read_json(dir / "manifest.json");
  try {
    if (m.at("format") != "rom-dataset-v1") throw io::FormatError("not a dataset manifest");
    if (m.at("dtype") != "float64-little-endian") throw io::FormatError("unsupported dtype");
    TrajectoryDataset ds;
    const json& g = m.at("grid");
    ds.grid.left = g.at("left");
    ds.grid.right = g.at("right");
    ds.grid.nodes = g.at("nodes");
    ds.grid.actuation_lo = g.at("actuation_window").at(0);
    ds.grid.actuation_hi = g.at("actuation_window").at(1);
    const json& p = m.at("params");
    ds.params.sigma = p.at("sigma");
    ds.params.dt = p.at("dt");
    ds.params.substeps = p.at("substeps");
    ds.params.reaction = p.at("reaction");
    const json& o = m.at("options");
    ds.options.count = o.at("count");
    ds.options.steps = o.at("steps");
    ds.options.seed = o.at("seed");
    ds.options.stream_base = o.at("stream_base");
    ds.options.actuation_gain = o.at("actuation_gain");
    ds.grid.validate();
    ds.params.validate();

    const std::size_t count = ds.options.count, steps = ds.options.steps, nodes = ds.grid.nodes;
    auto get = [&](const std::string& name, std::vector<std::size_t> expected) {
      const json& a = m.at("arrays").at(name);
      const auto shape = a.at("shape").get<std::vector<std::size_t>>();
      if (shape != expected) {
        throw io::FormatError("array '" + name + "' has shape " + json(shape).dump() +
                              ", expected " + json(expected).dump());
      }
      std::size_t total = 1;
      for (std::size_t d : shape) total *= d;
      try {
        return io::read_f64(dir / a.at("file").get<std::string>(), total,
                            a.at("crc32").get<std::uint32_t>());
      } catch (const io::FormatError& e) {
        throw io::FormatError("array '" + name + "': " + e.what());
      }
    };
    const auto states = get("states", {count, steps + 1, nodes});
    const auto actuations = get("actuations", {count, steps});
    const auto amplitude = get("ic_amplitude", {count});
    const auto coeffs = get("ic_coefficients", {count, 5});
    const auto gains = get("gains", {count, steps});

    const auto n = static_cast<Eigen::Index>(steps);
    for (std::size_t s = 0; s < count; ++s) {
      Sequence seq;
      seq.states = Eigen::Map<const Eigen::MatrixXd>(states.data() + s * (steps + 1) * nodes,
                                                     static_cast<Eigen::Index>(nodes), n + 1);
      seq.actuations = Eigen::Map<const Eigen::VectorXd>(actuations.data() + s * steps, n);
      seq.gains = Eigen::Map<const Eigen::VectorXd>(gains.data() + s * steps, n);
      seq.a = amplitude[s];
      std::copy_n(coeffs.begin() + static_cast<std::ptrdiff_t>(s * 5), 5, seq.b.begin());
      ds.sequences.push_back(std::move(seq));
    }
    return ds;
  } catch (const io::json::exception& e) {
    throw io::FormatError(dir.string() + ": malformed dataset manifest: " + e.what());
  }
}

std::vector<std::pair<std::string, std::uint32_t>> dataset_checksums(
    const std::filesystem::path& dir) {
  const json m = io::read_json(dir / "manifest.json");
  std::vector<std::pair<std::string, std::uint32_t>> out;
  for (const auto& [name, a] : m.at("arrays").items()) {
    out.emplace_back(name, a.at("crc32").get<std::uint32_t>());
  }
  return out;
}

void write_trajectory_csv(const std::filesystem::path& path, const Eigen::MatrixXd& states,
                          const Grid& grid, double dt) {
  if (static_cast<std::size_t>(states.rows()) != grid.nodes) {
    throw std::invalid_argument("trajectory rows do not match grid nodes");
  }
  std::ofstream out(path);
  if (!out) throw io::FormatError("cannot open " + path.string());
  out.precision(17);
  out << "t";
  for (std::size_t j = 0; j < grid.nodes; ++j) out << ",zeta_" << j;
  out << '\n';
  for (Eigen::Index t = 0; t < states.cols(); ++t) {
    out << dt * static_cast<double>(t);
    for (Eigen::Index j = 0; j < states.rows(); ++j) out << ',' << states(j, t);
    out << '\n';
  }
}

}  // namespace rom::pde
