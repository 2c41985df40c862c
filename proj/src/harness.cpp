#include "rom/harness.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "rom/io.hpp"
#include "rom/log.hpp"

namespace rom::harness {

namespace {

constexpr std::uint64_t kDeepInitStream = 0x494e4954;  // "INIT"
constexpr std::uint64_t kCtrlInitStream = 0x43494e54;  // "CINT"

const json& require_section(const json& j, const char* key) { return j.at(key); }

bool same_kind(const json& def, const json& val) {
  if (def.is_number()) {
    // Every integer key is a count, index or seed.
    if (def.is_number_integer()) {
      return val.is_number_unsigned() || (val.is_number_integer() && val.get<std::int64_t>() >= 0);
    }
    return val.is_number();
  }
  return def.type() == val.type();
}

void overlay(json& target, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!target.contains(key)) throw ConfigError("config: unknown key '" + here + "'");
    json& slot = target[key];
    if (slot.is_object()) {
      overlay(slot, value, here);
    } else if (!same_kind(slot, value)) {
      throw ConfigError("config: key '" + here + "' expects " + std::string(slot.type_name()) +
                        ", got " + std::string(value.type_name()));
    } else {
      slot = value;
    }
  }
}

template <class T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

DeepRomSettings deeprom_settings(const json& j, const pde::Grid& grid, double dt) {
  DeepRomSettings s;
  s.model.nodes = grid.nodes;
  s.model.dt = dt;
  s.model.rx = get<std::size_t>(j, "r_x");
  s.model.channels = get<std::size_t>(j, "channels");
  s.model.fc_hidden = get<std::size_t>(j, "fc_hidden");
  s.model.dyn_hidden = get<std::size_t>(j, "dyn_hidden");
  s.train.epochs = get<std::size_t>(j, "epochs");
  s.train.batch = get<std::size_t>(j, "batch");
  s.train.lr = get<double>(j, "lr");
  s.train.lr_decay = get<double>(j, "lr_decay");
  s.train.beta2 = get<double>(j, "beta2");
  s.train.validation_fraction = get<double>(j, "validation_fraction");
  s.train.keep_best = get<bool>(j, "keep_best");
  return s;
}

DmdcSettings dmdc_settings(const json& j) {
  return {get<std::size_t>(j, "r_x"), get<std::size_t>(j, "r_xu")};
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("config: " + msg);
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

std::ofstream open_csv(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw io::FormatError("cannot write " + path.string());
  out << std::setprecision(17);
  return out;
}

pde::TrajectoryDataset load_required_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) {
    throw std::runtime_error("dataset missing at " + dir.string() + "; run gen-data first");
  }
  return pde::load_dataset(dir);
}

void require_checkpoint(const fs::path& dir, const std::string& what) {
  if (!fs::exists(dir / "manifest.json")) {
    throw std::runtime_error(what + " checkpoint missing at " + dir.string());
  }
}

json spectrum_json(const Vector& s) { return std::vector<double>(s.data(), s.data() + s.size()); }

linear::LinearRom fit_and_log_dmdc(const linear::SnapshotMatrices& snap, const DmdcSettings& s,
                                   const fs::path& dir) {
  const auto rom = linear::fit_dmdc(snap, static_cast<linalg::Index>(s.rx),
                                    static_cast<linalg::Index>(s.rxu));
  const Matrix eet = rom.e * rom.e.transpose();
  const double orth = (eet - Matrix::Identity(eet.rows(), eet.cols())).norm();
  if (orth > 1e-10) throw std::runtime_error("dmdc: E E^T deviates from I by " + std::to_string(orth));
  json meta = {{"method", "dmdc"}, {"r_x", s.rx}, {"r_xu", s.rxu}};
  linear::save_linear_rom(rom, dir, meta);
  json log = {{"r_x", s.rx},
              {"r_xu", s.rxu},
              {"orthonormality_error", orth},
              {"singular_values_y", spectrum_json(singular_values(snap.y))},
              {"singular_values_omega", spectrum_json(singular_values(snap.omega))}};
  io::write_json(dir / "fit_log.json", log);
  return rom;
}

}  // namespace

json default_config() {
  return {
      {"schema_version", kSchemaVersion},
      {"seeds", {0, 1, 2}},
      {"data",
       {{"seed", 0},
        {"train_count", 100},
        {"test_count", 100},
        {"steps", 50},
        {"actuation_gain", 10.0},
        {"train_stream_base", 0},
        {"test_stream_base", 1000000},
        {"nodes", 256},
        {"sigma", 0.2},
        {"dt", 0.01},
        {"substeps", 10}}},
      {"train", {{"model", "deeprom"}}},
      {"dmdc", {{"r_x", 5}, {"r_xu", 6}}},
      {"larom",
       {{"r_x", 3},
        {"beta1", 1.0},
        {"beta4", 1.0},
        {"iterations", 2000},
        {"lr", 1e-3},
        {"grad_tol", 1e-6}}},
      {"deeprom",
       {{"r_x", 5},
        {"channels", 32},
        {"fc_hidden", 64},
        {"dyn_hidden", 100},
        {"epochs", 100},
        {"batch", 32},
        {"lr", 1e-3},
        {"lr_decay", 0.99},
        {"beta2", 1.0},
        {"validation_fraction", 0.1},
        {"keep_best", true}}},
      {"control",
       {{"deeprom",
         {{"r_x", 2},
          {"channels", 32},
          {"fc_hidden", 64},
          {"dyn_hidden", 100},
          {"epochs", 100},
          {"batch", 32},
          {"lr", 1e-3},
          {"lr_decay", 0.99},
          {"beta2", 1.0},
          {"validation_fraction", 0.1},
          {"keep_best", true}}},
        {"hidden", 100},
        {"k_scale", 0.5},
        {"alpha", 0.2},
        {"beta3", 0.2},
        {"epochs", 100},
        {"batch", 32},
        {"lr", 1e-3},
        {"lr_decay", 0.99},
        {"dmdc", {{"r_x", 2}, {"r_xu", 3}}},
        {"lqr_q", 1.0},
        {"lqr_r", 1.0},
        {"horizon", 5.0}}},
      {"eval_pred", {{"methods", {"dmdc", "deeprom"}}, {"horizon", 50}}},
      {"modes", {{"r_x", 3}, {"r_xu", 4}}},
  };
}

json resolve_config(const json& user) {
  json resolved = default_config();
  overlay(resolved, user.is_null() ? json::object() : user, "");
  if (resolved.at("schema_version").get<int>() != kSchemaVersion) {
    throw ConfigError("config: unsupported schema_version " +
                      resolved.at("schema_version").dump());
  }
  return resolved;
}

RunConfig RunConfig::from_json(const json& user, std::optional<std::uint64_t> seed) {
  RunConfig c;
  c.resolved = resolve_config(user);
  if (seed) c.resolved["seeds"] = json::array({*seed});
  const json& r = c.resolved;
  try {
    c.seeds = r.at("seeds").get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: seeds must be non-negative integers: ") + e.what());
  }
  require(!c.seeds.empty(), "seeds must not be empty");

  const json& d = require_section(r, "data");
  c.data.grid.nodes = get<std::size_t>(d, "nodes");
  c.data.params.sigma = get<double>(d, "sigma");
  c.data.params.dt = get<double>(d, "dt");
  c.data.params.substeps = get<std::size_t>(d, "substeps");
  c.data.train.count = get<std::size_t>(d, "train_count");
  c.data.train.steps = get<std::size_t>(d, "steps");
  c.data.train.seed = get<std::uint64_t>(d, "seed");
  c.data.train.actuation_gain = get<double>(d, "actuation_gain");
  c.data.train.stream_base = get<std::uint64_t>(d, "train_stream_base");
  c.data.test = c.data.train;
  c.data.test.count = get<std::size_t>(d, "test_count");
  c.data.test.stream_base = get<std::uint64_t>(d, "test_stream_base");
  require(c.data.train.count >= 1 && c.data.test.count >= 1, "data counts must be positive");
  require(c.data.train.steps >= 1, "data.steps must be positive");
  const auto lo = std::min(c.data.train.stream_base, c.data.test.stream_base);
  const auto hi = std::max(c.data.train.stream_base, c.data.test.stream_base);
  const auto lo_count =
      lo == c.data.train.stream_base ? c.data.train.count : c.data.test.count;
  require(lo != hi && hi - lo >= lo_count, "train and test stream ranges overlap");
  try {
    c.data.grid.validate();
    c.data.params.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: data: ") + e.what());
  }

  c.train_model = get<std::string>(r.at("train"), "model");
  c.dmdc = dmdc_settings(r.at("dmdc"));
  c.modes_dmdc = dmdc_settings(r.at("modes"));

  const json& l = r.at("larom");
  c.larom.rx = get<std::size_t>(l, "r_x");
  c.larom.options.beta1 = get<double>(l, "beta1");
  c.larom.options.beta4 = get<double>(l, "beta4");
  c.larom.options.iterations = get<std::size_t>(l, "iterations");
  c.larom.options.lr = get<double>(l, "lr");
  c.larom.options.grad_tol = get<double>(l, "grad_tol");
  require(c.larom.rx == c.modes_dmdc.rx, "larom.r_x must equal modes.r_x");

  c.deeprom = deeprom_settings(r.at("deeprom"), c.data.grid, c.data.params.dt);
  const json& k = r.at("control");
  c.control.rom = deeprom_settings(k.at("deeprom"), c.data.grid, c.data.params.dt);
  c.control.controller.rx = c.control.rom.model.rx;
  c.control.controller.hidden = get<std::size_t>(k, "hidden");
  c.control.controller.k_scale = get<double>(k, "k_scale");
  c.control.controller.alpha = get<double>(k, "alpha");
  c.control.controller.beta3 = get<double>(k, "beta3");
  c.control.train.epochs = get<std::size_t>(k, "epochs");
  c.control.train.batch = get<std::size_t>(k, "batch");
  c.control.train.lr = get<double>(k, "lr");
  c.control.train.lr_decay = get<double>(k, "lr_decay");
  c.control.dmdc = dmdc_settings(k.at("dmdc"));
  c.control.lqr_q = get<double>(k, "lqr_q");
  c.control.lqr_r = get<double>(k, "lqr_r");
  c.control.horizon = get<double>(k, "horizon");
  require(c.control.lqr_q > 0 && c.control.lqr_r > 0, "LQR weights must be positive");
  require(c.control.horizon > 0, "control.horizon must be positive");

  const json& p = r.at("eval_pred");
  c.pred_methods = get<std::vector<std::string>>(p, "methods");
  c.pred_horizon = get<std::size_t>(p, "horizon");
  require(c.pred_horizon >= 1 && c.pred_horizon <= c.data.test.steps,
          "eval_pred.horizon must lie in [1, data.steps]");
  for (const auto& m : c.pred_methods) {
    require(m == "dmdc" || m == "larom" || m == "deeprom", "unknown prediction method '" + m + "'");
  }
  require(c.train_model == "dmdc" || c.train_model == "larom" || c.train_model == "deeprom",
          "train.model must be dmdc, larom or deeprom");

  try {
    c.deeprom.model.validate();
    c.deeprom.train.validate();
    c.control.rom.model.validate();
    c.control.rom.train.validate();
    c.control.controller.validate();
    c.control.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path, std::optional<std::uint64_t> seed) {
  json user;
  try {
    user = io::read_json(path);
  } catch (const std::exception& e) {
    throw ConfigError("config: cannot read " + path.string() + ": " + e.what());
  }
  return from_json(user, seed);
}

fs::path Layout::model(const std::string& method, std::uint64_t seed) const {
  return model(method) / seed_dir(seed);
}

fs::path Layout::control(std::uint64_t seed) const { return root / "control" / seed_dir(seed); }

void write_resolved_config(const fs::path& dir, const RunConfig& config) {
  fs::create_directories(dir);
  io::write_json(dir / "config.resolved.json", config.resolved);
}

Vector nmse_curve(const Predictor& predictor, const pde::TrajectoryDataset& ds,
                  std::size_t horizon) {
  if (horizon > ds.steps()) throw std::invalid_argument("nmse_curve: horizon exceeds sequence length");
  Vector num = Vector::Zero(static_cast<Eigen::Index>(horizon + 1));
  Vector den = num;
  for (const auto& s : ds.sequences) {
    const Vector u = s.actuations.head(static_cast<Eigen::Index>(horizon));
    const Matrix pred = predictor(s.states.col(0), u);
    if (pred.rows() != s.states.rows() || pred.cols() != static_cast<Eigen::Index>(horizon + 1)) {
      throw std::runtime_error("nmse_curve: predictor returned the wrong shape");
    }
    for (Eigen::Index k = 0; k <= static_cast<Eigen::Index>(horizon); ++k) {
      num[k] += (pred.col(k) - s.states.col(k)).squaredNorm();
      den[k] += s.states.col(k).squaredNorm();
    }
  }
  Vector out(num.size());
  for (Eigen::Index k = 0; k < num.size(); ++k) {
    if (den[k] > 0) {
      out[k] = num[k] / den[k];
    } else {
      out[k] = num[k] == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
  }
  return out;
}

Predictor linear_predictor(const linear::LinearRom& rom) {
  return [rom](const Vector& x0, const Vector& u) {
    return linear::rom_rollout(rom, x0, u.transpose());
  };
}

Predictor deeprom_predictor(const deep::DeepRom& model) {
  return [&model](const Vector& x0, const Vector& u) {
    Matrix acts = u.transpose();
    return deep::rollout(model, x0, acts).states;
  };
}

Vector singular_values(const Matrix& m) {
  const bool wide = m.cols() >= m.rows();
  const Matrix gram = wide ? Matrix(m * m.transpose()) : Matrix(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  Vector ev = es.eigenvalues().reverse();
  return ev.cwiseMax(0.0).cwiseSqrt();
}

json cmd_gen_data(const RunConfig& config, const Layout& layout) {
  json summary = json::object();
  const std::pair<const char*, const pde::DatasetOptions*> sets[] = {
      {"train", &config.data.train}, {"test", &config.data.test}};
  for (const auto& [name, opts] : sets) {
    log_info(std::string("gen-data: simulating ") + std::to_string(opts->count) + " " + name +
             " sequences");
    const auto ds = pde::generate_dataset(*opts, config.data.params, config.data.grid);
    const fs::path dir = layout.root / "data" / name;
    pde::save_dataset(ds, dir);
    json sums = json::object();
    for (const auto& [array, crc] : pde::dataset_checksums(dir)) sums[array] = crc;
    summary[name] = {{"dir", dir.string()}, {"sequences", opts->count}, {"checksums", sums}};
  }
  write_resolved_config(layout.root / "data", config);
  io::write_json(layout.root / "data" / "summary.json", summary);
  return summary;
}

json cmd_train(const RunConfig& config, const Layout& layout, const std::string& model_arg) {
  const std::string model = model_arg.empty() ? config.train_model : model_arg;
  const auto ds = load_required_dataset(layout.train_data());
  json summary = {{"model", model}};

  if (model == "dmdc") {
    const fs::path dir = layout.model("dmdc");
    const auto snap = linear::assemble_snapshots(ds);
    fit_and_log_dmdc(snap, config.dmdc, dir);
    write_resolved_config(dir, config);
    summary["dir"] = dir.string();
  } else if (model == "larom") {
    const auto snap = linear::assemble_snapshots(ds);
    json runs = json::array();
    for (const auto seed : config.seeds) {
      const fs::path dir = layout.model("larom", seed);
      auto options = config.larom.options;
      options.seed = seed;
      log_info("train: larom seed " + std::to_string(seed));
      const auto res = linear::fit_larom(snap, static_cast<linalg::Index>(config.larom.rx), options);
      linear::save_linear_rom(res.rom, dir, {{"method", "larom"}, {"r_x", config.larom.rx}, {"seed", seed}});
      auto csv = open_csv(dir / "training_log.csv");
      csv << "iteration,loss\n";
      for (std::size_t i = 0; i < res.loss.size(); ++i) csv << i << ',' << res.loss[i] << '\n';
      linear::write_modes_csv(dir / "modes.csv", linear::dynamic_modes(res.rom),
                              config.data.grid.coordinates());
      write_resolved_config(dir, config);
      runs.push_back({{"seed", seed},
                      {"dir", dir.string()},
                      {"iterations", res.iterations},
                      {"converged", res.converged},
                      {"final_loss", res.loss.back()},
                      {"grad_norm", res.grad_norm}});
    }
    summary["runs"] = runs;
  } else if (model == "deeprom") {
    json runs = json::array();
    for (const auto seed : config.seeds) {
      const fs::path dir = layout.model("deeprom", seed);
      deep::DeepRom net(config.deeprom.model);
      Rng rng = Rng::substream(seed, kDeepInitStream);
      net.init(rng);
      auto train = config.deeprom.train;
      train.seed = seed;
      log_info("train: deeprom seed " + std::to_string(seed));
      const auto res = deep::train_deeprom(net, ds, train);
      deep::save_deeprom(net, dir, {{"seed", seed}, {"best_epoch", res.best_epoch}});
      deep::write_training_csv(dir / "training_log.csv", res.log);
      write_resolved_config(dir, config);
      runs.push_back({{"seed", seed},
                      {"dir", dir.string()},
                      {"best_epoch", res.best_epoch},
                      {"best_val_loss", res.log.at(res.best_epoch).val_loss}});
    }
    summary["runs"] = runs;
  } else {
    throw ConfigError("train: unknown model '" + model + "'");
  }
  io::write_json(layout.model(model) / "summary.json", summary);
  return summary;
}

json cmd_train_ctrl(const RunConfig& config, const Layout& layout) {
  const auto ds = load_required_dataset(layout.train_data());
  std::vector<std::size_t> all(ds.sequences.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  const fs::path lqr_dir = layout.root / "control" / "lqr";
  const auto snap = linear::assemble_snapshots(ds);
  const auto lrom = fit_and_log_dmdc(snap, config.control.dmdc, lqr_dir / "rom");
  const auto lqr = control::lqr_fit(lrom, config.control.lqr_q, config.control.lqr_r);
  io::write_json(lqr_dir / "gain.json",
                 {{"gain", std::vector<double>(lqr.gain.data(), lqr.gain.data() + lqr.gain.size())},
                  {"rows", lqr.gain.rows()},
                  {"cols", lqr.gain.cols()},
                  {"q", lqr.q_weight},
                  {"r", lqr.r_weight}});
  write_resolved_config(lqr_dir, config);

  json runs = json::array();
  for (const auto seed : config.seeds) {
    const fs::path dir = layout.control(seed);
    deep::DeepRom rom(config.control.rom.model);
    Rng rng = Rng::substream(seed, kDeepInitStream);
    rom.init(rng);
    auto rom_train = config.control.rom.train;
    rom_train.seed = seed;
    log_info("train-ctrl: latent model seed " + std::to_string(seed));
    const auto rom_res = deep::train_deeprom(rom, ds, rom_train);
    deep::save_deeprom(rom, dir / "rom", {{"seed", seed}, {"best_epoch", rom_res.best_epoch}});
    deep::write_training_csv(dir / "rom" / "training_log.csv", rom_res.log);

    control::DeepRoc ctrl(config.control.controller);
    Rng crng = Rng::substream(seed, kCtrlInitStream);
    ctrl.init(crng);
    auto ctrl_train = config.control.train;
    ctrl_train.seed = seed;
    log_info("train-ctrl: controller seed " + std::to_string(seed));
    const auto latents = control::training_latents(rom, ds, all);
    const auto log = control::train_controller(rom, ctrl, latents, ctrl_train);
    control::save_controller(ctrl, dir / "controller", {{"seed", seed}});
    control::write_controller_csv(dir / "controller" / "training_log.csv", log);
    write_resolved_config(dir, config);
    runs.push_back({{"seed", seed},
                    {"dir", dir.string()},
                    {"rom_best_epoch", rom_res.best_epoch},
                    {"initial_loss", log.front().loss},
                    {"final_loss", log.back().loss},
                    {"final_ctrl_loss", log.back().ctrl_loss},
                    {"final_reg_loss", log.back().reg_loss}});
  }
  json summary = {{"lqr_gain", std::vector<double>(lqr.gain.data(), lqr.gain.data() + lqr.gain.size())},
                  {"runs", runs}};
  io::write_json(layout.root / "control" / "summary.json", summary);
  return summary;
}

json cmd_eval_pred(const RunConfig& config, const Layout& layout) {
  const auto test = load_required_dataset(layout.test_data());
  const fs::path out = layout.eval_pred();
  auto csv = open_csv(out / "nmse.csv");
  csv << "method,seed,step,t,nmse\n";
  json summary = {{"horizon", config.pred_horizon}, {"final", json::object()}};
  const double dt = test.params.dt;

  auto emit = [&](const std::string& method, std::uint64_t seed, const Vector& curve) {
    for (Eigen::Index k = 0; k < curve.size(); ++k) {
      csv << method << ',' << seed << ',' << k << ',' << dt * double(k) << ',' << curve[k] << '\n';
    }
    summary["final"][method][std::to_string(seed)] = curve[curve.size() - 1];
  };

  for (const auto& method : config.pred_methods) {
    if (method == "dmdc") {
      require_checkpoint(layout.model("dmdc"), "dmdc");
      const auto rom = linear::load_linear_rom(layout.model("dmdc"));
      const Vector curve = nmse_curve(linear_predictor(rom), test, config.pred_horizon);
      // Deterministic fit: the same curve stands for every seed.
      for (const auto seed : config.seeds) emit(method, seed, curve);
    } else {
      for (const auto seed : config.seeds) {
        const fs::path dir = layout.model(method, seed);
        require_checkpoint(dir, method);
        log_info("eval-pred: " + method + " seed " + std::to_string(seed));
        if (method == "larom") {
          const auto rom = linear::load_linear_rom(dir);
          emit(method, seed, nmse_curve(linear_predictor(rom), test, config.pred_horizon));
        } else {
          const auto net = deep::load_deeprom(dir);
          emit(method, seed, nmse_curve(deeprom_predictor(net), test, config.pred_horizon));
        }
      }
    }
  }
  csv.close();
  write_resolved_config(out, config);
  io::write_json(out / "summary.json", summary);
  return summary;
}

json cmd_eval_ctrl(const RunConfig& config, const Layout& layout) {
  const fs::path out = layout.eval_ctrl();
  const auto& grid = config.data.grid;
  const auto& params = config.data.params;
  const Vector x0 = control::reference_initial_state(grid);
  const double horizon = config.control.horizon;
  const fs::path lqr_rom = layout.root / "control" / "lqr" / "rom";
  require_checkpoint(lqr_rom, "lqr rom");
  for (const auto seed : config.seeds) {
    require_checkpoint(layout.control(seed) / "rom", "control rom");
    require_checkpoint(layout.control(seed) / "controller", "controller");
  }

  auto csv = open_csv(out / "metrics.csv");
  csv << "method,seed,t,mse,u,cumulative_actuation\n";
  json summary = json::object();

  auto record = [&](const std::string& method, std::optional<std::uint64_t> seed,
                    const control::ClosedLoopResult& r) {
    const std::string seed_str = seed ? std::to_string(*seed) : "";
    const fs::path dir = out / (seed ? method + "_" + seed_dir(*seed) : method);
    fs::create_directories(dir);
    control::write_closed_loop_csv(dir / "closed_loop.csv", r);
    control::write_state_history(dir, r, params.dt);
    const auto steps = r.actuations.cols();
    for (Eigen::Index i = 0; i < r.times.size(); ++i) {
      csv << method << ',' << seed_str << ',' << r.times[i] << ',' << r.mse[i] << ',';
      if (i < steps) csv << r.actuations(0, i);
      csv << ',' << r.cumulative[i] << '\n';
    }
    summary[method][seed ? seed_str : "-"] = {{"final_mse", r.mse[r.mse.size() - 1]},
                                              {"cumulative_actuation", r.actuation_cumulative()},
                                              {"max_abs_u", r.actuations.cwiseAbs().maxCoeff()}};
  };

  const auto zero = [](const Vector&) { return Vector(Vector::Zero(1)); };
  log_info("eval-ctrl: uncontrolled");
  record("uncontrolled", std::nullopt, control::closed_loop_sim(zero, x0, horizon, params, grid));

  const auto lqr = control::lqr_fit(linear::load_linear_rom(lqr_rom), config.control.lqr_q,
                                    config.control.lqr_r);
  log_info("eval-ctrl: dmdc+lqr");
  const auto lqr_run = control::closed_loop_sim([&](const Vector& x) { return lqr.act(x); }, x0,
                                                horizon, params, grid);
  for (const auto seed : config.seeds) record("dmdc_lqr", seed, lqr_run);

  for (const auto seed : config.seeds) {
    const fs::path dir = layout.control(seed);
    const auto rom = deep::load_deeprom(dir / "rom");
    const auto ctrl = control::load_controller(dir / "controller");
    log_info("eval-ctrl: deeproc seed " + std::to_string(seed));
    record("deeproc", seed,
           control::closed_loop_sim([&](const Vector& x) { return ctrl.act(rom, x); }, x0, horizon,
                                    params, grid));
  }
  csv.close();
  write_resolved_config(out, config);
  io::write_json(out / "summary.json", summary);
  return summary;
}

json cmd_modes(const RunConfig& config, const Layout& layout) {
  const fs::path out = layout.modes();
  const fs::path dmdc_dir = out / "dmdc";
  const auto ds = load_required_dataset(layout.train_data());
  const auto snap = linear::assemble_snapshots(ds);
  const auto dmdc = fit_and_log_dmdc(snap, config.modes_dmdc, dmdc_dir);
  const auto dmdc_modes = linear::dynamic_modes(dmdc);
  const Vector zeta = config.data.grid.coordinates();
  linear::write_modes_csv(out / "modes_dmdc.csv", dmdc_modes, zeta);

  json summary = {{"r_x", config.modes_dmdc.rx}, {"r_xu", config.modes_dmdc.rxu}, {"runs", json::array()}};
  for (const auto seed : config.seeds) {
    const fs::path dir = layout.model("larom", seed);
    require_checkpoint(dir, "larom");
    const auto larom = linear::load_linear_rom(dir);
    if (larom.rx() != dmdc.rx() || larom.dx() != dmdc.dx()) {
      throw std::invalid_argument("modes: larom checkpoint has r_x=" + std::to_string(larom.rx()) +
                                  ", d_x=" + std::to_string(larom.dx()) + " but dmdc has r_x=" +
                                  std::to_string(dmdc.rx()) + ", d_x=" + std::to_string(dmdc.dx()));
    }
    const auto larom_modes = linear::dynamic_modes(larom);
    linear::write_modes_csv(out / ("modes_larom_" + seed_dir(seed) + ".csv"), larom_modes, zeta);
    const auto match = linear::match_modes(dmdc_modes, larom_modes);
    json pairs = json::array();
    for (std::size_t i = 0; i < match.scores.size(); ++i) {
      const auto a = dmdc_modes.eigenvalues[static_cast<Eigen::Index>(i)];
      const auto b = larom_modes.eigenvalues[match.partner[i]];
      pairs.push_back({{"dmdc_mode", i},
                       {"larom_mode", match.partner[i]},
                       {"dmdc_eigenvalue", {a.real(), a.imag()}},
                       {"larom_eigenvalue", {b.real(), b.imag()}},
                       {"eigenvalue_gap", match.eigenvalue_gaps[i]},
                       {"score", match.scores[i]}});
    }
    summary["runs"].push_back({{"seed", seed}, {"mean_score", match.mean_score}, {"pairs", pairs}});
  }
  write_resolved_config(out, config);
  io::write_json(out / "report.json", summary);
  return summary;
}

}  // namespace rom::harness
