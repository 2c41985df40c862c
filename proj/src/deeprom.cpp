#include "rom/deeprom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "rom/io.hpp"
#include "rom/ode.hpp"
#include "rom/optim.hpp"

namespace rom::deep {

using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

constexpr std::size_t kKernel = 3, kStride = 2, kPadding = 1, kOutPadding = 1;
constexpr std::uint64_t kSplitStream = 0x53504c4954ULL;
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;

Var as_channels(Var x) {
  return nn::reshape(x, Shape{x.shape()[0], 1, x.shape()[1]});
}

}  // namespace

void ModelConfig::validate() const {
  if (rx == 0 || du == 0 || channels == 0 || fc_hidden == 0 || dyn_hidden == 0) {
    throw std::invalid_argument("ModelConfig: widths must be positive");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("ModelConfig: dt must be positive");
  if (nodes < 4) throw std::invalid_argument("ModelConfig: at least 4 nodes required");
  const auto l1 = nn::conv1d_output_length(nodes, kKernel, kStride, kPadding);
  const auto l2 = nn::conv1d_output_length(l1, kKernel, kStride, kPadding);
  if (nn::conv1d_transpose_output_length(l2, kKernel, kStride, kPadding, kOutPadding) != l1 ||
      nn::conv1d_transpose_output_length(l1, kKernel, kStride, kPadding, kOutPadding) != nodes) {
    throw std::invalid_argument("ModelConfig: node count " + std::to_string(nodes) +
                                " must be divisible by 4");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"nodes", nodes},         {"r_x", rx},
          {"d_u", du},              {"dt", dt},
          {"channels", channels},   {"fc_hidden", fc_hidden},
          {"dyn_hidden", dyn_hidden}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.nodes = j.at("nodes").get<std::size_t>();
  c.rx = j.at("r_x").get<std::size_t>();
  c.du = j.at("d_u").get<std::size_t>();
  c.dt = j.at("dt").get<double>();
  c.channels = j.at("channels").get<std::size_t>();
  c.fc_hidden = j.at("fc_hidden").get<std::size_t>();
  c.dyn_hidden = j.at("dyn_hidden").get<std::size_t>();
  c.validate();
  return c;
}

DeepRom::DeepRom(ModelConfig config) : config_(config) {
  config_.validate();
  const auto c = config_.channels;
  len1_ = nn::conv1d_output_length(config_.nodes, kKernel, kStride, kPadding);
  len2_ = nn::conv1d_output_length(len1_, kKernel, kStride, kPadding);
  const auto flat = c * len2_;
  enc_conv1 = nn::Conv1d("enc.conv1", 1, c, kKernel, kStride, kPadding);
  enc_conv2 = nn::Conv1d("enc.conv2", c, c, kKernel, kStride, kPadding);
  enc_fc1 = nn::Linear("enc.fc1", flat, config_.fc_hidden, true);
  enc_fc2 = nn::Linear("enc.fc2", config_.fc_hidden, config_.rx, false);
  dec_fc1 = nn::Linear("dec.fc1", config_.rx, config_.fc_hidden, false);
  dec_fc2 = nn::Linear("dec.fc2", config_.fc_hidden, flat, true);
  dec_conv1 = nn::ConvTranspose1d("dec.conv1", c, c, kKernel, kStride, kPadding, kOutPadding);
  dec_conv2 = nn::ConvTranspose1d("dec.conv2", c, 1, kKernel, kStride, kPadding, kOutPadding);
  f_auto = nn::Mlp("f_auto", nn::MlpSpec::relu_net(config_.rx, config_.dyn_hidden, config_.rx));
  f_forced = nn::Mlp("f_forced", nn::MlpSpec::relu_net(config_.rx + config_.du,
                                                       config_.dyn_hidden, config_.rx));
}

void DeepRom::init(Rng& rng) {
  enc_conv1.init(rng);
  enc_conv2.init(rng);
  enc_fc1.init(rng);
  enc_fc2.init(rng);
  dec_fc1.init(rng);
  dec_fc2.init(rng);
  dec_conv1.init(rng);
  dec_conv2.init(rng);
  f_auto.init(rng);
  f_forced.init(rng);
}

nn::ParameterRefs DeepRom::autoencoder_parameters() {
  nn::ParameterRefs out;
  enc_conv1.collect(out);
  enc_conv2.collect(out);
  enc_fc1.collect(out);
  enc_fc2.collect(out);
  dec_fc1.collect(out);
  dec_fc2.collect(out);
  dec_conv1.collect(out);
  dec_conv2.collect(out);
  return out;
}

nn::ParameterRefs DeepRom::dynamics_parameters() {
  nn::ParameterRefs out;
  f_auto.collect(out);
  f_forced.collect(out);
  return out;
}

nn::ParameterRefs DeepRom::parameters() {
  auto out = autoencoder_parameters();
  const auto dyn = dynamics_parameters();
  out.insert(out.end(), dyn.begin(), dyn.end());
  return out;
}

void DeepRom::set_trainable(bool trainable) {
  for (auto* p : parameters()) p->trainable = trainable;
}

Var DeepRom::encode(Tape& tape, Var x) const {
  if (x.shape().size() != 2 || x.shape()[1] != config_.nodes) {
    throw std::invalid_argument("encode: expected [batch, " + std::to_string(config_.nodes) +
                                "], got " + nn::shape_string(x.shape()));
  }
  const auto batch = x.shape()[0];
  Var h = nn::relu(enc_conv1.forward(tape, as_channels(x)));
  h = enc_conv2.forward(tape, h);
  h = nn::reshape(h, Shape{batch, config_.channels * len2_});
  h = nn::relu(enc_fc1.forward(tape, h));
  return enc_fc2.forward(tape, h);
}

Var DeepRom::decode(Tape& tape, Var z) const {
  if (z.shape().size() != 2 || z.shape()[1] != config_.rx) {
    throw std::invalid_argument("decode: expected [batch, " + std::to_string(config_.rx) +
                                "], got " + nn::shape_string(z.shape()));
  }
  const auto batch = z.shape()[0];
  Var h = nn::relu(dec_fc1.forward(tape, z));
  h = nn::relu(dec_fc2.forward(tape, h));
  h = nn::reshape(h, Shape{batch, config_.channels, len2_});
  h = nn::relu(dec_conv1.forward(tape, h));
  h = dec_conv2.forward(tape, h);
  return nn::reshape(h, Shape{batch, config_.nodes});
}

Var DeepRom::latent_rhs(Tape& tape, Var z, Var u) const {
  if (u.shape().size() != 2 || u.shape()[1] != config_.du || u.shape()[0] != z.shape()[0]) {
    throw std::invalid_argument("latent_rhs: actuation shape " + nn::shape_string(u.shape()));
  }
  Var zero_u = tape.constant(Tensor(Shape{z.shape()[0], config_.du}));
  Var forced = f_forced.forward(tape, nn::concat_cols(z, u));
  Var free = f_forced.forward(tape, nn::concat_cols(z, zero_u));
  return f_auto.forward(tape, z) + (forced - free);
}

Var DeepRom::predict_next(Tape& tape, Var z, Var u) const {
  const nn::VectorField f = [this, &tape](Var zz, Var uu) { return latent_rhs(tape, zz, uu); };
  return nn::rk4_step(f, z, u, config_.dt);
}

Tensor rows_tensor(const Matrix& m) { return Tensor::from_matrix(m.transpose()); }

Matrix columns_matrix(const Tensor& t) { return t.to_matrix().transpose(); }

Matrix DeepRom::encode(const Matrix& x) const {
  Tape tape(false);
  return columns_matrix(encode(tape, tape.constant(rows_tensor(x))).value());
}

Matrix DeepRom::decode(const Matrix& z) const {
  Tape tape(false);
  return columns_matrix(decode(tape, tape.constant(rows_tensor(z))).value());
}

Vector DeepRom::encode(const Vector& x) const { return encode(Matrix(x)).col(0); }
Vector DeepRom::decode(const Vector& z) const { return decode(Matrix(z)).col(0); }

Vector DeepRom::latent_rhs(const Vector& z, const Vector& u) const {
  Tape tape(false);
  Var out = latent_rhs(tape, tape.constant(rows_tensor(z)), tape.constant(rows_tensor(u)));
  return columns_matrix(out.value()).col(0);
}

Vector DeepRom::predict_next(const Vector& z, const Vector& u) const {
  Tape tape(false);
  Var out = predict_next(tape, tape.constant(rows_tensor(z)), tape.constant(rows_tensor(u)));
  return columns_matrix(out.value()).col(0);
}

void TrainConfig::validate() const {
  if (epochs == 0 || batch == 0) throw std::invalid_argument("TrainConfig: counts must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("TrainConfig: validation fraction must lie in (0, 1)");
  }
  if (!(lr > 0.0) || !(lr_decay > 0.0 && lr_decay <= 1.0) || !(beta2 >= 0.0)) {
    throw std::invalid_argument("TrainConfig: lr > 0, lr_decay in (0, 1], beta2 >= 0 required");
  }
}

Transitions collect_transitions(const pde::TrajectoryDataset& ds,
                                const std::vector<std::size_t>& sequences) {
  const std::size_t nodes = ds.grid.nodes;
  std::size_t n = 0;
  for (auto s : sequences) n += static_cast<std::size_t>(ds.sequences.at(s).actuations.size());
  Transitions t{Tensor(Shape{n, nodes}), Tensor(Shape{n, 1}), Tensor(Shape{n, nodes})};
  std::size_t row = 0;
  for (auto s : sequences) {
    const auto& seq = ds.sequences[s];
    for (Eigen::Index i = 0; i < seq.actuations.size(); ++i, ++row) {
      for (std::size_t j = 0; j < nodes; ++j) {
        t.x[row * nodes + j] = seq.states(static_cast<Eigen::Index>(j), i);
        t.x_next[row * nodes + j] = seq.states(static_cast<Eigen::Index>(j), i + 1);
      }
      t.u[row] = seq.actuations[i];
    }
  }
  return t;
}

Transitions gather(const Transitions& t, const std::vector<std::size_t>& index) {
  const std::size_t nodes = t.x.dim(1), du = t.u.dim(1), n = index.size();
  Transitions out{Tensor(Shape{n, nodes}), Tensor(Shape{n, du}), Tensor(Shape{n, nodes})};
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t src = index[r];
    std::copy_n(t.x.data() + src * nodes, nodes, out.x.data() + r * nodes);
    std::copy_n(t.x_next.data() + src * nodes, nodes, out.x_next.data() + r * nodes);
    std::copy_n(t.u.data() + src * du, du, out.u.data() + r * du);
  }
  return out;
}

void split_sequences(std::size_t count, double validation_fraction, std::uint64_t seed,
                     std::vector<std::size_t>& train, std::vector<std::size_t>& validation) {
  if (count < 2) throw std::invalid_argument("split_sequences: need at least two sequences");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng = Rng::substream(seed, kSplitStream);
  shuffle(order, rng);
  auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * double(count)));
  n_val = std::clamp<std::size_t>(n_val, 1, count - 1);
  validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(validation.begin(), validation.end());
  std::sort(train.begin(), train.end());
}

Var deeprom_loss(Tape& tape, const DeepRom& model, const Transitions& batch, double beta2) {
  const std::size_t b = batch.size();
  Var x = tape.constant(batch.x), u = tape.constant(batch.u), y = tape.constant(batch.x_next);
  Var zx = model.encode(tape, x);
  Var zy = model.encode(tape, y);
  Var pred = nn::mean_squared_norm(zy - model.predict_next(tape, zx, u));
  if (beta2 == 0.0) return pred;
  Var zero = tape.constant(Tensor(Shape{1, model.config().nodes}));
  Var recon = nn::sum_squares(x - model.decode(tape, zx)) +
              nn::sum_squares(model.decode(tape, model.encode(tape, zero)));
  return pred + (beta2 / double(b + 1)) * recon;
}

double evaluate_loss(const DeepRom& model, const Transitions& data, double beta2,
                     std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("evaluate_loss: batch must be positive");
  const std::size_t n = data.size();
  if (n == 0) throw std::invalid_argument("evaluate_loss: no transitions");
  double total = 0.0;
  std::vector<std::size_t> index;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    index.clear();
    for (std::size_t i = start; i < end; ++i) index.push_back(i);
    Tape tape(false);
    total += double(end - start) * deeprom_loss(tape, model, gather(data, index), beta2).value().item();
  }
  return total / double(n);
}

TrainResult train_deeprom(DeepRom& model, const pde::TrajectoryDataset& ds,
                          const TrainConfig& config) {
  config.validate();
  if (ds.grid.nodes != model.config().nodes || std::abs(ds.params.dt - model.config().dt) > 0.0) {
    throw std::invalid_argument("train_deeprom: dataset grid or dt does not match the model");
  }
  TrainResult result;
  split_sequences(ds.sequences.size(), config.validation_fraction, config.seed,
                  result.train_sequences, result.validation_sequences);
  const Transitions train = collect_transitions(ds, result.train_sequences);
  const Transitions val = collect_transitions(ds, result.validation_sequences);

  for (auto* p : model.autoencoder_parameters()) p->trainable = !config.freeze_autoencoder;
  for (auto* p : model.dynamics_parameters()) p->trainable = true;
  const nn::ParameterRefs params = model.parameters();
  nn::Adam adam(params, nn::AdamOptions{.lr = config.lr, .epoch_decay = config.lr_decay});
  Rng rng = Rng::substream(config.seed, kShuffleStream);

  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_values = nn::snapshot(params);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    double sum = 0.0;
    const double lr = adam.lr();
    try {
      std::vector<std::size_t> index;
      for (std::size_t start = 0; start < order.size(); start += config.batch) {
        const std::size_t end = std::min(order.size(), start + config.batch);
        index.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
        Tape tape;
        Var loss = deeprom_loss(tape, model, gather(train, index), config.beta2);
        sum += double(end - start) * loss.value().item();
        adam.step(tape.backward(loss));
      }
    } catch (const nn::NumericalError& err) {
      std::ostringstream msg;
      msg << "train_deeprom diverged in epoch " << epoch << ": " << err.what();
      if (!result.log.empty()) msg << " (previous train loss " << result.log.back().train_loss << ")";
      throw nn::NumericalError(msg.str());
    }
    EpochLog entry{epoch, sum / double(train.size()),
                   evaluate_loss(model, val, config.beta2, config.batch), lr};
    if (!std::isfinite(entry.train_loss) || !std::isfinite(entry.val_loss)) {
      throw nn::NumericalError("train_deeprom: non-finite loss in epoch " + std::to_string(epoch));
    }
    result.log.push_back(entry);
    if (entry.val_loss < best) {
      best = entry.val_loss;
      best_values = nn::snapshot(params);
      result.best_epoch = epoch;
    }
    adam.end_epoch();
  }
  if (config.keep_best) {
    nn::restore(params, best_values);
  } else {
    result.best_epoch = result.log.empty() ? 0 : result.log.size() - 1;
  }
  return result;
}

Rollout rollout(const DeepRom& model, const Vector& x0, const Matrix& actuations) {
  const auto& c = model.config();
  if (static_cast<std::size_t>(x0.size()) != c.nodes ||
      static_cast<std::size_t>(actuations.rows()) != c.du) {
    throw std::invalid_argument("rollout: x0 or actuation shape does not match the model");
  }
  const Eigen::Index steps = actuations.cols();
  Rollout out;
  out.latents.resize(static_cast<Eigen::Index>(c.rx), steps + 1);
  out.latents.col(0) = model.encode(x0);
  Eigen::Index done = 0;
  for (; done < steps; ++done) {
    Vector next;
    try {
      next = model.predict_next(out.latents.col(done), actuations.col(done));
    } catch (const nn::NumericalError&) {
      out.truncated = true;
      break;
    }
    if (!next.allFinite()) {
      out.truncated = true;
      break;
    }
    out.latents.col(done + 1) = next;
  }
  out.latents.conservativeResize(Eigen::NoChange, done + 1);
  out.states = model.decode(out.latents);
  return out;
}

void write_training_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw io::FormatError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,lr\n" << std::setprecision(17);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << '\n';
  }
}

void save_deeprom(DeepRom& model, const std::filesystem::path& dir, const nlohmann::json& meta) {
  nlohmann::json m = meta;
  m["kind"] = "deeprom";
  m["model"] = model.config().to_json();
  io::save_parameters(dir, model.parameters(), m);
}

DeepRom load_deeprom(const std::filesystem::path& dir) {
  const auto meta = io::load_meta(dir);
  if (meta.value("kind", "") != "deeprom") {
    throw io::FormatError(dir.string() + ": not a deeprom checkpoint");
  }
  DeepRom model(ModelConfig::from_json(meta.at("model")));
  io::load_parameters(dir, model.parameters());
  return model;
}

}  // namespace rom::deep
