#include "rom/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace rom::nn {

void MlpSpec::validate() const {
  if (widths.size() < 2) throw std::invalid_argument("MlpSpec: needs at least one layer");
  if (activations.size() != layers() || bias.size() != layers()) {
    throw std::invalid_argument("MlpSpec: per-layer flags do not match layer count");
  }
  for (std::size_t w : widths) {
    if (w == 0) throw std::invalid_argument("MlpSpec: zero width");
  }
}

MlpSpec MlpSpec::relu_net(std::size_t in, std::size_t hidden, std::size_t out,
                          std::size_t hidden_layers) {
  MlpSpec s;
  s.widths.push_back(in);
  for (std::size_t i = 0; i < hidden_layers; ++i) {
    s.widths.push_back(hidden);
    s.activations.push_back(Activation::kRelu);
    s.bias.push_back(true);
  }
  s.widths.push_back(out);
  s.activations.push_back(Activation::kNone);
  s.bias.push_back(true);
  return s;
}

void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
}

// --- Linear ----------------------------------------------------------------

Linear::Linear(std::string name, std::size_t in, std::size_t out, bool bias)
    : in_(in), out_(out), has_bias_(bias) {
  weight = {name + ".weight", Tensor({out, in}), true};
  if (bias) this->bias = {name + ".bias", Tensor({out}), true};
}

Var Linear::forward(Tape& tape, Var x) const {
  if (x.shape().size() != 2 || x.shape()[1] != in_) {
    throw std::invalid_argument(weight.name + ": expected input [batch, " +
                                std::to_string(in_) + "], got " + shape_string(x.shape()));
  }
  if (has_bias_) return linear(x, tape.param(weight), tape.param(bias));
  return linear(x, tape.param(weight));
}

void Linear::init(Rng& rng) {
  init_uniform(weight.value, in_, rng);
  if (has_bias_) init_uniform(bias.value, in_, rng);
}

void Linear::collect(ParameterRefs& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

// --- Conv1d ----------------------------------------------------------------

Conv1d::Conv1d(std::string name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, std::size_t stride, std::size_t padding, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride),
      padding_(padding), has_bias_(bias) {
  weight = {name + ".weight", Tensor({out_channels, in_channels, kernel}), true};
  if (bias) this->bias = {name + ".bias", Tensor({out_channels}), true};
}

Var Conv1d::forward(Tape& tape, Var x) const {
  if (has_bias_) return conv1d(x, tape.param(weight), tape.param(bias), stride_, padding_);
  return conv1d(x, tape.param(weight), std::nullopt, stride_, padding_);
}

void Conv1d::init(Rng& rng) {
  init_uniform(weight.value, in_ * kernel_, rng);
  if (has_bias_) init_uniform(bias.value, in_ * kernel_, rng);
}

void Conv1d::collect(ParameterRefs& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

std::size_t Conv1d::output_length(std::size_t length) const {
  return conv1d_output_length(length, kernel_, stride_, padding_);
}

// --- ConvTranspose1d -------------------------------------------------------

ConvTranspose1d::ConvTranspose1d(std::string name, std::size_t in_channels,
                                 std::size_t out_channels, std::size_t kernel,
                                 std::size_t stride, std::size_t padding,
                                 std::size_t output_padding, bool bias)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride),
      padding_(padding), output_padding_(output_padding), has_bias_(bias) {
  weight = {name + ".weight", Tensor({in_channels, out_channels, kernel}), true};
  if (bias) this->bias = {name + ".bias", Tensor({out_channels}), true};
}

Var ConvTranspose1d::forward(Tape& tape, Var x) const {
  if (has_bias_) {
    return conv1d_transpose(x, tape.param(weight), tape.param(bias), stride_, padding_,
                            output_padding_);
  }
  return conv1d_transpose(x, tape.param(weight), std::nullopt, stride_, padding_,
                          output_padding_);
}

void ConvTranspose1d::init(Rng& rng) {
  init_uniform(weight.value, in_ * kernel_, rng);
  if (has_bias_) init_uniform(bias.value, in_ * kernel_, rng);
}

void ConvTranspose1d::collect(ParameterRefs& out) {
  out.push_back(&weight);
  if (has_bias_) out.push_back(&bias);
}

std::size_t ConvTranspose1d::output_length(std::size_t length) const {
  return conv1d_transpose_output_length(length, kernel_, stride_, padding_, output_padding_);
}

// --- Mlp -------------------------------------------------------------------

Mlp::Mlp(std::string name, MlpSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t i = 0; i < spec_.layers(); ++i) {
    layers_.emplace_back(name + ".l" + std::to_string(i), spec_.widths[i],
                         spec_.widths[i + 1], spec_.bias[i]);
  }
}

Var Mlp::forward(Tape& tape, Var x) const {
  if (x.shape().size() != 2 || x.shape()[1] != spec_.input_width()) {
    throw std::invalid_argument("Mlp: expected input width " +
                                std::to_string(spec_.input_width()) + ", got " +
                                shape_string(x.shape()));
  }
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(tape, h);
    if (spec_.activations[i] == Activation::kRelu) h = relu(h);
  }
  return h;
}

Tensor Mlp::evaluate(const Tensor& x) const {
  Tape tape(/*record_gradients=*/false);
  return forward(tape, tape.constant(x)).value();
}

void Mlp::init(Rng& rng) {
  for (Linear& l : layers_) l.init(rng);
}

void Mlp::collect(ParameterRefs& out) {
  for (Linear& l : layers_) l.collect(out);
}

std::vector<Tensor> snapshot(const ParameterRefs& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

void restore(const ParameterRefs& params, const std::vector<Tensor>& values) {
  if (params.size() != values.size()) throw std::invalid_argument("restore: count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.shape() != values[i].shape()) {
      throw std::invalid_argument("restore: shape mismatch for " + params[i]->name);
    }
    params[i]->value = values[i];
  }
}

}  // namespace rom::nn
