#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rom/autodiff.hpp"
#include "rom/random.hpp"

namespace rom::nn {

enum class Activation { kNone, kRelu };

/// Layer widths plus per-layer activation and bias flags.
struct MlpSpec {
  std::vector<std::size_t> widths;  // layers() + 1 entries
  std::vector<Activation> activations;
  std::vector<bool> bias;

  std::size_t layers() const { return widths.empty() ? 0 : widths.size() - 1; }
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  void validate() const;

  /// in -> hidden (ReLU) -> ... -> hidden (ReLU) -> out (linear), all biased.
  static MlpSpec relu_net(std::size_t in, std::size_t hidden, std::size_t out,
                          std::size_t hidden_layers = 2);
};

/// Uniform(-sqrt(1/fan_in), sqrt(1/fan_in)) fill.
void init_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, bool bias);

  Var forward(Tape& tape, Var x) const;
  void init(Rng& rng);
  void collect(ParameterRefs& out);

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  bool has_bias() const { return has_bias_; }

  Parameter weight;  // [out, in]
  Parameter bias;    // [out]

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  bool has_bias_ = false;
};

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::string name, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel, std::size_t stride, std::size_t padding, bool bias = true);

  Var forward(Tape& tape, Var x) const;
  void init(Rng& rng);
  void collect(ParameterRefs& out);
  std::size_t output_length(std::size_t length) const;

  Parameter weight;  // [out, in, kernel]
  Parameter bias;    // [out]

 private:
  std::size_t in_ = 0, out_ = 0, kernel_ = 0, stride_ = 1, padding_ = 0;
  bool has_bias_ = true;
};

class ConvTranspose1d {
 public:
  ConvTranspose1d() = default;
  ConvTranspose1d(std::string name, std::size_t in_channels, std::size_t out_channels,
                  std::size_t kernel, std::size_t stride, std::size_t padding,
                  std::size_t output_padding, bool bias = true);

  Var forward(Tape& tape, Var x) const;
  void init(Rng& rng);
  void collect(ParameterRefs& out);
  std::size_t output_length(std::size_t length) const;

  Parameter weight;  // [in, out, kernel]
  Parameter bias;    // [out]

 private:
  std::size_t in_ = 0, out_ = 0, kernel_ = 0, stride_ = 1, padding_ = 0, output_padding_ = 0;
  bool has_bias_ = true;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::string name, MlpSpec spec);

  /// x: [batch, input_width] -> [batch, output_width].
  Var forward(Tape& tape, Var x) const;
  /// Gradient-free evaluation.
  Tensor evaluate(const Tensor& x) const;
  void init(Rng& rng);
  void collect(ParameterRefs& out);

  const MlpSpec& spec() const { return spec_; }
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  MlpSpec spec_;
  std::vector<Linear> layers_;
};

/// Copies of parameter values, for best-model snapshots.
std::vector<Tensor> snapshot(const ParameterRefs& params);
void restore(const ParameterRefs& params, const std::vector<Tensor>& values);

}  // namespace rom::nn
