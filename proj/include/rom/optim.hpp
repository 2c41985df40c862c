#pragma once

#include <cstddef>
#include <vector>

#include "rom/autodiff.hpp"

namespace rom::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Multiplied into lr by end_epoch().
  double epoch_decay = 1.0;
};

/// Adam with bias correction. Parameters missing from a Gradients map are
/// treated as having zero gradient for that step.
class Adam {
 public:
  Adam(ParameterRefs params, AdamOptions options);

  void step(const Gradients& grads);
  void end_epoch() { lr_ *= options_.epoch_decay; }

  double lr() const { return lr_; }
  std::size_t steps() const { return t_; }
  const ParameterRefs& params() const { return params_; }

 private:
  ParameterRefs params_;
  AdamOptions options_;
  double lr_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// Plain gradient descent: theta -= lr * g.
void sgd_step(const ParameterRefs& params, const Gradients& grads, double lr);

}  // namespace rom::nn
