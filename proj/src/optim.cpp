#include "rom/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace rom::nn {

Adam::Adam(ParameterRefs params, AdamOptions options)
    : params_(std::move(params)), options_(options), lr_(options.lr) {
  if (!(options.lr > 0.0) || !(options.eps > 0.0) || options.beta1 < 0.0 ||
      options.beta1 >= 1.0 || options.beta2 < 0.0 || options.beta2 >= 1.0 ||
      !(options.epoch_decay > 0.0)) {
    throw std::invalid_argument("Adam: invalid options");
  }
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step(const Gradients& grads) {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter* p = params_[i];
    if (!p->trainable) continue;
    const Tensor* g = grads.find(*p);
    double* m = m_[i].data();
    double* v = v_[i].data();
    double* w = p->value.data();
    const std::size_t n = p->value.size();
    for (std::size_t k = 0; k < n; ++k) {
      const double gk = g ? (*g)[k] : 0.0;
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + options_.eps);
    }
  }
}

void sgd_step(const ParameterRefs& params, const Gradients& grads, double lr) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    const Tensor* g = grads.find(*p);
    if (!g) continue;
    for (std::size_t k = 0; k < p->value.size(); ++k) p->value[k] -= lr * (*g)[k];
  }
}

}  // namespace rom::nn
