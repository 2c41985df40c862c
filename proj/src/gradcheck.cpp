#include "rom/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace rom::nn {

GradCheck check_parameter_gradients(const ParameterRefs& params,
                                    const std::function<Var(Tape&)>& loss, double step,
                                    double floor) {
  Tape tape;
  const Gradients grads = tape.backward(loss(tape));
  auto value = [&] {
    Tape t(false);
    return loss(t).value().item();
  };

  std::vector<double> analytic, numeric;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    const Tensor* g = grads.find(*p);
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const double x0 = p->value[k];
      const double h = step * (1.0 + std::abs(x0));
      p->value[k] = x0 + h;
      const double up = value();
      p->value[k] = x0 - h;
      const double down = value();
      p->value[k] = x0;
      numeric.push_back((up - down) / (2.0 * h));
      analytic.push_back(g ? (*g)[k] : 0.0);
    }
  }
  GradCheck out;
  out.coordinates = numeric.size();
  double fd_max = 0.0;
  for (double v : numeric) fd_max = std::max(fd_max, std::abs(v));
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double scale =
        std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor * fd_max, 1e-300});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return out;
}

}  // namespace rom::nn
