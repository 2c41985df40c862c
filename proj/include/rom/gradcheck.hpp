#pragma once

#include <functional>

#include "rom/autodiff.hpp"

namespace rom::nn {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares tape gradients of a scalar loss with central differences over
/// every trainable coordinate in `params`. Per coordinate the error is
/// |g - fd| / max(|g|, |fd|, floor * max|fd|), so entries far below the
/// largest gradient are judged on an absolute scale.
GradCheck check_parameter_gradients(const ParameterRefs& params,
                                    const std::function<Var(Tape&)>& loss,
                                    double step = 1e-6, double floor = 1e-3);

}  // namespace rom::nn
