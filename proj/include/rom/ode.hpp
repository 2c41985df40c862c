#pragma once

#include <functional>

#include "rom/autodiff.hpp"

namespace rom::nn {

/// f(x, u) -> dx/dt on a tape; x is [batch, n], u is [batch, m].
using VectorField = std::function<Var(Var x, Var u)>;

/// One classical Runge-Kutta step with u held constant over the step.
Var rk4_step(const VectorField& f, Var x, Var u, double dt);

}  // namespace rom::nn
