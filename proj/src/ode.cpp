#include "rom/ode.hpp"

namespace rom::nn {

Var rk4_step(const VectorField& f, Var x, Var u, double dt) {
  const Var k1 = f(x, u);
  const Var k2 = f(x + (0.5 * dt) * k1, u);
  const Var k3 = f(x + (0.5 * dt) * k2, u);
  const Var k4 = f(x + dt * k3, u);
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace rom::nn
