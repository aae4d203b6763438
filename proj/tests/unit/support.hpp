#pragma once

// Small hand-built models shared by the unit tests.

#include <msmv/model.hpp>

namespace msmv::testing {

/// 1-D system with every coefficient zero; sigma1 is the only non-zero
/// entry when `sigma` is set, so the validator sees an elliptic model.
inline ModelSpec zero_model(double x0 = 0.7, double sigma = 0.0) {
  ModelSpec s;
  s.name = "zero";
  s.x0 = {x0};
  s.z0 = {0.0};
  s.b1 = [](ConstSpan, const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = 0.0; };
  s.sigma1 = [sigma](ConstSpan, const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = sigma; };
  s.sigma1_depends_on_z = false;
  s.b2 = [](const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = 0.0; };
  s.sigma2 = [](const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = 0.0; };
  s.h = [](ConstSpan, const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = 0.0; };
  return s;
}

/// Fast OU dZ = -theta Z dt + s dW; slow part inert.
inline ModelSpec ou_model(double theta, double s_noise) {
  ModelSpec s = zero_model(0.0, 1.0);
  s.name = "ou";
  s.b2 = [theta](const ParticleCloud&, ConstSpan z, OutSpan out) { out[0] = -theta * z[0]; };
  s.sigma2 = [s_noise](const ParticleCloud&, ConstSpan, OutSpan out) { out[0] = s_noise; };
  return s;
}

inline LinearParams canonical_linear() {
  LinearParams p;
  p.a = 1.0;
  p.c = 0.5;
  p.g = 1.0;
  p.sigma_x = 1.0;
  p.beta = 4.0;
  p.kappa = 2.0;
  p.sigma_z = 1.0;
  p.gamma1 = 1.0;
  return p;
}

}  // namespace msmv::testing
