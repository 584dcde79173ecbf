// One-step transition kernels and path samplers for the Euler-Maruyama,
// Lie-Trotter and Strang discretizations.
//
//   EuM:  x' = x + dt (A x + gamma(x)) + xi,        xi ~ N(0, dt Sigma Sigma^T)
//   LT:   x' = e^{A dt} Gamma_dt(x) + xi,           xi ~ N(0, C(dt))
//   S:    x' = Gamma_{dt/2}(e^{A dt} Gamma_{dt/2}(x) + xi)
//
// The Strang density is evaluated through the half-step change of variables
// z = Gamma_{dt/2}^{-1}(x): the z-process is a Lie-Trotter process and
//   f(x'|x) = f_z(z'|z) |det DGamma_{dt/2}(z')|^{-1}.
#pragma once

#include <vector>

#include "splitsmc/gaussian.hpp"
#include "splitsmc/model.hpp"

namespace splitsmc {

enum class Scheme { EuM, LieTrotter, Strang };

const char* scheme_name(Scheme s);

struct SchemeKernel {
  Scheme scheme = Scheme::LieTrotter;
  double step = 0.0;
  // EuM/LT: kernel in original coordinates. Strang: kernel of the z-process.
  GaussianKernel gauss;
  // Strang only:
  std::function<Vec(const Vec&)> to_z;              // Gamma_{dt/2}^{-1}
  std::function<Vec(const Vec&)> from_z;            // Gamma_{dt/2}
  std::function<double(const Vec&)> z_log_jacobian;  // log|det DGamma_{dt/2}| at z

  double log_density(const Vec& x_from, const Vec& x_to) const;
  Vec sample(const Vec& x_from, RngStream& rng) const;
};

// Builds the one-step kernel; Strang requires the model's inverse flow.
SchemeKernel make_kernel(const SemiLinearModel& model, Scheme scheme, double step);

struct PathSample {
  Mat states;                 // (kept + 1) x d, first row is x0
  std::vector<double> times;  // multiples of step * stride, no accumulation
  bool exploded = false;
  long explosion_step = -1;   // fine-step index of the first explosion event
};

inline constexpr double kExplosionThreshold = 1e5;

// Forward simulation of n_steps fine steps, retaining x0 and every stride-th
// state. A non-finite state or |x|_inf > 1e5 is recorded as an explosion
// event and stops the simulation; it is not an error.
PathSample simulate_path(const SemiLinearModel& model, Scheme scheme, const Vec& x0,
                         double delta_sim, long n_steps, long stride,
                         RngStream& rng);

struct WeakOrderResult {
  double slope = 0.0;     // log-log regression slope of one-step mean error
  double residual = 0.0;  // RMS residual of the fit in log10 units
  bool exact = false;     // all errors at floating-point noise (slope undefined)
  std::vector<double> errors;
};

// One-step mean-error slope against a coupled fine-step Strang reference
// (fine step = delta / fine_factor, shared Brownian increments).
WeakOrderResult weak_order_probe(const SemiLinearModel& model, Scheme scheme,
                                 const Vec& x0, const std::vector<double>& deltas,
                                 int n_replicates, RngStream& rng,
                                 int fine_factor = 128);

}  // namespace splitsmc
