// Particle filtering for (twisted) Feynman-Kac models, backward linear
// regression of quadratic log-policies, and the iterated cSMC controller
// with an unbiased final run.
#pragma once

#include <cstdint>
#include <vector>

#include "splitsmc/feynman_kac.hpp"
#include "splitsmc/rng.hpp"

namespace splitsmc {

struct FilterResult {
  double log_z = 0.0;          // sum of log increments + model log_offset
  Vec log_increments;          // log l_k per step
  double min_ess = 0.0;
  int resample_count = 0;
  std::vector<Mat> particles;  // per step, N x d_k rows = particles (if kept)
};

// Simple particle filter with adaptive multinomial resampling at ESS <= N/2.
// Unbiased estimate of Z. Throws ParticleCollapse when every weight is -inf
// at some step.
FilterResult particle_filter(const FeynmanKacModel& model, int n_particles,
                             RngStream& rng, bool keep_particles = false);

// Bootstrap particle filter: the unit-policy special case.
double bpf(const FeynmanKacModel& model, int n_particles, RngStream& rng);

struct PolicyFit {
  std::vector<QuadraticLogPolicy> policies;
  std::vector<std::uint8_t> fallback;  // 1 where a flat policy was substituted
  int fallback_count = 0;
};

// Backward recursion k = M..0 fitting phi_k by least squares over monomial
// features (1, x_i, x_i x_j) to targets
//   xi_k^n = log G_k(X_k^n) + [k < M] log M_{k+1}(psi_{k+1})(X_k^n),
// using the base formulation's potentials and kernels. A fit whose twisted
// precision is not positive definite (or a degenerate regression) falls back
// to the flat policy at that step and is flagged.
PolicyFit fit_policies(const std::vector<Mat>& particles,
                       const FeynmanKacModel& base);

struct CsmcOptions {
  int n_particles = 0;
  int max_iters = 10;
  double tol = 1e-2;  // on |delta log Z| between successive iterations
  bool record_policies = false;
  std::vector<QuadraticLogPolicy> warm_start;  // empty = start from unit policies
};

struct CsmcReport {
  std::vector<double> iteration_log_z;
  int iterations = 0;
  int fallback_count = 0;
  double final_log_z = 0.0;  // fresh filter run after termination
  std::vector<QuadraticLogPolicy> final_policies;
  std::vector<std::vector<QuadraticLogPolicy>> policy_history;
};

// Iterate particle_filter -> fit_policies -> twist until |delta log Z| < tol
// or max_iters, then run one fresh filter on the last twisted model for the
// reported estimate.
CsmcReport csmc(const FeynmanKacModel& base, const CsmcOptions& options,
                RngStream& rng);

}  // namespace splitsmc
