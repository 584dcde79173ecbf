// Parameter-level inference drivers: adaptive simultaneous-perturbation
// stochastic approximation (ascent on a noisy log-likelihood) and particle
// marginal Metropolis-Hastings. Both operate on log-scale parameter vectors,
// so every visited point maps to strictly positive natural parameters.
#pragma once

#include <functional>
#include <vector>

#include "splitsmc/rng.hpp"
#include "splitsmc/types.hpp"

namespace splitsmc {

// A noisy objective measurement; may throw (e.g. ParticleCollapse) or return
// a non-finite value, both of which SPSA treats as a failed measurement.
using Objective = std::function<double(const Vec&)>;

struct SpsaConfig {
  double a = 0.2;           // gain numerator: a_k = a / (k + 1 + stability)^alpha
  double alpha = 0.602;
  double c = 0.1;           // perturbation: c_k = c / (k + 1)^gamma_exp
  double gamma_exp = 0.101;
  double stability = -1.0;  // A; negative means 10% of the iteration budget
  int iterations = 200;     // tau_end
  bool adaptive = true;     // diagonal second-order scaling (5 measurements/iter)
};

struct SpsaTrace {
  Mat thetas;      // iterations x p, iterate after each update
  Vec objectives;  // measured objective per iteration (midpoint in plain mode)
};

struct SpsaResult {
  Vec theta;
  SpsaTrace trace;
};

// Maximizes the objective: theta_k = theta_{k-1} + a_k s_k g_k with
// g_k = (y+ - y-) / (2 c_k Delta_k) elementwise, Delta_k ~ U{-1,+1}^p.
// Adaptive mode estimates a diagonal second-order scaling from one extra
// perturbation pair, clipping curvature eigenvalues to [1e-4, 1e4].
// A non-finite measurement is retried once with a fresh perturbation, then
// aborts with diagnostics.
SpsaResult spsa_maximize(const Objective& objective, Vec theta0,
                         const SpsaConfig& config, RngStream& rng);

// Cost overhead of initializing a K-step bridged run from an unbridged run
// with half the particles: (1 + 1/(2K)).
inline double bridged_init_overhead_factor(int bridges) {
  return 1.0 + 1.0 / (2.0 * bridges);
}

// Runs the unbridged objective (built by the caller with N/2 particles)
// through SPSA and returns its estimate as the bridged run's starting point.
// With bridges == 1 this is an identity pass-through.
Vec spsa_initialize_bridged(const Objective& unbridged_half_particles,
                            const Vec& theta0, const SpsaConfig& config,
                            int bridges, RngStream& rng);

struct PmmhOptions {
  Vec proposal_std;  // per-coordinate stddev of the Gaussian random walk
  int iterations = 0;
};

struct PmmhResult {
  Mat chain;               // iterations x p (log-scale states after each step)
  Vec log_likelihoods;     // stored estimate for the current state
  std::vector<std::uint8_t> accepted;
  double acceptance_rate = 0.0;
  int estimator_failures = 0;  // proposals treated as rejections
};

// Pseudo-marginal Metropolis-Hastings with a symmetric Gaussian random walk.
// The stored likelihood estimate of the current state is never re-estimated;
// an estimator failure at a proposal counts as a rejection.
PmmhResult pmmh(const std::function<double(const Vec&)>& log_prior,
                const Objective& log_likelihood_estimator, Vec theta0,
                const PmmhOptions& options, RngStream& rng);

}  // namespace splitsmc
