// Feynman-Kac formulations {M_k, G_k} whose normalizing constant Z is a
// full/partial, bridged/unbridged pseudolikelihood of a splitting-scheme
// discretization, plus the policy twisting transform that leaves Z unchanged.
//
// A formulation is a chain of steps; step k proposes the state X_k through a
// Gaussian kernel M_k (step 0 ignores its input) and weighs it by a
// log-potential log G_k(X_k). Potentials may return -inf. log Z of the chain
// plus `log_offset` (change-of-variables corrections under Strang) is the
// pseudolikelihood.
#pragma once

#include <functional>
#include <vector>

#include "splitsmc/gaussian.hpp"
#include "splitsmc/model.hpp"
#include "splitsmc/scheme.hpp"

namespace splitsmc {

struct FkStep {
  GaussianKernel kernel;
  std::function<double(const Vec&)> log_potential;  // empty means log G == 0
  int state_dim = 0;

  double log_g(const Vec& x) const { return log_potential ? log_potential(x) : 0.0; }
};

struct FeynmanKacModel {
  std::vector<FkStep> steps;
  double log_offset = 0.0;

  int horizon() const { return static_cast<int>(steps.size()); }
};

// Gaussian initial distribution of the latent block given the first
// observation. For Strang formulations it is interpreted in z-coordinates;
// for shift-type latent flows (all shipped models) that is exact.
struct LatentInit {
  Vec mean;
  Mat cov;
};

// Exact log-pseudolikelihood of a fully observed path (rows of `path` are
// states at spacing `delta`): sum of log transition densities. The initial
// distribution is a point mass at the first row, so its term is dropped.
double full_unbridged_loglik(const SemiLinearModel& model, Scheme scheme,
                             const Mat& path, double delta);

// K-step bridged full-observation formulation: one segment per observation
// interval, kernels are the scheme's fine-step transitions, the only
// non-constant potential per segment is the density of the next observation
// given the last intermediate state. Requires K >= 2.
FeynmanKacModel bridged_full(const SemiLinearModel& model, Scheme scheme,
                             const Mat& path, double delta_obs, int K);

// Partial observation without noise: the latent chain u_0..u_{M-1} with
//   M_0 = mu2(u0 | v0),        G_0(u0) = f_1^1(v1 | v0, u0)
//   M_k = f_k^2(u_k | ...),    G_k(u_k) = f_{k+1}^1(v_{k+1} | v_k, u_k)
// (u_M is integrated out analytically). Strang requires a coordinatewise
// flow; observed data are transformed to z once and the Jacobian correction
// goes into log_offset.
FeynmanKacModel partial_unbridged(const SemiLinearModel& model, Scheme scheme,
                                  const Mat& observed_path,
                                  const std::vector<int>& observed,
                                  double delta_obs, const LatentInit& init);

// K-step bridged partial formulation (Prop.-3 structure): each observation
// interval is extended by K-1 full-state kernels; the final kernel of a
// segment proposes only the latent block conditionally on the new
// observation. K = 1 reduces exactly to partial_unbridged.
FeynmanKacModel partial_bridged(const SemiLinearModel& model, Scheme scheme,
                                const Mat& observed_path,
                                const std::vector<int>& observed,
                                double delta_obs, int K, const LatentInit& init);

struct TwistedModel {
  FeynmanKacModel model;  // twisted steps; same normalizing constant as base
  std::vector<QuadraticLogPolicy> policies;
};

// Twist every kernel by its policy and compensate the potentials:
//   log G_k^psi = log G_k + log M_{k+1}(psi_{k+1}) - phi_k,  psi_{M+1} = 1,
// with log M_0(psi_0) added to the step-0 potential. Zero policies leave
// steps bitwise unchanged. Throws PolicyDegeneracy with the offending step.
TwistedModel twist(const FeynmanKacModel& base,
                   const std::vector<QuadraticLogPolicy>& policies);

// Chained dimension check: every kernel input must match the previous state
// dimension. Throws InvalidInput on the first mismatch.
void check_dimension_chain(const FeynmanKacModel& model);

}  // namespace splitsmc
