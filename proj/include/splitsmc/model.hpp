// Concrete semi-linear SDE specifications dX = (A X + gamma(X)) dt + Sigma dW:
// the linear part A, diffusion Sigma, nonlinear drift gamma, the ODE flow
// Gamma_dt of dX = gamma(X) dt with inverse and Jacobian log-determinant, and
// the named positive parameter vector the inference drivers work with on the
// log scale.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "splitsmc/gaussian.hpp"
#include "splitsmc/types.hpp"

namespace splitsmc {

// Flow acting coordinate by coordinate: x_i -> value(i, dt, x_i). All shipped
// models have this structure; it is what makes the Strang scheme usable under
// partial observation (no latent coordinate enters an observed one).
struct CoordwiseFlow {
  std::function<double(int, double, double)> value;
  std::function<double(int, double, double)> inverse;    // throws DomainError
  std::function<double(int, double, double)> log_deriv;  // log |d value / dx|
};

struct SemiLinearModel {
  int dim = 0;
  Mat A;      // d x d
  Mat sigma;  // d x m
  std::function<Vec(const Vec&)> gamma;
  std::function<Vec(double, const Vec&)> flow;            // Gamma_dt
  std::function<Vec(double, const Vec&)> flow_inverse;    // empty if undefined
  std::function<double(double, const Vec&)> flow_log_jacobian;  // log|det DGamma_dt|
  std::optional<CoordwiseFlow> coordwise;

  std::vector<std::string> param_names;
  Vec theta;  // natural scale, strictly positive components

  bool has_inverse() const { return static_cast<bool>(flow_inverse); }
};

enum class Regime { Full, Partial };

struct ObservationScheme {
  Regime regime = Regime::Full;
  std::vector<int> observed;  // strict nonempty subset of {0..d-1} when partial
  double delta_obs = 0.0;
  int bridges = 1;  // K >= 1; the fine step is delta_obs / K

  double fine_step() const { return delta_obs / bridges; }
};

// dX = -X^3 dt + sigma dW, split with A = -1, gamma(x) = x - x^3.
// Flow inverse defined for |x| < (1 - e^{-2 dt})^{-1/2}.
SemiLinearModel cubic_model(double sigma);

// Stochastic FitzHugh-Nagumo, split per its semi-linear decomposition with
// A = [[0, -1/eps], [gam, -1]], gamma(x) = ((v - v^3)/eps, beta).
// sigma1 = 0 gives the hypoelliptic case. Requires kappa = 4 gam / eps - 1
// nonzero; the closed forms below switch to hyperbolic functions for kappa<0.
SemiLinearModel fhn_model(double eps, double gam, double beta, double sigma1,
                          double sigma2);

// Closed-form e^{A dt} and C(dt) for the FHN linear part with sigma1 = 0.
// These are the trigonometric/hyperbolic expressions in kappa; the generic
// matrix_exponential / integrated_covariance must agree with them.
Mat fhn_transition_matrix_closed_form(double eps, double gam, double dt);
Mat fhn_noise_covariance_closed_form(double eps, double gam, double sigma2,
                                     double dt);

// Linear SDE dX = A X dt + Sigma dW (gamma = 0, identity flow). Lie-Trotter
// and Strang coincide with the exact discrete-time transition, which makes
// this the Kalman-verifiable oracle model.
SemiLinearModel ou_model(const Mat& a, const Mat& sigma);

// Model with coordinates permuted so that `front` comes first. Used by the
// partial-observation builders to put observed coordinates in the leading
// block.
SemiLinearModel reorder_coordinates(const SemiLinearModel& model,
                                    const std::vector<int>& front);

}  // namespace splitsmc
