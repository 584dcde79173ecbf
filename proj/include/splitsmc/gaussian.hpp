// Multivariate Gaussian kernels, conditional decompositions, quadratic
// log-policy conjugacy, and the matrix functions used by splitting schemes.
//
// All density arithmetic is in the log domain. Types are immutable after
// construction and safe to share across threads.
#pragma once

#include <functional>
#include <memory>
#include <utility>

#include "splitsmc/rng.hpp"
#include "splitsmc/types.hpp"

namespace splitsmc {

// e^{A*dt} by scaling-and-squaring with Pade approximation.
Mat matrix_exponential(const Mat& a, double dt);

// C(dt) = \int_0^dt e^{A(dt-s)} Sigma Sigma^T e^{A^T(dt-s)} ds via the Van Loan
// block-exponential construction; the result is symmetrized. Positive
// semi-definite, and strictly PD for hypoelliptic pairs (A, Sigma) as well.
Mat integrated_covariance(const Mat& a, const Mat& sigma, double dt);

// N(mean, cov). Construction accepts any symmetric PSD covariance; density
// evaluation and sampling require strict positive definiteness and raise
// NumericalDegeneracy otherwise.
struct GaussianDensity {
  Vec mean;
  Mat cov;

  double log_density(const Vec& x) const;
  Vec sample(RngStream& rng) const;
  int dim() const { return static_cast<int>(mean.size()); }
};

// Conditional Gaussian kernel x' | x ~ N(mean_map(x), cov) with a fixed,
// state-independent covariance. The Cholesky factor and precision are
// prepared once; a singular covariance still supports sampling (degenerate
// directions get zero noise) but not density evaluation.
class GaussianKernel {
 public:
  GaussianKernel() = default;
  GaussianKernel(int in_dim, std::function<Vec(const Vec&)> mean_map, Mat cov);

  Vec mean(const Vec& x) const { return mean_map_(x); }
  const Mat& cov() const { return cov_; }
  const Mat& precision() const;
  double log_det_cov() const { return log_det_cov_; }
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }

  double log_density(const Vec& x_from, const Vec& x_to) const;
  Vec sample(const Vec& x_from, RngStream& rng) const;
  GaussianDensity at(const Vec& x_from) const { return {mean_map_(x_from), cov_}; }

 private:
  int in_dim_ = 0;
  int out_dim_ = 0;
  std::function<Vec(const Vec&)> mean_map_;
  Mat cov_;
  Mat chol_lower_;
  std::shared_ptr<const Mat> precision_;  // absent when cov is singular
  double log_det_cov_ = 0.0;
  double log_norm_ = 0.0;  // -d/2 log(2 pi) - 1/2 log det cov
  bool positive_definite_ = false;
};

// phi(x) = x^T P x + b^T x + c, the log of a policy psi = exp(phi).
// P is stored unconstrained; admissibility for a kernel with covariance C
// means C^-1 - 2P is strictly positive definite and is checked at twist time.
struct QuadraticLogPolicy {
  Mat P;
  Vec b;
  double c = 0.0;

  double operator()(const Vec& x) const { return x.dot(P * x) + b.dot(x) + c; }
  bool is_zero() const { return c == 0.0 && b.isZero(0.0) && P.isZero(0.0); }

  static QuadraticLogPolicy zero(int d) {
    return {Mat::Zero(d, d), Vec::Zero(d), 0.0};
  }
};

// Marginal/conditional factorization of a joint Gaussian over two blocks.
// gain = S21 S11^-1 and cond_cov = S22 - S21 S11^-1 S12 are exposed because
// kernel builders reuse them directly.
struct ConditionalSplit {
  GaussianDensity marginal;                               // first block
  std::function<GaussianDensity(const Vec&)> conditional;  // second | first
  Mat gain;
  Mat cond_cov;
};

// Split a PD joint Gaussian at `split_index` (1 <= split_index < d) into the
// marginal of the leading block and the conditional of the trailing block.
ConditionalSplit condition_gaussian(const GaussianDensity& joint, int split_index);

// Result of twisting a Gaussian kernel by exp(phi):
//   kernel:        x' | x ~ N(C'(C^-1 m(x) + b), C'), C' = (C^-1 - 2P)^-1
//   log_normalizer: x -> log \int exp(phi(y)) N(y; m(x), C) dy   (exact)
struct TwistedKernel {
  GaussianKernel kernel;
  std::function<double(const Vec&)> log_normalizer;
};

// Throws PolicyDegeneracy (carrying `step_index`) when the twisted precision
// C^-1 - 2P is not strictly positive definite. A zero policy returns the
// input kernel unchanged and a log-normalizer that is exactly 0.
TwistedKernel twist_kernel(const GaussianKernel& kernel,
                           const QuadraticLogPolicy& policy,
                           int step_index = -1);

}  // namespace splitsmc
