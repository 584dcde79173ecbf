#include "splitsmc/gaussian.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>

namespace splitsmc {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

// Lower Cholesky factor, or throw naming the offending block.
Mat chol_lower_or_throw(const Mat& cov, const char* what) {
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw NumericalDegeneracy(std::string(what) +
                              ": covariance is not positive definite");
  }
  return llt.matrixL();
}

double log_det_from_chol(const Mat& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

}  // namespace

Mat matrix_exponential(const Mat& a, double dt) {
  if (a.rows() != a.cols()) throw InvalidInput("matrix_exponential: A must be square");
  if (!(dt >= 0.0)) throw InvalidInput("matrix_exponential: dt must be >= 0");
  if (!a.allFinite()) throw InvalidInput("matrix_exponential: A has non-finite entries");
  if (dt == 0.0) return Mat::Identity(a.rows(), a.cols());
  return Mat(a * dt).exp();
}

Mat integrated_covariance(const Mat& a, const Mat& sigma, double dt) {
  const auto d = a.rows();
  if (a.cols() != d) throw InvalidInput("integrated_covariance: A must be square");
  if (sigma.rows() != d) throw InvalidInput("integrated_covariance: Sigma row mismatch");
  if (!(dt >= 0.0)) throw InvalidInput("integrated_covariance: dt must be >= 0");
  if (!a.allFinite() || !sigma.allFinite())
    throw InvalidInput("integrated_covariance: non-finite entries");
  if (dt == 0.0) return Mat::Zero(d, d);

  // Van Loan block matrix: exp([[A, SS^T],[0, -A^T]] dt) = [[F, G],[0, .]]
  // with C(dt) = G F^T.
  Mat block = Mat::Zero(2 * d, 2 * d);
  block.topLeftCorner(d, d) = a;
  block.topRightCorner(d, d) = sigma * sigma.transpose();
  block.bottomRightCorner(d, d) = -a.transpose();
  const Mat e = Mat(block * dt).exp();
  Mat c = e.topRightCorner(d, d) * e.topLeftCorner(d, d).transpose();
  return 0.5 * (c + c.transpose());
}

double GaussianDensity::log_density(const Vec& x) const {
  const Mat l = chol_lower_or_throw(cov, "GaussianDensity");
  const Vec w = l.triangularView<Eigen::Lower>().solve(x - mean);
  return -0.5 * (dim() * kLogTwoPi + log_det_from_chol(l) + w.squaredNorm());
}

Vec GaussianDensity::sample(RngStream& rng) const {
  const Mat l = chol_lower_or_throw(cov, "GaussianDensity");
  return mean + l * rng.normal_vec(dim());
}

GaussianKernel::GaussianKernel(int in_dim, std::function<Vec(const Vec&)> mean_map,
                               Mat cov)
    : in_dim_(in_dim),
      out_dim_(static_cast<int>(cov.rows())),
      mean_map_(std::move(mean_map)),
      cov_(std::move(cov)) {
  if (cov_.rows() != cov_.cols()) throw InvalidInput("GaussianKernel: covariance not square");
  Eigen::LLT<Mat> llt(cov_);
  if (llt.info() == Eigen::Success) {
    chol_lower_ = llt.matrixL();
    positive_definite_ = true;
    log_det_cov_ = log_det_from_chol(chol_lower_);
    Mat prec = llt.solve(Mat::Identity(out_dim_, out_dim_));
    precision_ = std::make_shared<const Mat>(0.5 * (prec + prec.transpose()));
    log_norm_ = -0.5 * (out_dim_ * kLogTwoPi + log_det_cov_);
  } else {
    // Singular covariance: keep a PSD factor for sampling, refuse densities.
    Eigen::LDLT<Mat> ldlt(cov_);
    Vec dvec = ldlt.vectorD();
    for (int i = 0; i < dvec.size(); ++i) dvec[i] = dvec[i] > 0.0 ? std::sqrt(dvec[i]) : 0.0;
    chol_lower_ = ldlt.transpositionsP().transpose() *
                  Mat(Mat(ldlt.matrixL()) * dvec.asDiagonal());
    positive_definite_ = false;
  }
}

const Mat& GaussianKernel::precision() const {
  if (!precision_)
    throw NumericalDegeneracy("GaussianKernel: precision of a singular covariance");
  return *precision_;
}

double GaussianKernel::log_density(const Vec& x_from, const Vec& x_to) const {
  if (!positive_definite_)
    throw NumericalDegeneracy("GaussianKernel: density of a singular covariance");
  const Vec w = chol_lower_.triangularView<Eigen::Lower>().solve(x_to - mean_map_(x_from));
  return log_norm_ - 0.5 * w.squaredNorm();
}

Vec GaussianKernel::sample(const Vec& x_from, RngStream& rng) const {
  return mean_map_(x_from) + chol_lower_ * rng.normal_vec(out_dim_);
}

ConditionalSplit condition_gaussian(const GaussianDensity& joint, int split_index) {
  const int d = joint.dim();
  if (split_index < 1 || split_index >= d)
    throw InvalidInput("condition_gaussian: split index out of range");
  const int d1 = split_index;
  const int d2 = d - d1;

  const Mat s11 = joint.cov.topLeftCorner(d1, d1);
  const Mat s12 = joint.cov.topRightCorner(d1, d2);
  const Mat s21 = joint.cov.bottomLeftCorner(d2, d1);
  const Mat s22 = joint.cov.bottomRightCorner(d2, d2);

  Eigen::LLT<Mat> llt(s11);
  if (llt.info() != Eigen::Success)
    throw NumericalDegeneracy("condition_gaussian: marginal block S11 is singular");

  ConditionalSplit split;
  split.gain = llt.solve(s21.transpose()).transpose();  // S21 S11^-1
  Mat cc = s22 - split.gain * s12;
  split.cond_cov = 0.5 * (cc + cc.transpose());
  split.marginal = GaussianDensity{joint.mean.head(d1), s11};

  const Vec mean1 = joint.mean.head(d1);
  const Vec mean2 = joint.mean.tail(d2);
  const Mat gain = split.gain;
  const Mat cond_cov = split.cond_cov;
  split.conditional = [mean1, mean2, gain, cond_cov](const Vec& v) {
    return GaussianDensity{mean2 + gain * (v - mean1), cond_cov};
  };
  return split;
}

TwistedKernel twist_kernel(const GaussianKernel& kernel,
                           const QuadraticLogPolicy& policy, int step_index) {
  if (policy.is_zero()) {
    return {kernel, [](const Vec&) { return 0.0; }};
  }
  const int d = kernel.out_dim();
  if (policy.P.rows() != d || policy.b.size() != d)
    throw InvalidInput("twist_kernel: policy dimension mismatch");

  const Mat& prec = kernel.precision();
  Mat lambda = prec - 2.0 * policy.P;  // twisted precision
  lambda = 0.5 * (lambda + lambda.transpose());
  Eigen::LLT<Mat> llt(lambda);
  if (llt.info() != Eigen::Success || lambda.diagonal().minCoeff() <= 0.0) {
    throw PolicyDegeneracy("twist_kernel: C^-1 - 2P is not positive definite",
                           step_index);
  }
  Mat twisted_cov = llt.solve(Mat::Identity(d, d));
  twisted_cov = 0.5 * (twisted_cov + twisted_cov.transpose());
  const double log_det_twisted = -2.0 * Mat(llt.matrixL()).diagonal().array().log().sum();

  const Mat shrink = twisted_cov * prec;       // C' C^-1
  const Vec shift = twisted_cov * policy.b;    // C' b
  auto base_mean = [k = kernel](const Vec& x) { return k.mean(x); };

  GaussianKernel twisted(
      kernel.in_dim(),
      [base_mean, shrink, shift](const Vec& x) -> Vec {
        return shrink * base_mean(x) + shift;
      },
      twisted_cov);

  // log \int exp(phi(y)) N(y; m, C) dy
  //   = c + 1/2 m'^T Lambda m' - 1/2 m^T C^-1 m + 1/2 (log det C' - log det C)
  // with m' = C'(C^-1 m + b).
  const double half_log_det_ratio = 0.5 * (log_det_twisted - kernel.log_det_cov());
  const double c0 = policy.c;
  const Mat prec_copy = prec;
  auto log_normalizer = [base_mean, shrink, shift, lambda, prec_copy, c0,
                         half_log_det_ratio](const Vec& x) {
    const Vec m = base_mean(x);
    const Vec mprime = shrink * m + shift;
    return c0 + 0.5 * mprime.dot(lambda * mprime) - 0.5 * m.dot(prec_copy * m) +
           half_log_det_ratio;
  };
  return {std::move(twisted), std::move(log_normalizer)};
}

}  // namespace splitsmc
