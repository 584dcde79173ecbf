#include "splitsmc/feynman_kac.hpp"

#include <cmath>
#include <utility>

namespace splitsmc {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

// Frozen N(., cov): factorized once, evaluated against many means.
struct FrozenGaussian {
  Mat chol_lower;
  double log_norm = 0.0;

  static FrozenGaussian make(const Mat& cov, const char* what) {
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success)
      throw NumericalDegeneracy(std::string(what) + ": covariance not positive definite");
    FrozenGaussian f;
    f.chol_lower = llt.matrixL();
    f.log_norm = -0.5 * (cov.rows() * kLogTwoPi +
                         2.0 * f.chol_lower.diagonal().array().log().sum());
    return f;
  }

  double logpdf(const Vec& x, const Vec& mean) const {
    const Vec w = chol_lower.triangularView<Eigen::Lower>().solve(x - mean);
    return log_norm - 0.5 * w.squaredNorm();
  }
};

// Scheme-specific one-step mean map and covariance of the (possibly
// z-coordinate) Gaussian transition at step `dt`.
struct LtPieces {
  std::function<Vec(const Vec&)> mean;
  Mat cov;
  bool z_space = false;
  double half = 0.0;  // dt/2, the change-of-variables half step under Strang
};

LtPieces lt_pieces(const SemiLinearModel& model, Scheme scheme, double dt) {
  if (!(dt > 0.0)) throw InvalidInput("feynman_kac: step must be > 0");
  LtPieces p;
  if (scheme == Scheme::EuM) {
    const Mat a = model.A;
    auto g = model.gamma;
    p.mean = [a, g, dt](const Vec& x) -> Vec { return x + dt * (a * x + g(x)); };
    p.cov = dt * model.sigma * model.sigma.transpose();
    return p;
  }
  const Mat ead = matrix_exponential(model.A, dt);
  auto flow = model.flow;
  p.mean = [ead, flow, dt](const Vec& x) -> Vec { return ead * flow(dt, x); };
  p.cov = integrated_covariance(model.A, model.sigma, dt);
  if (scheme == Scheme::Strang) {
    if (!model.has_inverse() || !model.flow_log_jacobian)
      throw UnsupportedScheme("feynman_kac: Strang needs an invertible flow");
    p.z_space = true;
    p.half = dt / 2.0;
  }
  return p;
}

std::vector<int> latent_indices(int dim, const std::vector<int>& observed) {
  std::vector<char> is_obs(dim, 0);
  for (int i : observed) {
    if (i < 0 || i >= dim) throw InvalidInput("observed index out of range");
    if (is_obs[i]) throw InvalidInput("duplicate observed index");
    is_obs[i] = 1;
  }
  std::vector<int> lat;
  for (int i = 0; i < dim; ++i)
    if (!is_obs[i]) lat.push_back(i);
  if (lat.empty() || observed.empty())
    throw InvalidInput("partial regime needs a strict nonempty observed subset");
  return lat;
}

Vec assemble(const Vec& v, const Vec& u) {
  Vec x(v.size() + u.size());
  x.head(v.size()) = v;
  x.tail(u.size()) = u;
  return x;
}

}  // namespace

double full_unbridged_loglik(const SemiLinearModel& model, Scheme scheme,
                             const Mat& path, double delta) {
  if (path.cols() != model.dim)
    throw InvalidInput("full_unbridged_loglik: path column mismatch");
  if (path.rows() < 1) throw InvalidInput("full_unbridged_loglik: empty path");
  if (path.rows() == 1) return 0.0;  // point-mass initial distribution
  const SchemeKernel kernel = make_kernel(model, scheme, delta);
  double total = 0.0;
  for (long k = 1; k < path.rows(); ++k)
    total += kernel.log_density(path.row(k - 1), path.row(k));
  return total;
}

FeynmanKacModel bridged_full(const SemiLinearModel& model, Scheme scheme,
                             const Mat& path, double delta_obs, int K) {
  if (K < 1) throw InvalidInput("bridged_full: K must be >= 1");
  if (K < 2) throw InvalidInput("bridged_full: K = 1 is the exact unbridged case");
  if (path.cols() != model.dim) throw InvalidInput("bridged_full: path column mismatch");
  const long m_obs = path.rows() - 1;
  if (m_obs < 1) throw InvalidInput("bridged_full: need at least two states");

  const int d = model.dim;
  const double delta = delta_obs / K;
  const LtPieces pieces = lt_pieces(model, scheme, delta);
  const FrozenGaussian step_density = FrozenGaussian::make(pieces.cov, "bridged_full");

  // Under Strang the whole bridge lives in z = Gamma_{delta/2}^{-1}(x)
  // coordinates; only the data points need transforming and correcting.
  FeynmanKacModel fk;
  Mat data = path;
  if (pieces.z_space) {
    for (long k = 0; k <= m_obs; ++k) {
      data.row(k) = model.flow_inverse(pieces.half, path.row(k));
      if (k >= 1) fk.log_offset -= model.flow_log_jacobian(pieces.half, data.row(k));
    }
  }

  fk.steps.reserve(static_cast<size_t>(m_obs) * (K - 1));
  for (long k = 1; k <= m_obs; ++k) {
    const Vec start = data.row(k - 1);
    const Vec end = data.row(k);
    for (int n = 1; n <= K - 1; ++n) {
      FkStep step;
      step.state_dim = d;
      if (n == 1) {
        const Vec mean0 = pieces.mean(start);
        const int in_dim = (k == 1) ? 0 : d;
        step.kernel = GaussianKernel(in_dim, [mean0](const Vec&) { return mean0; },
                                     pieces.cov);
      } else {
        step.kernel = GaussianKernel(d, pieces.mean, pieces.cov);
      }
      if (n == K - 1) {
        auto mean = pieces.mean;
        step.log_potential = [mean, end, step_density](const Vec& x) {
          return step_density.logpdf(end, mean(x));
        };
      }
      fk.steps.push_back(std::move(step));
    }
  }
  return fk;
}

namespace {

// Shared skeleton of the two partial-observation builders.
struct PartialPieces {
  SemiLinearModel reordered;
  LtPieces lt;
  Mat data;           // observed path, z-transformed under Strang
  double log_offset = 0.0;
  int d_obs = 0;
  int d_lat = 0;
  Mat s11;
  FrozenGaussian obs_density;   // N(., S11)
  Mat gain;                     // S21 S11^-1
  Mat cond_cov;                 // S22 - S21 S11^-1 S12
  Vec init_mean;
  Mat init_cov;
};

PartialPieces partial_pieces(const SemiLinearModel& model, Scheme scheme,
                             const Mat& observed_path,
                             const std::vector<int>& observed, double step,
                             const LatentInit& init) {
  PartialPieces p;
  const std::vector<int> lat = latent_indices(model.dim, observed);
  p.d_obs = static_cast<int>(observed.size());
  p.d_lat = static_cast<int>(lat.size());
  if (observed_path.cols() != p.d_obs)
    throw InvalidInput("partial builder: observed path column mismatch");
  if (observed_path.rows() < 2)
    throw InvalidInput("partial builder: need at least two observations");
  if (init.mean.size() != p.d_lat || init.cov.rows() != p.d_lat)
    throw InvalidInput("partial builder: latent init dimension mismatch");

  p.reordered = reorder_coordinates(model, observed);
  if (scheme == Scheme::Strang && !p.reordered.coordwise)
    throw UnsupportedScheme(
        "partial builder: Strang needs a coordinatewise flow so that no "
        "unobserved coordinate enters an observed one");
  p.lt = lt_pieces(p.reordered, scheme, step);

  const ConditionalSplit split =
      condition_gaussian(GaussianDensity{Vec::Zero(model.dim), p.lt.cov}, p.d_obs);
  p.s11 = split.marginal.cov;
  p.obs_density = FrozenGaussian::make(p.s11, "partial builder: S11 block");
  p.gain = split.gain;
  p.cond_cov = split.cond_cov;

  p.data = observed_path;
  p.init_mean = init.mean;
  p.init_cov = init.cov;
  if (p.lt.z_space) {
    const CoordwiseFlow& cw = *p.reordered.coordwise;
    for (long k = 0; k < observed_path.rows(); ++k) {
      double jac = 0.0;
      for (int i = 0; i < p.d_obs; ++i) {
        p.data(k, i) = cw.inverse(i, p.lt.half, observed_path(k, i));
        jac += cw.log_deriv(i, p.lt.half, p.data(k, i));
      }
      if (k >= 1) p.log_offset -= jac;
    }
    // shift-type latent flows map the Gaussian init exactly
    for (int j = 0; j < p.d_lat; ++j)
      p.init_mean[j] = cw.inverse(p.d_obs + j, p.lt.half, init.mean[j]);
  }
  return p;
}

FkStep latent_init_step(const PartialPieces& p) {
  FkStep step;
  step.state_dim = p.d_lat;
  const Vec m0 = p.init_mean;
  step.kernel = GaussianKernel(0, [m0](const Vec&) { return m0; }, p.init_cov);
  return step;
}

}  // namespace

FeynmanKacModel partial_unbridged(const SemiLinearModel& model, Scheme scheme,
                                  const Mat& observed_path,
                                  const std::vector<int>& observed,
                                  double delta_obs, const LatentInit& init) {
  PartialPieces p =
      partial_pieces(model, scheme, observed_path, observed, delta_obs, init);
  const long m_obs = p.data.rows() - 1;
  const int d_obs = p.d_obs;

  FeynmanKacModel fk;
  fk.log_offset = p.log_offset;
  fk.steps.reserve(m_obs);

  auto mean = p.lt.mean;
  // G_k(u_k) = f_{k+1}^1(v_{k+1} | v_k, u_k)
  auto make_potential = [&](long k) {
    const Vec v_here = p.data.row(k);
    const Vec v_next = p.data.row(k + 1);
    const FrozenGaussian obs = p.obs_density;
    return [mean, v_here, v_next, obs, d_obs](const Vec& u) {
      return obs.logpdf(v_next, mean(assemble(v_here, u)).head(d_obs));
    };
  };

  FkStep first = latent_init_step(p);
  first.log_potential = make_potential(0);
  fk.steps.push_back(std::move(first));

  for (long k = 1; k <= m_obs - 1; ++k) {
    FkStep step;
    step.state_dim = p.d_lat;
    const Vec v_prev = p.data.row(k - 1);
    const Vec v_here = p.data.row(k);
    const Mat gain = p.gain;
    step.kernel = GaussianKernel(
        p.d_lat,
        [mean, v_prev, v_here, gain, d_obs](const Vec& u) -> Vec {
          const Vec mu = mean(assemble(v_prev, u));
          return mu.tail(mu.size() - d_obs) + gain * (v_here - mu.head(d_obs));
        },
        p.cond_cov);
    if (k < m_obs) step.log_potential = make_potential(k);
    fk.steps.push_back(std::move(step));
  }
  return fk;
}

FeynmanKacModel partial_bridged(const SemiLinearModel& model, Scheme scheme,
                                const Mat& observed_path,
                                const std::vector<int>& observed,
                                double delta_obs, int K, const LatentInit& init) {
  if (K < 1) throw InvalidInput("partial_bridged: K must be >= 1");
  if (K == 1)
    return partial_unbridged(model, scheme, observed_path, observed, delta_obs, init);

  const double delta = delta_obs / K;
  PartialPieces p =
      partial_pieces(model, scheme, observed_path, observed, delta, init);
  const long m_obs = p.data.rows() - 1;
  const int d = model.dim;
  const int d_obs = p.d_obs;

  FeynmanKacModel fk;
  fk.log_offset = p.log_offset;
  fk.steps.push_back(latent_init_step(p));

  auto mean = p.lt.mean;
  for (long k = 1; k <= m_obs; ++k) {
    const Vec v_prev = p.data.row(k - 1);
    const Vec v_here = p.data.row(k);
    const FrozenGaussian obs = p.obs_density;

    // weight of the last intermediate state: f^1_{k;K}(v_k | x_{k;K-1})
    auto end_potential = [mean, v_here, obs, d_obs](const Vec& x) {
      return obs.logpdf(v_here, mean(x).head(d_obs));
    };

    for (int n = 1; n <= K - 1; ++n) {
      FkStep step;
      step.state_dim = d;
      if (n == 1) {
        // extend from the previous latent block, gluing on the known v_{k-1}
        step.kernel = GaussianKernel(
            p.d_lat,
            [mean, v_prev](const Vec& u) { return mean(assemble(v_prev, u)); },
            p.lt.cov);
      } else {
        step.kernel = GaussianKernel(d, mean, p.lt.cov);
      }
      if (n == K - 1) step.log_potential = end_potential;
      fk.steps.push_back(std::move(step));
    }

    if (k < m_obs) {
      // transit into the next interval: propose only the latent block from
      // f^2_{k;K}(u_k | v_k, x_{k;K-1})
      FkStep step;
      step.state_dim = p.d_lat;
      const Mat gain = p.gain;
      step.kernel = GaussianKernel(
          d,
          [mean, v_here, gain, d_obs](const Vec& x) -> Vec {
            const Vec mu = mean(x);
            return mu.tail(mu.size() - d_obs) + gain * (v_here - mu.head(d_obs));
          },
          p.cond_cov);
      fk.steps.push_back(std::move(step));
    }
  }
  return fk;
}

TwistedModel twist(const FeynmanKacModel& base,
                   const std::vector<QuadraticLogPolicy>& policies) {
  const int m = base.horizon();
  if (static_cast<int>(policies.size()) != m)
    throw InvalidInput("twist: one policy per step required");

  std::vector<TwistedKernel> twists(m);
  std::vector<bool> zero(m);
  for (int k = 0; k < m; ++k) {
    zero[k] = policies[k].is_zero();
    if (!zero[k]) twists[k] = twist_kernel(base.steps[k].kernel, policies[k], k);
  }

  TwistedModel out;
  out.policies = policies;
  out.model.log_offset = base.log_offset;
  out.model.steps.resize(m);
  for (int k = 0; k < m; ++k) {
    FkStep& step = out.model.steps[k];
    step.state_dim = base.steps[k].state_dim;
    step.kernel = zero[k] ? base.steps[k].kernel : twists[k].kernel;

    const bool next_zero = (k + 1 >= m) || zero[k + 1];
    if (zero[k] && next_zero) {
      step.log_potential = base.steps[k].log_potential;  // bitwise-identical path
      continue;
    }
    auto base_lp = base.steps[k].log_potential;
    std::function<double(const Vec&)> next_norm;
    if (!next_zero) next_norm = twists[k + 1].log_normalizer;
    QuadraticLogPolicy phi;
    const bool have_phi = !zero[k];
    if (have_phi) phi = policies[k];
    double constant = 0.0;
    if (k == 0 && !zero[0]) constant = twists[0].log_normalizer(Vec(0));
    step.log_potential = [base_lp, next_norm, phi, have_phi, constant](const Vec& x) {
      double v = constant;
      if (base_lp) v += base_lp(x);
      if (next_norm) v += next_norm(x);
      if (have_phi) v -= phi(x);
      return v;
    };
  }
  return out;
}

void check_dimension_chain(const FeynmanKacModel& model) {
  int prev = 0;
  for (int k = 0; k < model.horizon(); ++k) {
    const FkStep& s = model.steps[k];
    if (s.kernel.in_dim() != prev)
      throw InvalidInput("dimension chain: kernel input mismatch at step " +
                         std::to_string(k));
    if (s.kernel.out_dim() != s.state_dim)
      throw InvalidInput("dimension chain: kernel output mismatch at step " +
                         std::to_string(k));
    prev = s.state_dim;
  }
}

}  // namespace splitsmc
