#include "splitsmc/estimators.hpp"

#include <cmath>
#include <stdexcept>

namespace splitsmc {

namespace {

double nan_double() { return std::numeric_limits<double>::quiet_NaN(); }

// One measurement; exceptions and non-finite values both surface as NaN.
double measure(const Objective& f, const Vec& theta) {
  try {
    const double y = f(theta);
    return std::isfinite(y) ? y : nan_double();
  } catch (const std::exception&) {
    return nan_double();
  }
}

Vec rademacher(int p, RngStream& rng) {
  Vec d(p);
  for (int i = 0; i < p; ++i) d[i] = rng.uniform() < 0.5 ? -1.0 : 1.0;
  return d;
}

}  // namespace

SpsaResult spsa_maximize(const Objective& objective, Vec theta0,
                         const SpsaConfig& config, RngStream& rng) {
  const int p = static_cast<int>(theta0.size());
  if (p < 1) throw InvalidInput("spsa_maximize: empty parameter vector");
  if (config.iterations < 1) throw InvalidInput("spsa_maximize: need iterations >= 1");
  const double stability =
      config.stability >= 0.0 ? config.stability : 0.1 * config.iterations;

  SpsaResult res;
  res.trace.thetas.resize(config.iterations, p);
  res.trace.objectives.resize(config.iterations);

  Vec theta = std::move(theta0);
  Vec hbar = Vec::Zero(p);  // smoothed negative-curvature estimate
  for (int k = 0; k < config.iterations; ++k) {
    const double ak = config.a / std::pow(k + 1.0 + stability, config.alpha);
    const double ck = config.c / std::pow(k + 1.0, config.gamma_exp);

    Vec grad(p), delta(p);
    double y_center = nan_double();
    bool have = false;
    for (int attempt = 0; attempt < 2 && !have; ++attempt) {
      delta = rademacher(p, rng);
      const double y_plus = measure(objective, theta + ck * delta);
      const double y_minus = measure(objective, theta - ck * delta);
      if (std::isnan(y_plus) || std::isnan(y_minus)) continue;
      grad = (y_plus - y_minus) / (2.0 * ck) * delta.cwiseInverse();

      if (config.adaptive) {
        y_center = measure(objective, theta);
        const Vec delta2 = rademacher(p, rng);
        const double yt_plus = measure(objective, theta + ck * delta2 + ck * delta);
        const double yt_minus = measure(objective, theta + ck * delta2 - ck * delta);
        if (std::isnan(y_center) || std::isnan(yt_plus) || std::isnan(yt_minus))
          continue;
        const Vec grad2 = (yt_plus - yt_minus) / (2.0 * ck) * delta.cwiseInverse();
        // one-sided difference of gradients gives a diagonal Hessian estimate
        const Vec h_k = (grad2 - grad).cwiseQuotient(2.0 * ck * delta2);
        hbar = (static_cast<double>(k) * hbar - h_k) / (k + 1.0);
      } else {
        y_center = 0.5 * (y_plus + y_minus);  // no extra measurement in plain mode
      }
      have = true;
    }
    if (!have) {
      throw std::runtime_error(
          "spsa_maximize: non-finite measurements twice at iteration " +
          std::to_string(k + 1) + " (theta norm " + std::to_string(theta.norm()) + ")");
    }

    Vec step = grad;
    if (config.adaptive) {
      for (int i = 0; i < p; ++i) {
        const double curv = std::min(std::max(hbar[i], 1e-4), 1e4);
        step[i] = grad[i] / curv;
      }
    }
    theta += ak * step;
    res.trace.thetas.row(k) = theta;
    res.trace.objectives[k] = y_center;
  }
  res.theta = theta;
  return res;
}

Vec spsa_initialize_bridged(const Objective& unbridged_half_particles,
                            const Vec& theta0, const SpsaConfig& config,
                            int bridges, RngStream& rng) {
  if (bridges < 1) throw InvalidInput("spsa_initialize_bridged: bridges >= 1");
  if (bridges == 1) return theta0;
  return spsa_maximize(unbridged_half_particles, theta0, config, rng).theta;
}

PmmhResult pmmh(const std::function<double(const Vec&)>& log_prior,
                const Objective& log_likelihood_estimator, Vec theta0,
                const PmmhOptions& options, RngStream& rng) {
  const int p = static_cast<int>(theta0.size());
  if (options.proposal_std.size() != p)
    throw InvalidInput("pmmh: proposal stddev dimension mismatch");
  if (options.iterations < 0) throw InvalidInput("pmmh: negative iteration count");

  PmmhResult res;
  res.chain.resize(options.iterations, p);
  res.log_likelihoods.resize(options.iterations);
  res.accepted.assign(options.iterations, 0);
  if (options.iterations == 0) return res;

  Vec theta = std::move(theta0);
  double log_like = log_likelihood_estimator(theta);
  if (!std::isfinite(log_like))
    throw std::runtime_error("pmmh: likelihood estimate at theta0 is not finite");
  double log_pri = log_prior(theta);

  int n_accept = 0;
  for (int i = 0; i < options.iterations; ++i) {
    Vec prop = theta;
    for (int j = 0; j < p; ++j) prop[j] += options.proposal_std[j] * rng.normal();

    double prop_like = std::numeric_limits<double>::quiet_NaN();
    try {
      prop_like = log_likelihood_estimator(prop);
    } catch (const std::exception&) {
      prop_like = std::numeric_limits<double>::quiet_NaN();
    }
    bool accept = false;
    if (std::isfinite(prop_like)) {
      const double prop_pri = log_prior(prop);
      const double log_alpha = (prop_like + prop_pri) - (log_like + log_pri);
      accept = std::log(rng.uniform_pos()) < log_alpha;
      if (accept) {
        theta = prop;
        log_like = prop_like;
        log_pri = prop_pri;
      }
    } else {
      ++res.estimator_failures;  // effectively zero estimated likelihood
    }
    if (accept) ++n_accept;
    res.chain.row(i) = theta;
    res.log_likelihoods[i] = log_like;
    res.accepted[i] = accept ? 1 : 0;
  }
  res.acceptance_rate = static_cast<double>(n_accept) / options.iterations;
  return res;
}

}  // namespace splitsmc
