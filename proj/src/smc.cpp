#include "splitsmc/smc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace splitsmc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log sum exp with -inf tolerance; returns -inf when all entries are -inf
double log_sum_exp(const Vec& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (int i = 0; i < v.size(); ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

// normalized weights from log weights; returns ESS
double normalize(const Vec& lw, Vec& w) {
  const double lse = log_sum_exp(lw);
  w = (lw.array() - lse).exp();
  return 1.0 / w.squaredNorm();
}

// iid categorical draws by inverse CDF
void multinomial(const Vec& w, std::vector<int>& ancestors, RngStream& rng) {
  const int n = static_cast<int>(ancestors.size());
  Vec cum(w.size());
  double acc = 0.0;
  for (int i = 0; i < w.size(); ++i) {
    acc += w[i];
    cum[i] = acc;
  }
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform() * acc;
    int lo = 0, hi = static_cast<int>(w.size()) - 1;
    while (lo < hi) {
      const int mid = (lo + hi) / 2;
      if (cum[mid] < u) lo = mid + 1; else hi = mid;
    }
    ancestors[i] = lo;
  }
}

}  // namespace

FilterResult particle_filter(const FeynmanKacModel& model, int n_particles,
                             RngStream& rng, bool keep_particles) {
  if (n_particles < 2) throw InvalidInput("particle_filter: need N >= 2");
  const int m = model.horizon();
  if (m == 0) throw InvalidInput("particle_filter: empty model");

  FilterResult res;
  res.log_increments.resize(m);
  res.min_ess = static_cast<double>(n_particles);
  if (keep_particles) res.particles.resize(m);

  const int n = n_particles;
  Mat x(n, model.steps[0].state_dim);
  Vec lw(n), weights(n);
  std::vector<int> ancestors(n);

  // step 0
  {
    const FkStep& step = model.steps[0];
    const Vec dummy(0);
    for (int i = 0; i < n; ++i) x.row(i) = step.kernel.sample(dummy, rng);
    for (int i = 0; i < n; ++i) lw[i] = step.log_g(x.row(i));
    const double l0 = log_sum_exp(lw) - std::log(static_cast<double>(n));
    if (!std::isfinite(l0))
      throw ParticleCollapse("particle_filter: all weights vanished at step 0", 0);
    res.log_increments[0] = l0;
    if (keep_particles) res.particles[0] = x;
  }

  Vec log_what(n);  // log of the post-resampling weights W-hat
  for (int k = 1; k < m; ++k) {
    const FkStep& step = model.steps[k];
    const double ess = normalize(lw, weights);
    res.min_ess = std::min(res.min_ess, ess);
    if (ess <= n / 2.0) {
      multinomial(weights, ancestors, rng);
      log_what.setConstant(-std::log(static_cast<double>(n)));
      ++res.resample_count;
    } else {
      for (int i = 0; i < n; ++i) ancestors[i] = i;
      for (int i = 0; i < n; ++i)
        log_what[i] = weights[i] > 0.0 ? std::log(weights[i]) : kNegInf;
    }

    Mat x_new(n, step.state_dim);
    for (int i = 0; i < n; ++i)
      x_new.row(i) = step.kernel.sample(x.row(ancestors[i]), rng);
    for (int i = 0; i < n; ++i) {
      const double g = step.log_g(x_new.row(i));
      lw[i] = log_what[i] + (std::isnan(g) ? kNegInf : g);
    }
    const double lk = log_sum_exp(lw);
    if (!std::isfinite(lk))
      throw ParticleCollapse(
          "particle_filter: all weights vanished at step " + std::to_string(k), k);
    res.log_increments[k] = lk;
    x.swap(x_new);
    if (keep_particles) res.particles[k] = x;
  }

  res.log_z = res.log_increments.sum() + model.log_offset;
  return res;
}

double bpf(const FeynmanKacModel& model, int n_particles, RngStream& rng) {
  return particle_filter(model, n_particles, rng).log_z;
}

namespace {

int n_features(int d) { return 1 + d + d * (d + 1) / 2; }

Vec features(const Vec& x) {
  const int d = static_cast<int>(x.size());
  Vec f(n_features(d));
  f[0] = 1.0;
  f.segment(1, d) = x;
  int idx = 1 + d;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) f[idx++] = x[i] * x[j];
  return f;
}

QuadraticLogPolicy coefficients_to_policy(const Vec& beta, int d) {
  QuadraticLogPolicy p;
  p.c = beta[0];
  p.b = beta.segment(1, d);
  p.P = Mat::Zero(d, d);
  int idx = 1 + d;
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      const double q = beta[idx++];
      if (i == j) p.P(i, i) = q;
      else {
        p.P(i, j) = 0.5 * q;
        p.P(j, i) = 0.5 * q;
      }
    }
  return p;
}

}  // namespace

PolicyFit fit_policies(const std::vector<Mat>& particles,
                       const FeynmanKacModel& base) {
  const int m = base.horizon();
  if (static_cast<int>(particles.size()) != m)
    throw InvalidInput("fit_policies: one particle block per step required");

  PolicyFit fit;
  fit.policies.resize(m);
  fit.fallback.assign(m, 0);

  // log M_{k+1}(psi_{k+1}) of the step above, empty when that policy is flat
  std::function<double(const Vec&)> next_norm;

  for (int k = m - 1; k >= 0; --k) {
    const Mat& x = particles[k];
    const int d = base.steps[k].state_dim;
    const int p = n_features(d);
    const long n = x.rows();

    Mat xtx = Mat::Zero(p, p);
    Vec xty = Vec::Zero(p);
    long used = 0;
    for (long i = 0; i < n; ++i) {
      const Vec xi = x.row(i);
      double target = base.steps[k].log_g(xi);
      if (next_norm) target += next_norm(xi);
      if (!std::isfinite(target)) continue;
      const Vec f = features(xi);
      xtx.selfadjointView<Eigen::Lower>().rankUpdate(f);
      xty += f * target;
      ++used;
    }

    bool ok = used >= p;
    QuadraticLogPolicy policy = QuadraticLogPolicy::zero(d);
    if (ok) {
      xtx = Mat(xtx.selfadjointView<Eigen::Lower>());
      xtx.diagonal().array() += 1e-8;  // near-duplicate particles after resampling
      const Vec beta = Eigen::LDLT<Mat>(xtx).solve(xty);
      ok = beta.allFinite();
      if (ok) policy = coefficients_to_policy(beta, d);
    }

    // admissibility for this step's kernel decides whether the policy (and
    // its normalizer, used by step k-1) is usable
    if (ok && !policy.is_zero()) {
      try {
        TwistedKernel tw = twist_kernel(base.steps[k].kernel, policy, k);
        fit.policies[k] = std::move(policy);
        next_norm = std::move(tw.log_normalizer);
        continue;
      } catch (const PolicyDegeneracy&) {
        ok = false;
      }
    }
    fit.policies[k] = QuadraticLogPolicy::zero(d);
    if (!ok) {
      fit.fallback[k] = 1;
      ++fit.fallback_count;
    }
    next_norm = nullptr;
  }
  return fit;
}

CsmcReport csmc(const FeynmanKacModel& base, const CsmcOptions& options,
                RngStream& rng) {
  if (options.n_particles < 2) throw InvalidInput("csmc: need N >= 2");
  if (options.max_iters < 1) throw InvalidInput("csmc: need max_iters >= 1");

  CsmcReport report;
  std::vector<QuadraticLogPolicy> policies = options.warm_start;
  const int m = base.horizon();
  if (!policies.empty() && static_cast<int>(policies.size()) != m)
    throw InvalidInput("csmc: warm-start policy count mismatch");

  auto twist_with_fallback = [&](const std::vector<QuadraticLogPolicy>& psis) {
    std::vector<QuadraticLogPolicy> usable = psis;
    for (;;) {
      try {
        return twist(base, usable);
      } catch (const PolicyDegeneracy& e) {
        usable[e.step] = QuadraticLogPolicy::zero(base.steps[e.step].state_dim);
        ++report.fallback_count;
      }
    }
  };

  double prev_log_z = std::numeric_limits<double>::quiet_NaN();
  TwistedModel current;
  bool have_twisted = false;
  for (int iter = 1; iter <= options.max_iters; ++iter) {
    const FeynmanKacModel* target = &base;
    if (!policies.empty()) {
      current = twist_with_fallback(policies);
      target = &current.model;
      have_twisted = true;
    }
    FilterResult run;
    try {
      run = particle_filter(*target, options.n_particles, rng, true);
    } catch (const ParticleCollapse& e) {
      if (iter == 1)
        throw ParticleCollapse(
            std::string(e.what()) +
                " (first cSMC iteration; increase N or coarsen the initial policies)",
            e.step);
      throw;
    }
    report.iteration_log_z.push_back(run.log_z);
    report.iterations = iter;
    if (options.record_policies) report.policy_history.push_back(policies);

    if (iter >= 2 && std::abs(run.log_z - prev_log_z) < options.tol) break;
    prev_log_z = run.log_z;

    if (iter < options.max_iters) {
      PolicyFit fit = fit_policies(run.particles, base);
      report.fallback_count += fit.fallback_count;
      policies = std::move(fit.policies);
    }
  }

  // fresh run on the last twisted model keeps the reported estimate unbiased
  const FeynmanKacModel* final_target = have_twisted ? &current.model : &base;
  report.final_log_z = particle_filter(*final_target, options.n_particles, rng).log_z;
  report.final_policies =
      policies.empty() ? std::vector<QuadraticLogPolicy>() : policies;
  return report;
}

}  // namespace splitsmc
