#include "splitsmc/scheme.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace splitsmc {

const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::EuM: return "eum";
    case Scheme::LieTrotter: return "lt";
    case Scheme::Strang: return "strang";
  }
  return "?";
}

double SchemeKernel::log_density(const Vec& x_from, const Vec& x_to) const {
  if (scheme != Scheme::Strang) return gauss.log_density(x_from, x_to);
  // points outside the image of Gamma_{dt/2} are unreachable in one Strang
  // step: zero density rather than an error
  Vec z_to;
  try {
    z_to = to_z(x_to);
  } catch (const DomainError&) {
    return -std::numeric_limits<double>::infinity();
  }
  return gauss.log_density(to_z(x_from), z_to) - z_log_jacobian(z_to);
}

Vec SchemeKernel::sample(const Vec& x_from, RngStream& rng) const {
  if (scheme != Scheme::Strang) return gauss.sample(x_from, rng);
  return from_z(gauss.sample(to_z(x_from), rng));
}

SchemeKernel make_kernel(const SemiLinearModel& model, Scheme scheme, double step) {
  if (!(step > 0.0)) throw InvalidInput("make_kernel: step must be > 0");
  SchemeKernel k;
  k.scheme = scheme;
  k.step = step;
  const int d = model.dim;

  if (scheme == Scheme::EuM) {
    const Mat a = model.A;
    auto g = model.gamma;
    k.gauss = GaussianKernel(
        d, [a, g, step](const Vec& x) -> Vec { return x + step * (a * x + g(x)); },
        step * model.sigma * model.sigma.transpose());
    return k;
  }

  const Mat ead = matrix_exponential(model.A, step);
  const Mat cov = integrated_covariance(model.A, model.sigma, step);
  auto flow = model.flow;
  GaussianKernel lt_form(
      d, [ead, flow, step](const Vec& x) -> Vec { return ead * flow(step, x); }, cov);

  if (scheme == Scheme::LieTrotter) {
    k.gauss = std::move(lt_form);
    return k;
  }

  if (!model.has_inverse() || !model.flow_log_jacobian)
    throw UnsupportedScheme("make_kernel: Strang needs an invertible flow");
  const double half = step / 2.0;
  auto inv = model.flow_inverse;
  auto jac = model.flow_log_jacobian;
  k.gauss = std::move(lt_form);
  k.to_z = [inv, half](const Vec& x) { return inv(half, x); };
  k.from_z = [flow, half](const Vec& z) { return flow(half, z); };
  k.z_log_jacobian = [jac, half](const Vec& z) { return jac(half, z); };
  return k;
}

PathSample simulate_path(const SemiLinearModel& model, Scheme scheme, const Vec& x0,
                         double delta_sim, long n_steps, long stride,
                         RngStream& rng) {
  if (n_steps < 0 || stride < 1)
    throw InvalidInput("simulate_path: need n_steps >= 0, stride >= 1");
  if (n_steps % stride != 0)
    throw InvalidInput("simulate_path: n_steps must be a multiple of stride");
  const SchemeKernel kernel = make_kernel(model, scheme, delta_sim);

  PathSample out;
  const long kept = n_steps / stride;
  out.states.resize(kept + 1, model.dim);
  out.states.row(0) = x0;
  out.times.resize(kept + 1);
  const double coarse_dt = delta_sim * static_cast<double>(stride);
  for (long i = 0; i <= kept; ++i) out.times[i] = coarse_dt * static_cast<double>(i);

  Vec x = x0;
  long row = 1;
  for (long i = 1; i <= n_steps; ++i) {
    x = kernel.sample(x, rng);
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > kExplosionThreshold) {
      out.exploded = true;
      out.explosion_step = i;
      out.states.conservativeResize(row, Eigen::NoChange);
      out.times.resize(row);
      return out;
    }
    if (i % stride == 0) out.states.row(row++) = x;
  }
  return out;
}

WeakOrderResult weak_order_probe(const SemiLinearModel& model, Scheme scheme,
                                 const Vec& x0, const std::vector<double>& deltas,
                                 int n_replicates, RngStream& rng,
                                 int fine_factor) {
  if (deltas.size() < 4)
    throw InvalidInput("weak_order_probe: need at least 4 step sizes");
  const double lo = *std::min_element(deltas.begin(), deltas.end());
  const double hi = *std::max_element(deltas.begin(), deltas.end());
  if (!(lo > 0.0) || hi / lo < 10.0)
    throw InvalidInput("weak_order_probe: grid must span at least one decade");

  const int d = model.dim;
  const int m = static_cast<int>(model.sigma.cols());
  WeakOrderResult res;
  res.errors.reserve(deltas.size());

  for (double delta : deltas) {
    const double h = delta / fine_factor;
    const SchemeKernel coarse = make_kernel(model, scheme, delta);
    const Mat ead_fine = matrix_exponential(model.A, h);
    const Mat c_fine = integrated_covariance(model.A, model.sigma, h);
    Eigen::LLT<Mat> llt(c_fine);
    const Mat l_fine = llt.info() == Eigen::Success
                           ? Mat(llt.matrixL())
                           : Mat(Mat::Zero(d, d));
    // e^{A (delta - t_{i+1})} for composing fine noises into the coarse one
    std::vector<Mat> compose(fine_factor);
    compose[fine_factor - 1] = Mat::Identity(d, d);
    for (int j = fine_factor - 2; j >= 0; --j) compose[j] = compose[j + 1] * ead_fine;

    const double sqrt_h = std::sqrt(h);
    Vec mean_diff = Vec::Zero(d);
    for (int rep = 0; rep < n_replicates; ++rep) {
      Vec x_ref = x0;
      Vec xi_coarse = Vec::Zero(d);
      Vec dw_sum = Vec::Zero(m);
      for (int i = 0; i < fine_factor; ++i) {
        const Vec z = rng.normal_vec(d);
        const Vec xi = l_fine * z;
        // fine-step Strang reference sharing the same noise
        x_ref = model.flow(h / 2.0, Vec(ead_fine * model.flow(h / 2.0, x_ref) + xi));
        xi_coarse += compose[i] * xi;
        if (scheme == Scheme::EuM) dw_sum += sqrt_h * z.head(m);
      }
      Vec x_coarse;
      switch (scheme) {
        case Scheme::EuM:
          x_coarse = x0 + delta * (model.A * x0 + model.gamma(x0)) + model.sigma * dw_sum;
          break;
        case Scheme::LieTrotter:
          x_coarse = matrix_exponential(model.A, delta) * model.flow(delta, x0) + xi_coarse;
          break;
        case Scheme::Strang: {
          const Vec mid = matrix_exponential(model.A, delta) *
                              model.flow(delta / 2.0, x0) + xi_coarse;
          x_coarse = model.flow(delta / 2.0, mid);
          break;
        }
      }
      mean_diff += (x_coarse - x_ref);
    }
    mean_diff /= static_cast<double>(n_replicates);
    res.errors.push_back(mean_diff.norm());
  }

  const double scale = 1.0 + x0.cwiseAbs().maxCoeff();
  double max_err = 0.0;
  for (double e : res.errors) max_err = std::max(max_err, e);
  if (max_err < 1e-10 * scale) {
    res.exact = true;
    res.slope = std::numeric_limits<double>::quiet_NaN();
    return res;
  }

  // least squares on log10 err = slope * log10 delta + intercept
  const int n = static_cast<int>(deltas.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double x = std::log10(deltas[i]);
    const double y = std::log10(std::max(res.errors[i], 1e-300));
    sx += x; sy += y; sxx += x * x; sxy += x * y;
  }
  res.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double intercept = (sy - res.slope * sx) / n;
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = std::log10(std::max(res.errors[i], 1e-300)) -
                     (res.slope * std::log10(deltas[i]) + intercept);
    ss += r * r;
  }
  res.residual = std::sqrt(ss / n);
  return res;
}

}  // namespace splitsmc
