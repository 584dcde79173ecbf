#include "splitsmc/model.hpp"

#include <algorithm>
#include <cmath>

namespace splitsmc {

namespace {

// Flow of dx = r (x - x^3) dt through time dt:
//   x / sqrt(e^{-2 r dt} + x^2 (1 - e^{-2 r dt})).
double pitchfork_flow(double rate, double dt, double x) {
  const double e = std::exp(-2.0 * rate * dt);
  return x / std::sqrt(e + x * x * (1.0 - e));
}

double pitchfork_flow_inverse(double rate, double dt, double x) {
  const double e = std::exp(-2.0 * rate * dt);
  const double denom = 1.0 - x * x * (1.0 - e);
  if (!(denom > 0.0))
    throw DomainError("pitchfork flow inverse: |x| >= (1 - e^{-2 r dt})^{-1/2}");
  return x * std::sqrt(e / denom);
}

double pitchfork_flow_log_deriv(double rate, double dt, double x) {
  // d/dx x D^{-1/2} = e^{-2 r dt} D^{-3/2},  D = e^{-2 r dt} + x^2 (1 - e^{-2 r dt})
  const double e = std::exp(-2.0 * rate * dt);
  const double d = e + x * x * (1.0 - e);
  return std::log(e) - 1.5 * std::log(d);
}

// Assemble the generic flow functions from a coordinatewise definition.
void attach_coordwise(SemiLinearModel& m) {
  const CoordwiseFlow cw = *m.coordwise;
  const int d = m.dim;
  m.flow = [cw, d](double dt, const Vec& x) {
    Vec out(d);
    for (int i = 0; i < d; ++i) out[i] = cw.value(i, dt, x[i]);
    return out;
  };
  m.flow_inverse = [cw, d](double dt, const Vec& x) {
    Vec out(d);
    for (int i = 0; i < d; ++i) out[i] = cw.inverse(i, dt, x[i]);
    return out;
  };
  m.flow_log_jacobian = [cw, d](double dt, const Vec& x) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += cw.log_deriv(i, dt, x[i]);
    return s;
  };
}

// cos(sqrt(k) t) continued through k < 0.
double cos_like(double kappa, double t) {
  return kappa > 0.0 ? std::cos(std::sqrt(kappa) * t)
                     : std::cosh(std::sqrt(-kappa) * t);
}

// sin(sqrt(k) t)/sqrt(k) continued through k < 0.
double sinc_like(double kappa, double t) {
  return kappa > 0.0 ? std::sin(std::sqrt(kappa) * t) / std::sqrt(kappa)
                     : std::sinh(std::sqrt(-kappa) * t) / std::sqrt(-kappa);
}

}  // namespace

SemiLinearModel cubic_model(double sigma) {
  if (!(sigma > 0.0)) throw InvalidInput("cubic_model: sigma must be > 0");
  SemiLinearModel m;
  m.dim = 1;
  m.A = Mat::Constant(1, 1, -1.0);
  m.sigma = Mat::Constant(1, 1, sigma);
  m.gamma = [](const Vec& x) { return Vec::Constant(1, x[0] - x[0] * x[0] * x[0]); };
  m.coordwise = CoordwiseFlow{
      [](int, double dt, double x) { return pitchfork_flow(1.0, dt, x); },
      [](int, double dt, double x) { return pitchfork_flow_inverse(1.0, dt, x); },
      [](int, double dt, double x) { return pitchfork_flow_log_deriv(1.0, dt, x); }};
  attach_coordwise(m);
  m.param_names = {"sigma"};
  m.theta = Vec::Constant(1, sigma);
  return m;
}

SemiLinearModel fhn_model(double eps, double gam, double beta, double sigma1,
                          double sigma2) {
  if (!(eps > 0.0) || !(gam > 0.0) || !(sigma2 > 0.0) || sigma1 < 0.0)
    throw InvalidInput("fhn_model: require eps > 0, gam > 0, sigma2 > 0, sigma1 >= 0");
  if (4.0 * gam / eps - 1.0 == 0.0)
    throw InvalidInput("fhn_model: kappa = 4 gam / eps - 1 is exactly zero");

  SemiLinearModel m;
  m.dim = 2;
  m.A = (Mat(2, 2) << 0.0, -1.0 / eps, gam, -1.0).finished();
  m.sigma = (Mat(2, 2) << sigma1, 0.0, 0.0, sigma2).finished();
  m.gamma = [eps, beta](const Vec& x) {
    return Vec{{(x[0] - x[0] * x[0] * x[0]) / eps, beta}};
  };
  const double rate = 1.0 / eps;
  m.coordwise = CoordwiseFlow{
      [rate, beta](int i, double dt, double x) {
        return i == 0 ? pitchfork_flow(rate, dt, x) : x + beta * dt;
      },
      [rate, beta](int i, double dt, double x) {
        return i == 0 ? pitchfork_flow_inverse(rate, dt, x) : x - beta * dt;
      },
      [rate](int i, double dt, double x) {
        return i == 0 ? pitchfork_flow_log_deriv(rate, dt, x) : 0.0;
      }};
  attach_coordwise(m);
  m.param_names = {"eps", "gam", "beta", "sigma2"};
  m.theta = Vec{{eps, gam, beta, sigma2}};
  return m;
}

Mat fhn_transition_matrix_closed_form(double eps, double gam, double dt) {
  const double kappa = 4.0 * gam / eps - 1.0;
  if (kappa == 0.0)
    throw InvalidInput("fhn closed form: kappa is exactly zero");
  const double c = cos_like(kappa, dt / 2.0);
  const double s = sinc_like(kappa, dt / 2.0);
  Mat e(2, 2);
  e << c + s, -(2.0 / eps) * s, 2.0 * gam * s, c - s;
  return std::exp(-dt / 2.0) * e;
}

Mat fhn_noise_covariance_closed_form(double eps, double gam, double sigma2,
                                     double dt) {
  const double kappa = 4.0 * gam / eps - 1.0;
  if (kappa == 0.0)
    throw InvalidInput("fhn closed form: kappa is exactly zero");
  const double c = cos_like(kappa, dt);
  const double ks = kappa * sinc_like(kappa, dt);  // sqrt(k) sin(sqrt(k) dt)
  const double e = std::exp(-dt);
  const double s2 = sigma2 * sigma2;
  const double c11 =
      s2 * e / (2.0 * eps * gam * kappa) *
      (-4.0 * gam / eps + kappa * std::exp(dt) + c - ks);
  const double c12 = s2 * e / (kappa * eps) * (c - 1.0);
  const double c22 = s2 * e / (2.0 * kappa) *
                     (c + ks - 4.0 * gam / eps + kappa * std::exp(dt));
  Mat out(2, 2);
  out << c11, c12, c12, c22;
  return out;
}

SemiLinearModel ou_model(const Mat& a, const Mat& sigma) {
  if (a.rows() != a.cols()) throw InvalidInput("ou_model: A must be square");
  if (sigma.rows() != a.rows()) throw InvalidInput("ou_model: Sigma row mismatch");
  if (!a.allFinite() || !sigma.allFinite())
    throw InvalidInput("ou_model: non-finite entries");
  SemiLinearModel m;
  m.dim = static_cast<int>(a.rows());
  m.A = a;
  m.sigma = sigma;
  const int d = m.dim;
  m.gamma = [d](const Vec&) { return Vec::Zero(d); };
  m.coordwise = CoordwiseFlow{[](int, double, double x) { return x; },
                              [](int, double, double x) { return x; },
                              [](int, double, double) { return 0.0; }};
  attach_coordwise(m);
  return m;
}

SemiLinearModel reorder_coordinates(const SemiLinearModel& model,
                                    const std::vector<int>& front) {
  const int d = model.dim;
  std::vector<int> perm = front;  // new index -> old index
  std::vector<char> used(d, 0);
  for (int i : front) {
    if (i < 0 || i >= d || used[i])
      throw InvalidInput("reorder_coordinates: bad index set");
    used[i] = 1;
  }
  for (int i = 0; i < d; ++i)
    if (!used[i]) perm.push_back(i);

  SemiLinearModel out;
  out.dim = d;
  out.A.resize(d, d);
  out.sigma.resize(d, model.sigma.cols());
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) out.A(i, j) = model.A(perm[i], perm[j]);
    out.sigma.row(i) = model.sigma.row(perm[i]);
  }
  auto scatter = [perm, d](const Vec& x) {
    Vec old(d);
    for (int i = 0; i < d; ++i) old[perm[i]] = x[i];
    return old;
  };
  auto gather = [perm, d](const Vec& old) {
    Vec x(d);
    for (int i = 0; i < d; ++i) x[i] = old[perm[i]];
    return x;
  };
  auto g = model.gamma;
  out.gamma = [g, scatter, gather](const Vec& x) { return gather(g(scatter(x))); };
  if (model.coordwise) {
    const CoordwiseFlow cw = *model.coordwise;
    const std::vector<int> p = perm;
    out.coordwise = CoordwiseFlow{
        [cw, p](int i, double dt, double x) { return cw.value(p[i], dt, x); },
        [cw, p](int i, double dt, double x) { return cw.inverse(p[i], dt, x); },
        [cw, p](int i, double dt, double x) { return cw.log_deriv(p[i], dt, x); }};
    attach_coordwise(out);
  } else {
    auto f = model.flow;
    out.flow = [f, scatter, gather](double dt, const Vec& x) {
      return gather(f(dt, scatter(x)));
    };
    if (model.flow_inverse) {
      auto fi = model.flow_inverse;
      out.flow_inverse = [fi, scatter, gather](double dt, const Vec& x) {
        return gather(fi(dt, scatter(x)));
      };
    }
    if (model.flow_log_jacobian) {
      auto fj = model.flow_log_jacobian;
      out.flow_log_jacobian = [fj, scatter](double dt, const Vec& x) {
        return fj(dt, scatter(x));
      };
    }
  }
  out.param_names = model.param_names;
  out.theta = model.theta;
  return out;
}

}  // namespace splitsmc
