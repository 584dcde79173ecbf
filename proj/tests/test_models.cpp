#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "splitsmc/model.hpp"
#include "support/ode.hpp"

using namespace splitsmc;
namespace ts = splitsmc::testsupport;

TEST_CASE("cubic model construction and fixed points") {
  CHECK_THROWS_AS(cubic_model(0.0), InvalidInput);
  const SemiLinearModel m = cubic_model(20.0);
  CHECK(m.dim == 1);
  CHECK(m.A(0, 0) == -1.0);
  CHECK(m.sigma(0, 0) == 20.0);

  // gamma(x) = x - x^3 so A x + gamma(x) = -x^3
  const Vec x = Vec::Constant(1, 1.7);
  CHECK((m.A * x + m.gamma(x))[0] == doctest::Approx(-1.7 * 1.7 * 1.7).epsilon(1e-14));

  for (double dt : {0.01, 0.1, 1.0, 10.0})
    CHECK(m.flow(dt, Vec::Zero(1))[0] == 0.0);  // Gamma_dt(0) = 0
  CHECK(m.flow(0.0, Vec::Constant(1, 0.37))[0] == doctest::Approx(0.37).epsilon(1e-15));
  CHECK(m.flow(0.5, Vec::Ones(1))[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("cubic flow inverse identity and domain") {
  const SemiLinearModel m = cubic_model(1.0);
  const double dt = 0.05;
  const Vec x = Vec::Constant(1, 0.7);
  const Vec roundtrip = m.flow_inverse(dt, m.flow(dt, x));
  CHECK(std::abs(roundtrip[0] - 0.7) <= 1e-12);

  // inverse defined iff |x| < (1 - e^{-2 dt})^{-1/2}
  const double bound = 1.0 / std::sqrt(1.0 - std::exp(-2.0 * dt));
  CHECK_NOTHROW(m.flow_inverse(dt, Vec::Constant(1, bound - 1e-6)));
  CHECK_THROWS_AS(m.flow_inverse(dt, Vec::Constant(1, bound + 1e-6)), DomainError);
}

TEST_CASE("cubic LT ingredients from appendix formulas") {
  // transition N(e^{-dt} Gamma_dt(x), C(dt)); Gamma fixes 0 and +-1
  const double dt = 0.1;
  const SemiLinearModel m = cubic_model(20.0);
  const Mat ead = matrix_exponential(m.A, dt);
  CHECK(ead(0, 0) == doctest::Approx(std::exp(-0.1)).epsilon(1e-14));
  const double mean = (ead * m.flow(dt, Vec::Ones(1)))[0];
  CHECK(mean == doctest::Approx(std::exp(-0.1)).epsilon(1e-12));
  // Van Loan value of C(dt) = sigma^2 (1 - e^{-2 dt}) / 2; the appendix
  // display drops the 1/2 relative to its own definition of C(dt)
  const Mat c = integrated_covariance(m.A, m.sigma, dt);
  CHECK(c(0, 0) ==
        doctest::Approx(400.0 * (1.0 - std::exp(-0.2)) / 2.0).epsilon(1e-12));
}

TEST_CASE("flow consistency with RK4 on a grid, cubic") {
  const SemiLinearModel m = cubic_model(1.0);
  for (double x0 : {-2.0, -1.3, -0.4, 0.0, 0.6, 1.0, 2.5}) {
    for (double dt : {0.02, 0.1, 0.5}) {
      const Vec via_flow = m.flow(dt, Vec::Constant(1, x0));
      const Vec via_rk4 =
          ts::rk4_flow(m.gamma, Vec::Constant(1, x0), dt, 4000);
      CHECK(std::abs(via_flow[0] - via_rk4[0]) <= 1e-8);
    }
  }
}

TEST_CASE("cubic one-sided Lipschitz spot check") {
  // <gamma(x)-gamma(y), x-y> <= c1 |x-y|^2 with c1 = 1
  const SemiLinearModel m = cubic_model(1.0);
  RngStream rng(2);
  for (int i = 0; i < 200; ++i) {
    const Vec x = Vec::Constant(1, 6.0 * (rng.uniform() - 0.5));
    const Vec y = Vec::Constant(1, 6.0 * (rng.uniform() - 0.5));
    const double lhs = (m.gamma(x) - m.gamma(y)).dot(x - y);
    CHECK(lhs <= 1.0 * (x - y).squaredNorm() + 1e-12);
  }
}

TEST_CASE("fhn model validation") {
  CHECK_THROWS_AS(fhn_model(-0.1, 1.5, 0.8, 0.0, 0.3), InvalidInput);
  CHECK_THROWS_AS(fhn_model(0.1, 1.5, 0.8, 0.0, 0.0), InvalidInput);
  CHECK_THROWS_AS(fhn_model(1.0, 0.25, 0.8, 0.0, 0.3), InvalidInput);  // kappa = 0

  const SemiLinearModel m = fhn_model(0.1, 1.5, 0.8, 0.0, 0.3);
  CHECK(m.dim == 2);
  CHECK(m.A(0, 1) == doctest::Approx(-10.0));
  CHECK(m.A(1, 0) == doctest::Approx(1.5));
  CHECK(m.param_names.size() == 4);

  // full drift matches the SDE field
  const Vec x{{0.4, -0.2}};
  const Vec drift = m.A * x + m.gamma(x);
  CHECK(drift[0] == doctest::Approx((0.4 - 0.064 + 0.2) / 0.1).epsilon(1e-12));
  CHECK(drift[1] == doctest::Approx(1.5 * 0.4 + 0.2 + 0.8).epsilon(1e-12));
}

TEST_CASE("fhn flow fixes V at zero and shifts U") {
  const double beta = 0.8;
  const SemiLinearModel m = fhn_model(0.1, 1.5, beta, 0.0, 0.3);
  for (double y : {-1.0, 0.0, 2.5}) {
    const Vec out = m.flow(0.37, Vec{{0.0, y}});
    CHECK(out[0] == 0.0);
    CHECK(out[1] == doctest::Approx(beta * 0.37 + y).epsilon(1e-14));
  }
}

TEST_CASE("fhn flow against RK4 and inverse identity") {
  const SemiLinearModel m = fhn_model(0.1, 1.5, 0.8, 0.0, 0.3);
  for (double v : {-1.1, -0.3, 0.5, 1.2}) {
    const Vec x{{v, 0.4}};
    const Vec via_flow = m.flow(0.02, x);
    const Vec via_rk4 = ts::rk4_flow(m.gamma, x, 0.02, 4000);
    CHECK((via_flow - via_rk4).cwiseAbs().maxCoeff() <= 1e-8);
    const Vec back = m.flow_inverse(0.02, via_flow);
    CHECK((back - x).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("flow jacobian log-determinant matches finite differences") {
  const SemiLinearModel fhn = fhn_model(0.1, 1.5, 0.8, 0.0, 0.3);
  for (double v : {-0.9, 0.2, 1.1}) {
    const Vec x{{v, -0.5}};
    const double dt = 0.025;
    const double analytic = fhn.flow_log_jacobian(dt, x);
    auto f = [&](const Vec& z) { return fhn.flow(dt, z); };
    const double numeric = ts::fd_log_abs_det_jacobian(f, x);
    CHECK(std::abs(std::exp(analytic) - std::exp(numeric)) <=
          1e-5 * std::abs(std::exp(numeric)));
  }
  const SemiLinearModel cubic = cubic_model(2.0);
  const Vec x = Vec::Constant(1, 0.8);
  auto f = [&](const Vec& z) { return cubic.flow(0.07, z); };
  CHECK(std::abs(cubic.flow_log_jacobian(0.07, x) -
                 ts::fd_log_abs_det_jacobian(f, x)) <= 1e-6);
}

TEST_CASE("fhn hypoelliptic noise covariance is positive definite") {
  // sigma1 = 0 yet C(dt) has full rank
  const Mat c = fhn_noise_covariance_closed_form(0.1, 1.5, 0.3, 0.02);
  CHECK(c(0, 0) > 0.0);
  CHECK(c.determinant() > 0.0);
  const SemiLinearModel m = fhn_model(0.1, 1.5, 0.8, 0.0, 0.3);
  const Mat generic = integrated_covariance(m.A, m.sigma, 0.02);
  CHECK(Eigen::LLT<Mat>(generic).info() == Eigen::Success);
}

TEST_CASE("ou model is the identity-flow linear SDE") {
  Mat a(2, 2), sig(2, 2);
  a << -1.0, 0.5, -0.3, -0.8;
  sig << 0.5, 0.0, 0.0, 0.7;
  const SemiLinearModel m = ou_model(a, sig);
  const Vec x{{1.0, -2.0}};
  CHECK(m.gamma(x).norm() == 0.0);
  CHECK((m.flow(0.3, x) - x).norm() == 0.0);
  CHECK(m.flow_log_jacobian(0.3, x) == 0.0);
  CHECK((m.flow_inverse(0.9, x) - x).norm() == 0.0);
}

TEST_CASE("coordinate reordering permutes the dynamics consistently") {
  const SemiLinearModel m = fhn_model(0.1, 1.5, 0.8, 0.0, 0.3);
  const SemiLinearModel r = reorder_coordinates(m, {1});  // U first
  const Vec x{{0.4, -0.2}};       // natural order (V, U)
  const Vec xr{{-0.2, 0.4}};      // reordered (U, V)
  const Vec ax = m.A * x;
  const Vec axr = r.A * xr;
  CHECK(axr[0] == doctest::Approx(ax[1]).epsilon(1e-15));
  CHECK(axr[1] == doctest::Approx(ax[0]).epsilon(1e-15));
  const Vec g = m.gamma(x);
  const Vec gr = r.gamma(xr);
  CHECK(gr[0] == g[1]);
  CHECK(gr[1] == g[0]);
  const Vec f = m.flow(0.05, x);
  const Vec fr = r.flow(0.05, xr);
  CHECK(fr[0] == f[1]);
  CHECK(fr[1] == f[0]);
  CHECK(r.flow_log_jacobian(0.05, xr) == doctest::Approx(m.flow_log_jacobian(0.05, x)));
}
