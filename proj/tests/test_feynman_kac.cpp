#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "splitsmc/feynman_kac.hpp"
#include "support/kalman.hpp"
#include "support/quadrature.hpp"

using namespace splitsmc;
namespace ts = splitsmc::testsupport;

namespace {

SemiLinearModel ou2() {
  Mat a(2, 2), sig(2, 2);
  a << -1.0, 0.5, -0.3, -0.8;
  sig << 0.5, 0.0, 0.0, 0.7;
  return ou_model(a, sig);
}

Mat simulate_ou2_observed(const SemiLinearModel& m, int m_obs, double dt,
                          std::uint64_t seed) {
  const SchemeKernel k = make_kernel(m, Scheme::LieTrotter, dt);
  RngStream rng(seed);
  Vec x{{0.1, 0.4}};
  Mat vdata(m_obs + 1, 1);
  vdata(0, 0) = x[0];
  for (int i = 1; i <= m_obs; ++i) {
    x = k.sample(x, rng);
    vdata(i, 0) = x[0];
  }
  return vdata;
}

}  // namespace

TEST_CASE("full unbridged: single state gives zero log-likelihood") {
  const SemiLinearModel m = cubic_model(2.0);
  CHECK(full_unbridged_loglik(m, Scheme::LieTrotter, Mat::Zero(1, 1), 0.1) == 0.0);
}

TEST_CASE("full unbridged matches the AR(1) closed form on 1-D OU") {
  Mat a(1, 1), sig(1, 1);
  a << -0.8;
  sig << 0.6;
  const SemiLinearModel m = ou_model(a, sig);
  const double dt = 0.25;
  RngStream rng(21);
  Mat path(12, 1);
  path(0, 0) = 0.3;
  const double rho = std::exp(-0.8 * dt);
  const double var = 0.36 * (1.0 - std::exp(-2.0 * 0.8 * dt)) / (2.0 * 0.8);
  for (int i = 1; i < 12; ++i)
    path(i, 0) = rho * path(i - 1, 0) + std::sqrt(var) * rng.normal();

  double by_hand = 0.0;
  for (int i = 1; i < 12; ++i) {
    const double resid = path(i, 0) - rho * path(i - 1, 0);
    by_hand += -0.5 * std::log(2.0 * M_PI * var) - resid * resid / (2.0 * var);
  }
  for (Scheme s : {Scheme::LieTrotter, Scheme::Strang}) {
    CHECK(full_unbridged_loglik(m, s, path, dt) ==
          doctest::Approx(by_hand).epsilon(1e-12));
  }
}

TEST_CASE("full unbridged cubic LT equals the sum of appendix densities") {
  const double sigma = 20.0, dt = 0.1;
  const SemiLinearModel m = cubic_model(sigma);
  RngStream rng(8);
  Mat path(10, 1);
  path(0, 0) = 0.0;
  {
    const SchemeKernel k = make_kernel(m, Scheme::LieTrotter, dt);
    for (int i = 1; i < 10; ++i) path(i, 0) = k.sample(path.row(i - 1), rng)[0];
  }
  // independent re-evaluation: mean e^{-dt} Gamma_dt(x), variance from C(dt)
  const double var = sigma * sigma * (1.0 - std::exp(-2.0 * dt)) / 2.0;
  double by_hand = 0.0;
  for (int i = 1; i < 10; ++i) {
    const double x = path(i - 1, 0);
    const double e = std::exp(-2.0 * dt);
    const double mean = std::exp(-dt) * x / std::sqrt(e + x * x * (1.0 - e));
    const double r = path(i, 0) - mean;
    by_hand += -0.5 * std::log(2.0 * M_PI * var) - r * r / (2.0 * var);
  }
  CHECK(full_unbridged_loglik(m, Scheme::LieTrotter, path, dt) ==
        doctest::Approx(by_hand).epsilon(1e-12));
}

TEST_CASE("bridged full: segment normalizing constant by quadrature, K = 2") {
  const SemiLinearModel m = cubic_model(2.0);
  const double dt = 0.2;
  Mat path(3, 1);
  path << 0.1, -0.4, 0.5;
  for (Scheme s : {Scheme::LieTrotter, Scheme::EuM, Scheme::Strang}) {
    const FeynmanKacModel fk = bridged_full(m, s, path, dt, 2);
    REQUIRE(fk.horizon() == 2);
    check_dimension_chain(fk);
    const double z_quad = ts::chain_log_z_quadrature(fk, -8.0, 8.0, 400);

    // direct: log prod_k int f(mid | x_{k-1}) f(x_k | mid) dmid
    const SchemeKernel fine = make_kernel(m, s, dt / 2.0);
    double direct = 0.0;
    for (int k = 1; k < 3; ++k) {
      const Vec from = path.row(k - 1);
      const Vec to = path.row(k);
      direct += ts::log_integrate(
          [&](double mid) {
            const Vec midv = Vec::Constant(1, mid);
            const double first = fine.log_density(from, midv);
            if (!std::isfinite(first))
              return -std::numeric_limits<double>::infinity();
            return first + fine.log_density(midv, to);
          },
          -8.0, 8.0, 60, 12);
    }
    CHECK(z_quad == doctest::Approx(direct).epsilon(1e-8));
  }
}

TEST_CASE("bridged full on OU equals the exact likelihood for every K") {
  Mat a(1, 1), sig(1, 1);
  a << -0.8;
  sig << 0.6;
  const SemiLinearModel m = ou_model(a, sig);
  const double dt = 0.4;
  Mat path(4, 1);
  path << 0.0, 0.7, -0.2, 0.3;
  const double exact = full_unbridged_loglik(m, Scheme::LieTrotter, path, dt);
  for (int K : {2, 3, 5}) {
    const FeynmanKacModel fk = bridged_full(m, Scheme::LieTrotter, path, dt, K);
    const double z = ts::chain_log_z_quadrature(fk, -10.0, 10.0, 400);
    CHECK(z == doctest::Approx(exact).epsilon(1e-8));
  }
  CHECK_THROWS_AS(bridged_full(m, Scheme::LieTrotter, path, dt, 0), InvalidInput);
  CHECK_THROWS_AS(bridged_full(m, Scheme::LieTrotter, path, dt, 1), InvalidInput);
}

TEST_CASE("bridged full under Strang carries the Jacobian offset") {
  const SemiLinearModel m = cubic_model(2.0);
  const double dt = 0.2;
  Mat path(3, 1);
  path << 0.1, -0.6, 0.4;
  const FeynmanKacModel fk = bridged_full(m, Scheme::Strang, path, dt, 3);
  const double z = ts::chain_log_z_quadrature(fk, -8.0, 8.0, 400);
  // reference: compose two fine Strang transitions by quadrature in x-space
  const SchemeKernel fine = make_kernel(m, Scheme::Strang, dt / 3.0);
  double direct = 0.0;
  for (int k = 1; k < 3; ++k) {
    const Vec from = path.row(k - 1);
    const Vec to = path.row(k);
    direct += ts::log_integrate(
        [&](double m1) {
          const Vec m1v = Vec::Constant(1, m1);
          const double t0 = fine.log_density(from, m1v);
          if (!std::isfinite(t0)) return -std::numeric_limits<double>::infinity();
          const double inner = ts::log_integrate(
              [&](double m2) {
                const Vec m2v = Vec::Constant(1, m2);
                const double t1 = fine.log_density(m1v, m2v);
                if (!std::isfinite(t1))
                  return -std::numeric_limits<double>::infinity();
                return t1 + fine.log_density(m2v, to);
              },
              -3.8, 3.8, 40, 12);
          return t0 + inner;
        },
        -3.8, 3.8, 40, 12);
  }
  CHECK(z == doctest::Approx(direct).epsilon(1e-7));
}

TEST_CASE("partial unbridged matches the Kalman oracle by quadrature") {
  const SemiLinearModel m = ou2();
  const double dt = 0.3;
  const Mat vdata = simulate_ou2_observed(m, 12, dt, 33);
  const LatentInit init{Vec::Constant(1, 0.2), Mat::Constant(1, 1, 0.36)};

  const FeynmanKacModel fk =
      partial_unbridged(m, Scheme::LieTrotter, vdata, {0}, dt, init);
  REQUIRE(fk.horizon() == 12);
  check_dimension_chain(fk);
  const double z = ts::chain_log_z_quadrature(fk, -6.0, 6.0, 400);

  const Mat t_mat = matrix_exponential(m.A, dt);
  const Mat q_mat = integrated_covariance(m.A, m.sigma, dt);
  const double z_kalman =
      ts::kalman_partial(t_mat, q_mat, vdata, init.mean, init.cov).log_lik;
  CHECK(z == doctest::Approx(z_kalman).epsilon(1e-8));
}

TEST_CASE("partial unbridged with M = 1 matches direct quadrature") {
  const SemiLinearModel m = ou2();
  const double dt = 0.3;
  Mat vdata(2, 1);
  vdata << 0.1, -0.2;
  const LatentInit init{Vec::Zero(1), Mat::Identity(1, 1)};
  const FeynmanKacModel fk =
      partial_unbridged(m, Scheme::LieTrotter, vdata, {0}, dt, init);
  REQUIRE(fk.horizon() == 1);
  const double z = ts::chain_log_z_quadrature(fk, -8.0, 8.0, 300);

  const Mat t_mat = matrix_exponential(m.A, dt);
  const Mat q_mat = integrated_covariance(m.A, m.sigma, dt);
  const double direct = ts::log_integrate(
      [&](double u0) {
        const Vec x0{{vdata(0, 0), u0}};
        const Vec mean = t_mat * x0;
        const double f1 = -0.5 * std::log(2.0 * M_PI * q_mat(0, 0)) -
                          (vdata(1, 0) - mean[0]) * (vdata(1, 0) - mean[0]) /
                              (2.0 * q_mat(0, 0));
        const double mu2 = -0.5 * std::log(2.0 * M_PI) - 0.5 * u0 * u0;
        return f1 + mu2;
      },
      -8.0, 8.0, 60, 12);
  CHECK(z == doctest::Approx(direct).epsilon(1e-9));
}

TEST_CASE("partial bridged: K = 1 reduces to partial unbridged") {
  const SemiLinearModel m = ou2();
  const double dt = 0.3;
  const Mat vdata = simulate_ou2_observed(m, 6, dt, 44);
  const LatentInit init{Vec::Zero(1), Mat::Identity(1, 1)};
  const FeynmanKacModel a =
      partial_bridged(m, Scheme::LieTrotter, vdata, {0}, dt, 1, init);
  const FeynmanKacModel b =
      partial_unbridged(m, Scheme::LieTrotter, vdata, {0}, dt, init);
  REQUIRE(a.horizon() == b.horizon());
  const double za = ts::chain_log_z_quadrature(a, -6.0, 6.0, 300);
  const double zb = ts::chain_log_z_quadrature(b, -6.0, 6.0, 300);
  CHECK(za == doctest::Approx(zb).epsilon(1e-10));
}

TEST_CASE("partial bridged with M = 1, K = 2 matches the Kalman value") {
  // chain: u0 (1-D), then x_{1;1} (2-D) carrying the end potential; on the
  // OU the bridged normalizing constant equals the exact Kalman likelihood
  const SemiLinearModel m = ou2();
  const double dt = 0.4;
  Mat vdata(2, 1);
  vdata << 0.2, -0.5;
  const LatentInit init{Vec::Constant(1, 0.1), Mat::Constant(1, 1, 0.49)};
  const FeynmanKacModel fk =
      partial_bridged(m, Scheme::LieTrotter, vdata, {0}, dt, 2, init);
  REQUIRE(fk.horizon() == 2);
  REQUIRE(fk.steps[0].state_dim == 1);
  REQUIRE(fk.steps[1].state_dim == 2);
  check_dimension_chain(fk);

  // direct tensor quadrature over (u0, x1, x2) of the Prop-3 integrand
  const double delta = dt / 2.0;
  const Mat t_mat = matrix_exponential(m.A, delta);
  const Mat q_mat = integrated_covariance(m.A, m.sigma, delta);
  const Mat q_inv = q_mat.inverse();
  const double q_logdet = std::log(q_mat.determinant());
  auto log_f_full = [&](const Vec& to, const Vec& from) {
    const Vec r = to - t_mat * from;
    return -0.5 * (2.0 * std::log(2.0 * M_PI) + q_logdet + r.dot(q_inv * r));
  };
  const double direct = ts::log_integrate(
      [&](double u0) {
        const double mu2 = -0.5 * std::log(2.0 * M_PI * 0.49) -
                           (u0 - 0.1) * (u0 - 0.1) / (2.0 * 0.49);
        const Vec x0{{vdata(0, 0), u0}};
        const double inner = ts::log_integrate(
            [&](double x1) {
              return ts::log_integrate(
                  [&](double x2) {
                    const Vec mid{{x1, x2}};
                    const Vec mean = t_mat * mid;
                    const double g =
                        -0.5 * std::log(2.0 * M_PI * q_mat(0, 0)) -
                        (vdata(1, 0) - mean[0]) * (vdata(1, 0) - mean[0]) /
                            (2.0 * q_mat(0, 0));
                    return log_f_full(mid, x0) + g;
                  },
                  -5.0, 5.0, 20, 12);
            },
            -5.0, 5.0, 20, 12);
        return mu2 + inner;
      },
      -5.0, 5.0, 20, 12);

  const Mat t_obs = matrix_exponential(m.A, dt);
  const Mat q_obs = integrated_covariance(m.A, m.sigma, dt);
  const double z_kalman =
      ts::kalman_partial(t_obs, q_obs, vdata, init.mean, init.cov).log_lik;
  CHECK(direct == doctest::Approx(z_kalman).epsilon(1e-8));
  (void)fk;
}

TEST_CASE("twist with unit policies leaves the model unchanged") {
  const SemiLinearModel m = ou2();
  const Mat vdata = simulate_ou2_observed(m, 5, 0.3, 55);
  const LatentInit init{Vec::Zero(1), Mat::Identity(1, 1)};
  const FeynmanKacModel base =
      partial_unbridged(m, Scheme::LieTrotter, vdata, {0}, 0.3, init);
  std::vector<QuadraticLogPolicy> unit(base.horizon(), QuadraticLogPolicy::zero(1));
  const TwistedModel tw = twist(base, unit);
  RngStream r1(7), r2(7);
  for (int k = 0; k < base.horizon(); ++k) {
    const Vec u = Vec::Constant(1, 0.3 * k - 0.5);
    CHECK(tw.model.steps[k].log_g(u) == base.steps[k].log_g(u));
    const Vec prev = Vec::Constant(1, 0.1);
    if (k > 0)
      CHECK(tw.model.steps[k].kernel.sample(prev, r1)[0] ==
            base.steps[k].kernel.sample(prev, r2)[0]);
  }
}

TEST_CASE("twisting leaves the normalizing constant unchanged") {
  const SemiLinearModel m = ou2();
  const Mat vdata = simulate_ou2_observed(m, 3, 0.3, 66);
  const LatentInit init{Vec::Zero(1), Mat::Identity(1, 1)};
  const FeynmanKacModel base =
      partial_unbridged(m, Scheme::LieTrotter, vdata, {0}, 0.3, init);
  const double z_base = ts::chain_log_z_quadrature(base, -7.0, 7.0, 400);

  RngStream rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<QuadraticLogPolicy> psis;
    for (int k = 0; k < base.horizon(); ++k) {
      QuadraticLogPolicy p = QuadraticLogPolicy::zero(1);
      p.P(0, 0) = -0.8 * rng.uniform();  // concave, admissible
      p.b[0] = rng.normal();
      p.c = rng.normal();
      psis.push_back(p);
    }
    const TwistedModel tw = twist(base, psis);
    const double z_twisted = ts::chain_log_z_quadrature(tw.model, -7.0, 7.0, 400);
    CHECK(z_twisted == doctest::Approx(z_base).epsilon(1e-8));
  }
}

TEST_CASE("twist rejects inadmissible policies with the step index") {
  const SemiLinearModel m = ou2();
  const Mat vdata = simulate_ou2_observed(m, 4, 0.3, 77);
  const LatentInit init{Vec::Zero(1), Mat::Identity(1, 1)};
  const FeynmanKacModel base =
      partial_unbridged(m, Scheme::LieTrotter, vdata, {0}, 0.3, init);
  std::vector<QuadraticLogPolicy> psis(base.horizon(), QuadraticLogPolicy::zero(1));
  psis[2].P(0, 0) = 100.0;  // far beyond the kernel precision
  try {
    twist(base, psis);
    CHECK(false);
  } catch (const PolicyDegeneracy& e) {
    CHECK(e.step == 2);
  }
}

TEST_CASE("appendix-C identity: FK normalizing constant equals the direct integral") {
  // 2-D OU, one observed coordinate, M = 2: the Prop-1 chain u_0, u_1 versus
  // the direct 3-fold integral over u_0, u_1, u_2 of mu f1 f2 (small version
  // of the acceptance criterion)
  const SemiLinearModel m = ou2();
  const double dt = 0.35;
  const Mat vdata = simulate_ou2_observed(m, 2, dt, 88);
  const LatentInit init{Vec::Zero(1), Mat::Identity(1, 1)};
  const FeynmanKacModel fk =
      partial_unbridged(m, Scheme::LieTrotter, vdata, {0}, dt, init);
  const double z_fk = ts::chain_log_z_quadrature(fk, -7.0, 7.0, 400);

  const Mat t_mat = matrix_exponential(m.A, dt);
  const Mat q_mat = integrated_covariance(m.A, m.sigma, dt);
  const ConditionalSplit split =
      condition_gaussian(GaussianDensity{Vec::Zero(2), q_mat}, 1);
  const double s11 = split.marginal.cov(0, 0);
  const double gain = split.gain(0, 0);
  const double cvar = split.cond_cov(0, 0);
  auto log_f1 = [&](double v_next, const Vec& x) {
    const Vec mean = t_mat * x;
    return -0.5 * std::log(2.0 * M_PI * s11) -
           (v_next - mean[0]) * (v_next - mean[0]) / (2.0 * s11);
  };
  auto log_f2 = [&](double u_next, double v_next, const Vec& x) {
    const Vec mean = t_mat * x;
    const double cm = mean[1] + gain * (v_next - mean[0]);
    return -0.5 * std::log(2.0 * M_PI * cvar) -
           (u_next - cm) * (u_next - cm) / (2.0 * cvar);
  };
  const double direct = ts::log_integrate(
      [&](double u0) {
        const Vec x0{{vdata(0, 0), u0}};
        const double mu2 = -0.5 * std::log(2.0 * M_PI) - 0.5 * u0 * u0;
        const double lvl1 = ts::log_integrate(
            [&](double u1) {
              const Vec x1{{vdata(1, 0), u1}};
              const double lvl2 = ts::log_integrate(
                  [&](double u2) {
                    return log_f2(u2, vdata(2, 0), x1);  // integrates to 1
                  },
                  -8.0, 8.0, 24, 12);
              return log_f2(u1, vdata(1, 0), x0) + log_f1(vdata(2, 0), x1) + lvl2;
            },
            -8.0, 8.0, 24, 12);
        return mu2 + log_f1(vdata(1, 0), x0) + lvl1;
      },
      -8.0, 8.0, 24, 12);
  // 1e-8 relative on Z is 1e-8 absolute in the log domain
  CHECK(std::abs(z_fk - direct) <= 1e-8);
}

TEST_CASE("dimension chaining across builders and regimes") {
  const SemiLinearModel cub = cubic_model(3.0);
  Mat path(5, 1);
  path << 0.0, 0.3, -0.2, 0.4, 0.1;
  for (Scheme s : {Scheme::EuM, Scheme::LieTrotter, Scheme::Strang})
    for (int K : {2, 3, 4})
      check_dimension_chain(bridged_full(cub, s, path, 0.2, K));

  const SemiLinearModel m = ou2();
  const Mat vdata = simulate_ou2_observed(m, 5, 0.3, 99);
  const LatentInit init{Vec::Zero(1), Mat::Identity(1, 1)};
  for (Scheme s : {Scheme::LieTrotter, Scheme::Strang})
    for (int K : {1, 2, 3})
      check_dimension_chain(
          partial_bridged(m, s, vdata, {0}, 0.3, K, init));

  const SemiLinearModel fhn = fhn_model(0.1, 1.5, 0.8, 0.0, 0.3);
  Mat fv(4, 1);
  fv << 0.0, 0.2, -0.1, 0.3;
  for (Scheme s : {Scheme::LieTrotter, Scheme::Strang})
    for (int K : {1, 2, 4})
      check_dimension_chain(
          partial_bridged(fhn, s, fv, {0}, 0.05, K,
                          LatentInit{Vec::Zero(1), Mat::Identity(1, 1)}));
}

TEST_CASE("strang partial requires componentwise invertibility") {
  SemiLinearModel m = ou2();
  m.coordwise.reset();  // generic flow only
  const Mat vdata = simulate_ou2_observed(ou2(), 3, 0.3, 13);
  const LatentInit init{Vec::Zero(1), Mat::Identity(1, 1)};
  CHECK_THROWS_AS(
      partial_unbridged(m, Scheme::Strang, vdata, {0}, 0.3, init),
      UnsupportedScheme);
  CHECK_NOTHROW(partial_unbridged(m, Scheme::LieTrotter, vdata, {0}, 0.3, init));
}

TEST_CASE("strang partial pseudolikelihood against direct x-space quadrature") {
  // validates the z-transform of the observed data, the latent-init shift and
  // the Jacobian offset: the builder works on the inverse process while the
  // oracle integrates the full Strang transition density directly.
  // sigma1 > 0 keeps every conditional scale wide enough for fixed-grid
  // quadrature; the hypoelliptic case exercises the same code path and is
  // covered by the positive-definiteness and Kalman tests.
  const SemiLinearModel fhn = fhn_model(0.5, 1.0, 0.8, 0.4, 0.5);
  const double dt = 0.1;
  const SchemeKernel strang_full = make_kernel(fhn, Scheme::Strang, dt);
  const double init_mean = 0.1, init_var = 0.09;
  const LatentInit init{Vec::Constant(1, init_mean), Mat::Constant(1, 1, init_var)};
  auto log_mu2 = [&](double u0) {
    return -0.5 * std::log(2.0 * M_PI * init_var) -
           (u0 - init_mean) * (u0 - init_mean) / (2.0 * init_var);
  };
  const double ulo = -1.8, uhi = 2.0;

  SUBCASE("single transition") {
    Mat vdata(2, 1);
    vdata << 0.4, 0.43;
    const FeynmanKacModel fk =
        partial_unbridged(fhn, Scheme::Strang, vdata, {0}, dt, init);
    REQUIRE(fk.horizon() == 1);
    const double z_builder = ts::chain_log_z_quadrature(fk, ulo, uhi, 350);

    const double direct = ts::log_integrate(
        [&](double u0) {
          const Vec x0{{vdata(0, 0), u0}};
          const double marg = ts::log_integrate(
              [&](double u1) {
                return strang_full.log_density(x0, Vec{{vdata(1, 0), u1}});
              },
              ulo, uhi, 30, 12);
          return log_mu2(u0) + marg;
        },
        ulo, uhi, 30, 12);
    CHECK(z_builder == doctest::Approx(direct).epsilon(1e-8));
  }

  SUBCASE("two transitions") {
    Mat vdata(3, 1);
    vdata << 0.4, 0.43, 0.49;
    const FeynmanKacModel fk =
        partial_unbridged(fhn, Scheme::Strang, vdata, {0}, dt, init);
    REQUIRE(fk.horizon() == 2);
    const double z_builder = ts::chain_log_z_quadrature(fk, ulo, uhi, 350);

    const double direct = ts::log_integrate(
        [&](double u0) {
          const Vec x0{{vdata(0, 0), u0}};
          const double inner1 = ts::log_integrate(
              [&](double u1) {
                const Vec x1{{vdata(1, 0), u1}};
                const double inner2 = ts::log_integrate(
                    [&](double u2) {
                      return strang_full.log_density(x1, Vec{{vdata(2, 0), u2}});
                    },
                    ulo, uhi, 20, 10);
                return strang_full.log_density(x0, x1) + inner2;
              },
              ulo, uhi, 20, 10);
          return log_mu2(u0) + inner1;
        },
        ulo, uhi, 20, 10);
    CHECK(z_builder == doctest::Approx(direct).epsilon(1e-8));
  }
}
