#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stcp/model.hpp"
#include "stcp/rng.hpp"

using namespace stcp;

namespace {

// pointwise evaluation of the piecewise mean, the oracle for mean_surface
VectorXd pointwise_mean(const MeanParams& mp, const ChangepointField& cp, Index n) {
  VectorXd mu(n * cp.m);
  for (Index i = 0; i < n; ++i) {
    for (int t = 1; t <= cp.m; ++t) {
      double v = mp.alpha0;
      if (static_cast<double>(t) > cp.tau[i]) {
        v += (mp.gamma0F + mp.gamma0R[i]) +
             (mp.gamma1F + mp.gamma1R[i]) * (static_cast<double>(t) - cp.tau[i]);
      }
      mu[flat_index(i, t, n)] = v;
    }
  }
  return mu;
}

CorrelationMatrix identity_correlation(Index n) {
  CorrelationMatrix c;
  c.R = MatrixXd::Identity(n, n);
  c.decay = 1.0;
  return c;
}

MatrixXd dense_kron(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

}  // namespace

TEST_CASE("build_tau basics") {
  const int m = 61;
  SECTION("origin and capping") {
    VectorXd delta = VectorXd::Zero(3);
    delta << 0.0, 5.5, 100.0;
    const ChangepointField cp = build_tau(18.0, delta, m);
    CHECK(cp.tau[0] == 18.0);
    CHECK(cp.tau[1] == 23.5);
    CHECK(cp.tau[2] == 61.0);
    CHECK(cp.detected(0));
    CHECK_FALSE(cp.detected(2));
    // indicator for location 1: active from t = 24
    CHECK(cp.post_indicator[flat_index(1, 23, 3)] == 0.0);
    CHECK(cp.post_indicator[flat_index(1, 24, 3)] == 1.0);
  }
  SECTION("tau0 = M means no changepoint anywhere") {
    const ChangepointField cp = build_tau(static_cast<double>(m), VectorXd::Zero(4), m);
    CHECK((cp.tau.array() == static_cast<double>(m)).all());
    CHECK(cp.post_indicator.sum() == 0.0);
  }
  SECTION("negative delta rejected") {
    VectorXd delta(2);
    delta << 0.0, -0.5;
    CHECK_THROWS_AS(build_tau(10.0, delta, m), invalid_input);
    CHECK_THROWS_AS(build_tau(0.5, VectorXd::Zero(2), m), invalid_input);
  }
  SECTION("randomized invariants: capping, origin minimality, indicator consistency") {
    Rng rng(41);
    for (int rep = 0; rep < 100000; ++rep) {
      const int mm = 3 + rng.uniform_int(0, 12);
      const Index n = 2 + rng.uniform_int(0, 5);
      const double tau0 = rng.uniform(1.0, static_cast<double>(mm));
      VectorXd delta(n);
      for (Index i = 0; i < n; ++i) delta[i] = rng.uniform(0.0, 2.0 * mm);
      delta[0] = 0.0;
      const ChangepointField cp = build_tau(tau0, delta, mm);
      REQUIRE(cp.tau.minCoeff() == cp.tau[0]);
      REQUIRE(cp.tau.maxCoeff() <= static_cast<double>(mm));
      const Index spot = rng.uniform_int(0, static_cast<int>(n) - 1);
      const int t = 1 + rng.uniform_int(0, mm - 1);
      const bool ind = cp.post_indicator[flat_index(spot, t, n)] > 0.5;
      REQUIRE(ind == (static_cast<double>(t) > cp.tau[spot]));
    }
  }
  SECTION("monotone in delta") {
    Rng rng(43);
    for (int rep = 0; rep < 2000; ++rep) {
      const int mm = 12;
      VectorXd delta(4);
      for (Index i = 1; i < 4; ++i) delta[i] = rng.uniform(0.0, 20.0);
      delta[0] = 0.0;
      const double tau0 = rng.uniform(1.0, 12.0);
      const ChangepointField a = build_tau(tau0, delta, mm);
      VectorXd delta2 = delta;
      delta2[2] += rng.uniform(0.0, 5.0);
      const ChangepointField b = build_tau(tau0, delta2, mm);
      REQUIRE(b.tau[2] >= a.tau[2]);
    }
  }
}

TEST_CASE("design matrix of spatial lags") {
  SECTION("explicit offsets") {
    SpaceTimeGrid g;
    g.m = 5;
    g.metric = Metric::euclidean;
    g.locations = {Vector2d(3.0, -2.0), Vector2d(13.0, -7.0)};
    g.origin_index = 0;
    const MatrixXd x = design_matrix_X(g);
    CHECK(x.row(0).norm() == 0.0);
    CHECK(x(1, 0) == 10.0);
    CHECK(x(1, 1) == -5.0);
  }
  SECTION("centered 11x11 unit lattice spans {-5..5}^2") {
    SpaceTimeGrid g = make_lattice_grid(11, 1.0, 5);
    g.origin_index = 5 * 11 + 5;  // center
    const MatrixXd x = design_matrix_X(g);
    CHECK(x.col(0).minCoeff() == -5.0);
    CHECK(x.col(0).maxCoeff() == 5.0);
    CHECK(x.col(1).minCoeff() == -5.0);
    CHECK(x.col(1).maxCoeff() == 5.0);
    // every integer offset pair appears exactly once
    std::vector<int> seen(121, 0);
    for (Index i = 0; i < 121; ++i) {
      const int a = static_cast<int>(x(i, 0)) + 5, b = static_cast<int>(x(i, 1)) + 5;
      seen[a * 11 + b] += 1;
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
  }
}

TEST_CASE("mean surface") {
  const Index n = 3;
  const int m = 6;
  MeanParams mp;
  mp.alpha0 = 1.5;
  mp.gamma0R = VectorXd::Zero(n);
  mp.gamma1R = VectorXd::Zero(n);
  SECTION("no changepoints: constant alpha0") {
    mp.gamma0F = 7.0;
    const ChangepointField cp = build_tau(static_cast<double>(m), VectorXd::Zero(n), m);
    const VectorXd mu = mean_surface(mp, cp, n);
    CHECK((mu.array() == 1.5).all());
  }
  SECTION("pure mean shift step") {
    mp.gamma0F = 2.0;
    VectorXd delta(n);
    delta << 0.0, 1.0, 2.0;
    const ChangepointField cp = build_tau(2.0, delta, m);
    const VectorXd mu = mean_surface(mp, cp, n);
    for (Index i = 0; i < n; ++i)
      for (int t = 1; t <= m; ++t)
        CHECK(mu[flat_index(i, t, n)] == (static_cast<double>(t) > cp.tau[i] ? 3.5 : 1.5));
  }
  SECTION("matrix form equals pointwise evaluation") {
    Rng rng(47);
    for (int rep = 0; rep < 50; ++rep) {
      const Index nn = 2 + rng.uniform_int(0, 8);
      const int mm = 3 + rng.uniform_int(0, 9);
      MeanParams p;
      p.alpha0 = rng.normal();
      p.gamma0F = rng.normal();
      p.gamma1F = rng.normal();
      p.gamma0R = rng.normal_vector(nn);
      p.gamma1R = rng.normal_vector(nn);
      VectorXd delta(nn);
      for (Index i = 0; i < nn; ++i) delta[i] = rng.uniform(0.0, 1.5 * mm);
      delta[0] = 0.0;
      const ChangepointField cp = build_tau(rng.uniform(1.0, mm), delta, mm);
      const VectorXd a = mean_surface(p, cp, nn);
      const VectorXd b = pointwise_mean(p, cp, nn);
      REQUIRE((a - b).cwiseAbs().maxCoeff() == 0.0);
      // and the Z alpha + mu_R o 1+ composition agrees as well
      const MatrixXd z = build_Z(cp, nn);
      const Vector3d alpha(p.alpha0, p.gamma0F, p.gamma1F);
      const VectorXd c =
          z * alpha + mu_R_vector(p, cp, nn).cwiseProduct(cp.post_indicator);
      REQUIRE((a - c).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("conditional log likelihood") {
  const Index n = 3;
  const int m = 5;
  MeanParams mp;
  mp.alpha0 = 0.4;
  mp.gamma0F = 1.0;
  mp.gamma0R = VectorXd::Zero(n);
  mp.gamma1R = VectorXd::Zero(n);
  VectorXd delta(n);
  delta << 0.0, 1.0, 7.0;
  const ChangepointField cp = build_tau(2.0, delta, m);
  const VectorXd mu = mean_surface(mp, cp, n);
  CovarianceParams cov;
  cov.variance_mode = VarianceMode::equal;
  LatentState latent;
  Rng rng(53);
  latent.u = rng.normal_vector(n * m);
  latent.eps_gamma = VectorXd::Zero(n * m);

  SECTION("zero residual normalization") {
    cov.sigma1_sq = 0.8;
    cov.sigma2_sq = 0.8;
    const VectorXd y = mu + latent.u;
    const double ll = conditional_loglik(y, mu, latent, cov, cp);
    CHECK_THAT(ll, Catch::Matchers::WithinAbs(
                       -0.5 * n * m * std::log(2.0 * M_PI * 0.8), 1e-12));
    CovarianceParams cov2 = cov;
    cov2.sigma1_sq = 1.6;
    cov2.sigma2_sq = 1.6;
    const double ll2 = conditional_loglik(y, mu, latent, cov2, cp);
    CHECK_THAT(ll - ll2, Catch::Matchers::WithinAbs(0.5 * n * m * std::log(2.0), 1e-12));
  }
  SECTION("scalar summation oracle, all variance modes") {
    for (VarianceMode mode :
         {VarianceMode::equal, VarianceMode::increase, VarianceMode::decrease}) {
      CovarianceParams cv;
      cv.variance_mode = mode;
      cv.sigma1_sq = mode == VarianceMode::decrease ? 1.9 : 0.7;
      cv.sigma2_sq = mode == VarianceMode::decrease ? 0.7 : 1.9;
      cv.sigma_gamma_sq = 1.2;
      LatentState lat;
      lat.u = rng.normal_vector(n * m);
      lat.eps_gamma = rng.normal_vector(n * m);
      const VectorXd mask = active_mask(cp, mode, n);
      for (Index k = 0; k < n * m; ++k) lat.eps_gamma[k] *= mask[k];
      const VectorXd y = rng.normal_vector(n * m);
      double oracle = 0.0;
      const double narrow = mode == VarianceMode::decrease ? cv.sigma2_sq : cv.sigma1_sq;
      for (Index k = 0; k < n * m; ++k) {
        const double e = y[k] - mu[k] - lat.u[k] - lat.eps_gamma[k] * mask[k];
        oracle += -0.5 * std::log(2.0 * M_PI * narrow) - 0.5 * e * e / narrow;
      }
      CHECK_THAT(conditional_loglik(y, mu, lat, cv, cp),
                 Catch::Matchers::WithinAbs(oracle, 1e-10));
    }
  }
  SECTION("permutation invariance of the iid sum") {
    cov.sigma1_sq = 1.3;
    cov.sigma2_sq = 1.3;
    const VectorXd y = rng.normal_vector(n * m);
    const double base = conditional_loglik(y, mu, latent, cov, cp);
    std::vector<Index> perm(n * m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    VectorXd yp(n * m), mup(n * m);
    LatentState latp;
    latp.u.resize(n * m);
    latp.eps_gamma = VectorXd::Zero(n * m);
    for (Index k = 0; k < n * m; ++k) {
      yp[k] = y[perm[k]];
      mup[k] = mu[perm[k]];
      latp.u[k] = latent.u[perm[k]];
    }
    CHECK_THAT(conditional_loglik(yp, mup, latp, cov, cp),
               Catch::Matchers::WithinAbs(base, 1e-10));
  }
  SECTION("invalid variance") {
    cov.sigma1_sq = 0.0;
    cov.sigma2_sq = 0.0;
    CHECK_THROWS_AS(conditional_loglik(mu, mu, latent, cov, cp), invalid_parameter);
  }
}

TEST_CASE("integrated log likelihood") {
  Rng rng(59);
  const Index n = 3;
  const int m = 4;
  std::vector<Vector2d> pts;
  for (Index i = 0; i < n; ++i) pts.push_back(Vector2d(rng.uniform(0, 3), rng.uniform(0, 3)));
  const CorrelationMatrix rs = exp_correlation(spatial_distance_matrix(pts, Metric::euclidean), 0.9);
  const CorrelationMatrix rt = exp_correlation(temporal_distance_matrix(m), 0.6);
  const double s1 = 0.8;
  const VectorXd y = rng.normal_vector(n * m);
  const VectorXd mu = rng.normal_vector(n * m);

  SECTION("degenerate prior equals conditional with U=0") {
    KroneckerCovariance cov0 = make_kronecker_covariance(0.0, rt, rs);
    const double integ = integrated_loglik(y, mu, VectorXd::Zero(n * m), s1, cov0);
    VectorXd delta(n);
    delta << 0.0, 1.0, 2.0;
    const ChangepointField cp = build_tau(2.0, delta, m);
    CovarianceParams cv;
    cv.sigma1_sq = s1;
    cv.sigma2_sq = s1;
    LatentState lat;
    lat.u = VectorXd::Zero(n * m);
    lat.eps_gamma = VectorXd::Zero(n * m);
    CHECK_THAT(integ, Catch::Matchers::WithinAbs(conditional_loglik(y, mu, lat, cv, cp), 1e-10));
  }
  SECTION("zero residual") {
    KroneckerCovariance cov = make_kronecker_covariance(1.1, rt, rs);
    const double v = integrated_loglik(y, y, VectorXd::Zero(n * m), s1, cov);
    const double expected =
        -0.5 * kron_plus_diag_logdet(cov, s1) - 0.5 * n * m * std::log(2.0 * M_PI);
    CHECK_THAT(v, Catch::Matchers::WithinAbs(expected, 1e-12));
  }
  SECTION("dense multivariate normal oracle") {
    KroneckerCovariance cov = make_kronecker_covariance(1.1, rt, rs);
    const MatrixXd sigma =
        s1 * MatrixXd::Identity(n * m, n * m) + 1.1 * dense_kron(rt.R, rs.R);
    const VectorXd r = y - mu;
    const double quad = r.dot(sigma.ldlt().solve(r));
    const double logdet = std::log(sigma.determinant());
    const double oracle = -0.5 * logdet - 0.5 * quad - 0.5 * n * m * std::log(2.0 * M_PI);
    CHECK_THAT(integrated_loglik(y, mu, VectorXd::Zero(n * m), s1, cov),
               Catch::Matchers::WithinAbs(oracle, 1e-8));
  }
}

TEST_CASE("DIC arithmetic") {
  SECTION("point mass trace") {
    VectorXd d = VectorXd::Constant(7, 123.0);
    CHECK(dic(d, 123.0) == 123.0);
  }
  SECTION("two identical draws") {
    VectorXd d(2);
    d << 40.0, 40.0;
    CHECK(dic(d, 40.0) == 40.0);
  }
  SECTION("five draw arithmetic") {
    VectorXd d(5);
    d << 10.0, 12.0, 11.0, 14.0, 13.0;  // mean 12
    const double at_mean = 9.5;
    // DIC = Dbar + (Dbar - D(theta_bar)) = 12 + 2.5 = 14.5
    CHECK_THAT(dic(d, at_mean), Catch::Matchers::WithinAbs(14.5, 1e-12));
  }
  SECTION("empty trace") { CHECK_THROWS_AS(dic(VectorXd(), 0.0), invalid_input); }
}
