#include "stcp/model.hpp"

#include <cmath>

namespace stcp {

void SpaceTimeGrid::validate() const {
  if (n() < 2) throw invalid_input("grid: need at least 2 locations");
  if (m < 3) throw invalid_input("grid: need at least 3 time points");
  if (origin_index < 0 || origin_index >= n()) throw invalid_input("grid: origin out of range");
  for (Index i = 0; i < n(); ++i)
    for (Index j = i + 1; j < n(); ++j)
      if (locations[i] == locations[j]) throw invalid_input("grid: duplicate locations");
}

SpaceTimeGrid make_lattice_grid(int side, double spacing, int m, int origin_index) {
  SpaceTimeGrid g;
  g.m = m;
  g.metric = Metric::euclidean;
  g.origin_index = origin_index;
  g.locations.reserve(static_cast<std::size_t>(side) * side);
  for (int x = 0; x < side; ++x)
    for (int y = 0; y < side; ++y)
      g.locations.push_back(Vector2d(x * spacing, y * spacing));
  g.validate();
  return g;
}

ChangepointField build_tau(double tau0, const VectorXd& delta, int m) {
  if ((delta.array() < 0.0).any()) throw invalid_input("build_tau: negative delta");
  if (!(tau0 >= 1.0 && tau0 <= static_cast<double>(m)))
    throw invalid_input("build_tau: tau0 outside [1, M]");
  ChangepointField cp;
  cp.tau0 = tau0;
  cp.delta = delta;
  cp.m = m;
  const Index n = delta.size();
  cp.tau = (tau0 + delta.array()).min(static_cast<double>(m)).matrix();
  cp.first_active.resize(n);
  cp.post_indicator = VectorXd::Zero(n * m);
  for (Index i = 0; i < n; ++i) {
    const int fa = cp.tau[i] >= static_cast<double>(m)
                       ? m + 1
                       : static_cast<int>(std::floor(cp.tau[i])) + 1;
    cp.first_active[i] = fa;
    for (int t = fa; t <= m; ++t) cp.post_indicator[flat_index(i, t, n)] = 1.0;
  }
  return cp;
}

void CovarianceParams::validate() const {
  auto pos = [](double v) { return v > 0.0 && std::isfinite(v); };
  if (!pos(sigma1_sq) || !pos(sigma2_sq) || !pos(sigma_U_sq) || !pos(sigma_Delta_sq) ||
      !pos(sigma_g0_sq) || !pos(sigma_g1_sq))
    throw invalid_parameter("covariance params: variances must be positive");
  if (!pos(phi_U) || !pos(psi_U) || !pos(psi_Delta) || !pos(psi_g0) || !pos(psi_g1))
    throw invalid_parameter("covariance params: decays must be positive");
  if (variance_mode == VarianceMode::increase && sigma_gamma_sq <= 0.0)
    throw invalid_parameter("covariance params: increase mode needs sigma_gamma_sq > 0");
  if (variance_mode == VarianceMode::decrease && sigma_gamma_sq <= 0.0)
    throw invalid_parameter("covariance params: decrease mode needs sigma_gamma_sq > 0");
}

MatrixXd design_matrix_X(const SpaceTimeGrid& grid) {
  const Index n = grid.n();
  MatrixXd x(n, 2);
  const Vector2d o = grid.locations[grid.origin_index];
  for (Index i = 0; i < n; ++i) x.row(i) = (grid.locations[i] - o).transpose();
  return x;
}

VectorXd active_mask(const ChangepointField& cp, VarianceMode mode, Index n_loc) {
  switch (mode) {
    case VarianceMode::increase:
      return cp.post_indicator;
    case VarianceMode::decrease:
      return VectorXd::Ones(n_loc * cp.m) - cp.post_indicator;
    case VarianceMode::equal:
    default:
      return VectorXd::Zero(n_loc * cp.m);
  }
}

MatrixXd build_Z(const ChangepointField& cp, Index n_loc) {
  const int m = cp.m;
  MatrixXd z = MatrixXd::Zero(n_loc * m, 3);
  z.col(0).setOnes();
  z.col(1) = cp.post_indicator;
  for (Index i = 0; i < n_loc; ++i)
    for (int t = cp.first_active[i]; t <= m; ++t)
      z(flat_index(i, t, n_loc), 2) = static_cast<double>(t) - cp.tau[i];
  return z;
}

VectorXd mu_R_vector(const MeanParams& mp, const ChangepointField& cp, Index n_loc) {
  const int m = cp.m;
  VectorXd out(n_loc * m);
  for (int t = 1; t <= m; ++t)
    for (Index i = 0; i < n_loc; ++i)
      out[flat_index(i, t, n_loc)] =
          mp.gamma0R[i] + mp.gamma1R[i] * (static_cast<double>(t) - cp.tau[i]);
  return out;
}

VectorXd mean_surface(const MeanParams& mp, const ChangepointField& cp, Index n_loc) {
  const int m = cp.m;
  VectorXd mu = VectorXd::Constant(n_loc * m, mp.alpha0);
  const bool has_re = mp.gamma0R.size() == n_loc;
  for (Index i = 0; i < n_loc; ++i) {
    const double g0 = mp.gamma0F + (has_re ? mp.gamma0R[i] : 0.0);
    const double g1 = mp.gamma1F + (has_re ? mp.gamma1R[i] : 0.0);
    for (int t = cp.first_active[i]; t <= m; ++t)
      mu[flat_index(i, t, n_loc)] += g0 + g1 * (static_cast<double>(t) - cp.tau[i]);
  }
  return mu;
}

double conditional_loglik(const VectorXd& y, const VectorXd& mu_tau, const LatentState& latent,
                          const CovarianceParams& cov, const ChangepointField& cp) {
  const double s2 = cov.narrow_variance();
  if (!(s2 > 0.0)) throw invalid_parameter("conditional_loglik: nonpositive variance");
  const Index mn = y.size();
  const Index n_loc = mn / cp.m;
  VectorXd resid = y - mu_tau - latent.u;
  if (cov.variance_mode != VarianceMode::equal) {
    const VectorXd mask = active_mask(cp, cov.variance_mode, n_loc);
    resid -= latent.eps_gamma.cwiseProduct(mask);
  }
  return -0.5 * static_cast<double>(mn) * std::log(2.0 * M_PI * s2) -
         0.5 * resid.squaredNorm() / s2;
}

double two_regime_loglik(const VectorXd& y, const VectorXd& mu_tau, const VectorXd& u,
                         const CovarianceParams& cov, const ChangepointField& cp) {
  if (!(cov.sigma1_sq > 0.0 && cov.sigma2_sq > 0.0))
    throw invalid_parameter("two_regime_loglik: nonpositive variance");
  const Index mn = y.size();
  const Index n_loc = mn / cp.m;
  double ll = 0.0;
  for (Index i = 0; i < n_loc; ++i) {
    for (int t = 1; t <= cp.m; ++t) {
      const Index idx = flat_index(i, t, n_loc);
      const double s2 = t >= cp.first_active[i] ? cov.sigma2_sq : cov.sigma1_sq;
      const double e = y[idx] - mu_tau[idx] - u[idx];
      ll += -0.5 * std::log(2.0 * M_PI * s2) - 0.5 * e * e / s2;
    }
  }
  return ll;
}

double integrated_loglik(const VectorXd& y, const VectorXd& mu_tau, const VectorXd& eps_term,
                         double sigma1_sq, const KroneckerCovariance& cov_u) {
  const VectorXd r = y - mu_tau - eps_term;
  const double quad = r.dot(kron_plus_diag_solve(cov_u, sigma1_sq, r));
  const double logdet = kron_plus_diag_logdet(cov_u, sigma1_sq);
  return -0.5 * logdet - 0.5 * quad -
         0.5 * static_cast<double>(r.size()) * std::log(2.0 * M_PI);
}

double dic(const VectorXd& deviances, double deviance_at_mean) {
  if (deviances.size() == 0) throw invalid_input("dic: empty trace");
  const double dbar = deviances.mean();
  return 2.0 * dbar - deviance_at_mean;
}

}  // namespace stcp
