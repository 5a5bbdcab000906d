#include "stcp/sampler.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace stcp {

namespace {

const boost::math::normal_distribution<double> kStdNormal;

double normal_cdf(double z) { return boost::math::cdf(kStdNormal, z); }
double normal_quantile(double p) { return boost::math::quantile(kStdNormal, p); }

double log_phi_interval(double mean, double sd, double lo, double hi) {
  const double a = normal_cdf((lo - mean) / sd);
  const double b = normal_cdf((hi - mean) / sd);
  return std::log(std::max(b - a, 1e-300));
}

double draw_truncated_normal(double mean, double sd, double lo, double hi, Rng& rng) {
  const double a = normal_cdf((lo - mean) / sd);
  const double b = normal_cdf((hi - mean) / sd);
  double u = a + rng.uniform() * (b - a);
  u = std::min(std::max(u, 1e-15), 1.0 - 1e-15);
  return mean + sd * normal_quantile(u);
}

// Inverse-CDF draw of InvGamma(shape, scale) truncated to (0, upper]. Works on
// the equivalent gamma precision scale; concentrates at the bound when the
// truncation probability underflows.
double truncated_inv_gamma(double shape, double scale, double upper, double floor_bound,
                           Rng& rng) {
  if (!(upper > 0.0)) {
    return std::min(rng.inv_gamma(shape, scale), floor_bound);
  }
  const double x0 = 1.0 / upper;  // precision lower bound
  const double survival = boost::math::gamma_q(shape, scale * x0);
  if (survival < 1e-280) return upper;
  const double q = std::max(rng.uniform() * survival, 1e-300);
  const double z = boost::math::gamma_q_inv(shape, q);
  return scale / z;  // 1 / (z / scale)
}

ChangepointField field_from_tau(const VectorXd& tau, int m) {
  ChangepointField cp;
  cp.m = m;
  cp.tau = tau;
  cp.tau0 = tau.minCoeff();
  cp.delta = tau.array() - cp.tau0;
  const Index n = tau.size();
  cp.first_active.resize(n);
  cp.post_indicator = VectorXd::Zero(n * m);
  for (Index i = 0; i < n; ++i) {
    const int fa =
        tau[i] >= static_cast<double>(m) ? m + 1 : static_cast<int>(std::floor(tau[i])) + 1;
    cp.first_active[i] = fa;
    for (int t = fa; t <= m; ++t) cp.post_indicator[flat_index(i, t, n)] = 1.0;
  }
  return cp;
}

}  // namespace

void Hyperparams::finalize(int m) {
  if (tau0_support.empty()) {
    tau0_support.resize(m);
    for (int k = 0; k < m; ++k) tau0_support[k] = k + 1;
  }
  bool has_m = false;
  for (int k : tau0_support) {
    if (k < 1 || k > m) throw invalid_input("hyperparams: tau0 support outside {1..M}");
    has_m = has_m || (k == m);
  }
  if (!has_m) throw invalid_input("hyperparams: tau0 support must include M");
  if (tau0_prior.size() == 0)
    tau0_prior = VectorXd::Constant(static_cast<Index>(tau0_support.size()),
                                    1.0 / static_cast<double>(tau0_support.size()));
  if (tau0_prior.size() != static_cast<Index>(tau0_support.size()))
    throw invalid_input("hyperparams: tau0 prior length mismatch");
  if ((tau0_prior.array() < 0.0).any() || std::abs(tau0_prior.sum() - 1.0) > 1e-8)
    throw invalid_input("hyperparams: tau0 prior must be a probability vector");
  auto check_pos = [](double v, const char* what) {
    if (!(v > 0.0)) throw invalid_input(std::string("hyperparams: ") + what + " must be positive");
  };
  check_pos(s_a_sq, "s_a_sq");
  check_pos(s_b_sq, "s_b_sq");
  for (double v : {a1, b1, a2, b2, a3, b3, a4, b4, a5, b5}) check_pos(v, "IG shape/scale");
  for (const DecayPrior* d : {&phi_U, &psi_U, &psi_Delta, &psi_g0, &psi_g1}) {
    if (!(d->lower > 0.0 && d->lower < d->upper))
      throw invalid_input("hyperparams: decay bounds need 0 < l < u");
    check_pos(d->proposal_sd, "decay proposal sd");
  }
}

void AdaptiveProposal::init(Index n, int batch, double init_log_sd) {
  log_sd = VectorXd::Constant(n, init_log_sd);
  batch_size = batch;
  batch_accepts = VectorXi::Zero(n);
  batch_index = 0;
}

void adapt_batch(AdaptiveProposal& ap) {
  ap.batch_index += 1;
  const double step = std::min(0.1, 1.0 / std::sqrt(static_cast<double>(ap.batch_index)));
  for (Index i = 0; i < ap.log_sd.size(); ++i) {
    const double rate = static_cast<double>(ap.batch_accepts[i]) / ap.batch_size;
    ap.log_sd[i] += rate > 0.44 ? step : -step;
  }
  ap.batch_accepts.setZero();
}

VectorXd draw_observation(const SamplerState& state, Index n_loc, Rng& rng) {
  const VectorXd mu = mean_surface(state.mean, state.cp, n_loc);
  VectorXd y = mu + state.latent.u;
  const double sd = std::sqrt(state.cov.narrow_variance());
  if (state.cov.variance_mode != VarianceMode::equal) {
    const VectorXd mask = active_mask(state.cp, state.cov.variance_mode, n_loc);
    y += state.latent.eps_gamma.cwiseProduct(mask);
  }
  for (Index k = 0; k < y.size(); ++k) y[k] += sd * rng.normal();
  return y;
}

int ChainTrace::tau_mode(Index i) const {
  std::vector<int> counts(m, 0);
  for (Index r = 0; r < rows(); ++r) {
    const double v = std::min(static_cast<double>(m), tau(r, i));
    int f = static_cast<int>(std::floor(v));
    f = std::min(std::max(f, 1), m);
    counts[f - 1] += 1;
  }
  int best = 1;
  for (int v = 2; v <= m; ++v)
    if (counts[v - 1] > counts[best - 1]) best = v;
  return best;
}

double ChainTrace::p_no_changepoint(Index i) const {
  double c = 0.0;
  for (Index r = 0; r < rows(); ++r)
    if (tau(r, i) >= static_cast<double>(m)) c += 1.0;
  return c / static_cast<double>(rows());
}

double dic(const ChainTrace& trace) { return dic(trace.deviance, trace.deviance_at_mean); }

double plugin_deviance(const ChainTrace& trace, const VectorXd& y, VarianceMode mode) {
  if (trace.rows() == 0) throw invalid_input("plugin_deviance: empty trace");
  const Index n = trace.n_loc;
  VectorXd tau_hat(n);
  for (Index i = 0; i < n; ++i) tau_hat[i] = static_cast<double>(trace.tau_mode(i));
  const ChangepointField cp_hat = field_from_tau(tau_hat, trace.m);
  MeanParams mp;
  mp.alpha0 = trace.alpha0.mean();
  mp.gamma0F = trace.gamma0F.mean();
  mp.gamma1F = trace.gamma1F.mean();
  mp.gamma0R = trace.gamma0R.colwise().mean().transpose();
  mp.gamma1R = trace.gamma1R.colwise().mean().transpose();
  CovarianceParams cov;
  cov.variance_mode = mode;
  cov.sigma1_sq = trace.sigma1_sq.mean();
  cov.sigma2_sq = trace.sigma2_sq.mean();
  cov.sigma_gamma_sq = trace.sigma_gamma_sq.mean();
  const VectorXd mu = mean_surface(mp, cp_hat, n);
  return -2.0 * two_regime_loglik(y, mu, trace.u_mean, cov, cp_hat);
}

ChainTrace merge_chains(const std::vector<ChainTrace>& chains, const VectorXd& y,
                        VarianceMode mode) {
  if (chains.empty()) throw invalid_input("merge_chains: no chains");
  Index total = 0;
  for (const auto& c : chains) total += c.rows();
  ChainTrace out = chains.front();
  out.tau0.resize(total);
  out.tau.resize(total, out.n_loc);
  out.alpha0.resize(total);
  out.gamma0F.resize(total);
  out.gamma1F.resize(total);
  out.gamma0R.resize(total, out.n_loc);
  out.gamma1R.resize(total, out.n_loc);
  out.beta.resize(total, 2);
  out.sigma1_sq.resize(total);
  out.sigma2_sq.resize(total);
  out.sigma_gamma_sq.resize(total);
  out.sigma_U_sq.resize(total);
  out.sigma_Delta_sq.resize(total);
  out.sigma_g0_sq.resize(total);
  out.sigma_g1_sq.resize(total);
  out.phi_U.resize(total);
  out.psi_U.resize(total);
  out.psi_Delta.resize(total);
  out.psi_g0.resize(total);
  out.psi_g1.resize(total);
  out.deviance.resize(total);
  out.u_mean = VectorXd::Zero(chains.front().u_mean.size());
  out.eps_mean = VectorXd::Zero(chains.front().eps_mean.size());
  Index row = 0;
  double wsum = 0.0;
  for (const auto& c : chains) {
    const Index r = c.rows();
    out.tau0.segment(row, r) = c.tau0;
    out.tau.middleRows(row, r) = c.tau;
    out.alpha0.segment(row, r) = c.alpha0;
    out.gamma0F.segment(row, r) = c.gamma0F;
    out.gamma1F.segment(row, r) = c.gamma1F;
    out.gamma0R.middleRows(row, r) = c.gamma0R;
    out.gamma1R.middleRows(row, r) = c.gamma1R;
    out.beta.middleRows(row, r) = c.beta;
    out.sigma1_sq.segment(row, r) = c.sigma1_sq;
    out.sigma2_sq.segment(row, r) = c.sigma2_sq;
    out.sigma_gamma_sq.segment(row, r) = c.sigma_gamma_sq;
    out.sigma_U_sq.segment(row, r) = c.sigma_U_sq;
    out.sigma_Delta_sq.segment(row, r) = c.sigma_Delta_sq;
    out.sigma_g0_sq.segment(row, r) = c.sigma_g0_sq;
    out.sigma_g1_sq.segment(row, r) = c.sigma_g1_sq;
    out.phi_U.segment(row, r) = c.phi_U;
    out.psi_U.segment(row, r) = c.psi_U;
    out.psi_Delta.segment(row, r) = c.psi_Delta;
    out.psi_g0.segment(row, r) = c.psi_g0;
    out.psi_g1.segment(row, r) = c.psi_g1;
    out.deviance.segment(row, r) = c.deviance;
    const double w = static_cast<double>(r);
    out.u_mean += w * c.u_mean;
    out.eps_mean += w * c.eps_mean;
    wsum += w;
    row += r;
  }
  out.u_mean /= wsum;
  out.eps_mean /= wsum;
  out.deviance_at_mean = plugin_deviance(out, y, mode);
  return out;
}

Chain::Chain(const SpaceTimeGrid& grid, VectorXd y, SamplerConfig cfg)
    : grid_(grid), y_(std::move(y)), cfg_(std::move(cfg)), rng_(cfg_.seed) {
  grid_.validate();
  const Index n = grid_.n();
  const int m = grid_.m;
  if (y_.size() != n * m) throw invalid_input("chain: observation length != M*N");
  if (!y_.allFinite()) throw invalid_input("chain: non-finite observations");
  cfg_.hyper.finalize(m);

  x_ = design_matrix_X(grid_);
  for (Index i = 0; i < n; ++i)
    if (i != grid_.origin_index) non_origin_.push_back(i);
  x_nonorigin_.resize(n - 1, 2);
  for (Index k = 0; k < n - 1; ++k) x_nonorigin_.row(k) = x_.row(non_origin_[k]);

  dist_s_ = spatial_distance_matrix(grid_.locations, grid_.metric, grid_.radius);
  dist_t_ = temporal_distance_matrix(m);
  dist_s_nonorigin_.resize(n - 1, n - 1);
  for (Index a = 0; a < n - 1; ++a)
    for (Index b = 0; b < n - 1; ++b) dist_s_nonorigin_(a, b) = dist_s_(non_origin_[a], non_origin_[b]);

  // default-constructed state; callers either run() (which initializes) or set_state()
  const auto& hp = cfg_.hyper;
  state_.cov.variance_mode = cfg_.variance_mode;
  state_.cov.phi_U = 0.5 * (hp.phi_U.lower + hp.phi_U.upper);
  state_.cov.psi_U = 0.5 * (hp.psi_U.lower + hp.psi_U.upper);
  state_.cov.psi_Delta = 0.5 * (hp.psi_Delta.lower + hp.psi_Delta.upper);
  state_.cov.psi_g0 = 0.5 * (hp.psi_g0.lower + hp.psi_g0.upper);
  state_.cov.psi_g1 = 0.5 * (hp.psi_g1.lower + hp.psi_g1.upper);
  state_.mean.gamma0R = VectorXd::Zero(n);
  state_.mean.gamma1R = VectorXd::Zero(n);
  state_.latent.u = VectorXd::Zero(n * m);
  state_.latent.eps_gamma = VectorXd::Zero(n * m);
  VectorXd delta0 = VectorXd::Ones(n);
  delta0[grid_.origin_index] = 0.0;
  state_.cp = build_tau(static_cast<double>(m), delta0, m);
  log_delta_ = VectorXd::Zero(n);
  adapt_delta_.init(n, cfg_.batch_size);
  adapt_g0_.init(n, cfg_.batch_size);
  adapt_g1_.init(n, cfg_.batch_size);
  sync_u_covariance();
  sync_prior_caches();
}

Chain::CorrCache Chain::make_cache(const MatrixXd& dist, double theta) const {
  CorrCache c;
  c.decay = theta;
  c.R = exp_correlation(dist, theta).R;
  Eigen::LLT<MatrixXd> llt(c.R);
  if (llt.info() != Eigen::Success) throw numerical_failure("correlation cache: LLT failed");
  c.Rinv = llt.solve(MatrixXd::Identity(c.R.rows(), c.R.cols()));
  c.logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return c;
}

void Chain::sync_u_covariance() {
  cov_u_ = make_kronecker_covariance(state_.cov.sigma_U_sq,
                                     exp_correlation(dist_t_, state_.cov.phi_U),
                                     exp_correlation(dist_s_, state_.cov.psi_U));
}

void Chain::sync_prior_caches() {
  delta_corr_ = make_cache(dist_s_nonorigin_, state_.cov.psi_Delta);
  g0_corr_ = make_cache(dist_s_, state_.cov.psi_g0);
  g1_corr_ = make_cache(dist_s_, state_.cov.psi_g1);
}

void Chain::set_state(SamplerState s) {
  state_ = std::move(s);
  const Index n = grid_.n();
  log_delta_ = VectorXd::Zero(n);
  for (Index i : non_origin_) log_delta_[i] = std::log(std::max(state_.cp.delta[i], 1e-300));
  sync_u_covariance();
  sync_prior_caches();
  enforce_eps_invariant();
}

void Chain::set_changepoint(double tau0, const VectorXd& delta) {
  state_.cp = build_tau(tau0, delta, grid_.m);
  for (Index i : non_origin_) log_delta_[i] = std::log(std::max(delta[i], 1e-300));
  enforce_eps_invariant();
}

void Chain::set_observations(VectorXd y) {
  if (y.size() != y_.size()) throw invalid_input("set_observations: length mismatch");
  y_ = std::move(y);
}

void Chain::enforce_eps_invariant() {
  if (cfg_.variance_mode == VarianceMode::equal) {
    state_.latent.eps_gamma.setZero();
  } else {
    const VectorXd mask = active_mask(state_.cp, cfg_.variance_mode, grid_.n());
    state_.latent.eps_gamma = state_.latent.eps_gamma.cwiseProduct(mask);
  }
}

double Chain::deviance() const {
  const VectorXd mu = mean_surface(state_.mean, state_.cp, grid_.n());
  return -2.0 * two_regime_loglik(y_, mu, state_.latent.u, state_.cov, state_.cp);
}

// residual of the integrated (U marginalized) system at a tau0 candidate,
// holding delta, alpha, random effects and eps_gamma fixed
void Chain::candidate_residual(double tau0_candidate, VectorXd& out) const {
  const Index n = grid_.n();
  const int m = grid_.m;
  const auto& mp = state_.mean;
  const bool dec = cfg_.variance_mode == VarianceMode::decrease;
  const bool unequal = cfg_.variance_mode != VarianceMode::equal;
  out.resize(n * m);
  for (Index i = 0; i < n; ++i) {
    const double tau_i = std::min(static_cast<double>(m), tau0_candidate + state_.cp.delta[i]);
    const int fa =
        tau_i >= static_cast<double>(m) ? m + 1 : static_cast<int>(std::floor(tau_i)) + 1;
    const double g0 = mp.gamma0F + mp.gamma0R[i];
    const double g1 = mp.gamma1F + mp.gamma1R[i];
    for (int t = 1; t <= m; ++t) {
      const Index idx = flat_index(i, t, n);
      double v = y_[idx] - mp.alpha0;
      if (t >= fa) v -= g0 + g1 * (static_cast<double>(t) - tau_i);
      if (unequal) {
        const bool active = dec ? (t < fa) : (t >= fa);
        if (active) v -= state_.latent.eps_gamma[idx];
      }
      out[idx] = v;
    }
  }
}

VectorXd Chain::tau0_log_weights() {
  const auto& support = cfg_.hyper.tau0_support;
  const double narrow = state_.cov.narrow_variance();
  const MatrixXd den = (cov_u_.scale * cov_u_.eigenvalue_products()).array() + narrow;
  VectorXd logw(static_cast<Index>(support.size()));
  VectorXd r;
  for (std::size_t k = 0; k < support.size(); ++k) {
    candidate_residual(static_cast<double>(support[k]), r);
    const MatrixXd coords = cov_u_.whiten(r);
    const double quad = (coords.array().square() / den.array()).sum();
    logw[static_cast<Index>(k)] =
        std::log(std::max(cfg_.hyper.tau0_prior[static_cast<Index>(k)], 1e-300)) - 0.5 * quad;
  }
  return logw;
}

void Chain::sample_tau0() {
  const VectorXd logw = tau0_log_weights();
  const int pick = rng_.categorical_from_log(logw);
  const double tau0 = static_cast<double>(cfg_.hyper.tau0_support[pick]);
  state_.cp = build_tau(tau0, state_.cp.delta, grid_.m);
  enforce_eps_invariant();
}

// residual over location i's time column for a hypothetical tau_i;
// subtracts eps_gamma under the mask implied by tau_i
void Chain::residual_column(Index i, double tau_i, bool subtract_u, VectorXd& col) const {
  const Index n = grid_.n();
  const int m = grid_.m;
  const auto& mp = state_.mean;
  const bool dec = cfg_.variance_mode == VarianceMode::decrease;
  const bool unequal = cfg_.variance_mode != VarianceMode::equal;
  const int fa =
      tau_i >= static_cast<double>(m) ? m + 1 : static_cast<int>(std::floor(tau_i)) + 1;
  const double g0 = mp.gamma0F + mp.gamma0R[i];
  const double g1 = mp.gamma1F + mp.gamma1R[i];
  col.resize(m);
  for (int t = 1; t <= m; ++t) {
    const Index idx = flat_index(i, t, n);
    double v = y_[idx] - mp.alpha0;
    if (t >= fa) v -= g0 + g1 * (static_cast<double>(t) - tau_i);
    if (subtract_u) v -= state_.latent.u[idx];
    if (unequal) {
      const bool active = dec ? (t < fa) : (t >= fa);
      if (active) v -= state_.latent.eps_gamma[idx];
    }
    col[t - 1] = v;
  }
}

void Chain::apply_delta_component(Index i, double new_log_delta) {
  log_delta_[i] = new_log_delta;
  VectorXd delta = state_.cp.delta;
  delta[i] = std::exp(new_log_delta);
  const double tau0 = state_.cp.tau0;
  const Index n = grid_.n();
  const int m = grid_.m;
  auto& cp = state_.cp;
  cp.delta[i] = delta[i];
  const double tau_i = std::min(static_cast<double>(m), tau0 + delta[i]);
  cp.tau[i] = tau_i;
  const int fa =
      tau_i >= static_cast<double>(m) ? m + 1 : static_cast<int>(std::floor(tau_i)) + 1;
  cp.first_active[i] = fa;
  for (int t = 1; t <= m; ++t) cp.post_indicator[flat_index(i, t, n)] = t >= fa ? 1.0 : 0.0;
  if (cfg_.variance_mode != VarianceMode::equal) {
    const bool dec = cfg_.variance_mode == VarianceMode::decrease;
    for (int t = 1; t <= m; ++t) {
      const bool active = dec ? (t < fa) : (t >= fa);
      if (!active) state_.latent.eps_gamma[flat_index(i, t, n)] = 0.0;
    }
  }
}

void Chain::mh_update_delta() {
  const Index n = grid_.n();
  const int m = grid_.m;
  const double narrow = state_.cov.narrow_variance();
  const double sigma_d = state_.cov.sigma_Delta_sq;
  const bool integrated = cfg_.delta_update == DeltaUpdate::integrated;

  // prior working vector: Rinv (log_delta - X beta) over the non-origin set
  VectorXd vprior(n - 1);
  for (Index k = 0; k < n - 1; ++k)
    vprior[k] = log_delta_[non_origin_[k]] - x_nonorigin_.row(k).dot(state_.cov.beta);
  VectorXd pw = delta_corr_.Rinv * vprior;

  // whitened residual bookkeeping for the integrated data term
  MatrixXd rw, rww, den;
  VectorXd rc;
  if (integrated) {
    VectorXd r;
    candidate_residual(state_.cp.tau0, r);
    den = ((cov_u_.scale * cov_u_.eigenvalue_products()).array() + narrow).matrix();
    rw = cov_u_.whiten(r);             // N x M coordinates
    rww = (rw.array() / den.array()).matrix();
  } else {
    rc = conditional_residual();
  }

  VectorXd col_old(m), col_new(m);
  for (Index k = 0; k < n - 1; ++k) {
    const Index i = non_origin_[k];
    const double sd = std::exp(adapt_delta_.log_sd[i]);
    const double cur = log_delta_[i];
    const double prop = cur + sd * rng_.normal();
    const double d = prop - cur;

    // log-normal prior term (difference of quadratic forms, rank-one update)
    const double dq_prior = 2.0 * d * pw[k] + d * d * delta_corr_.Rinv(k, k);
    double log_r = -0.5 * dq_prior / sigma_d;

    const double tau_old = state_.cp.tau[i];
    const double tau_new =
        std::min(static_cast<double>(m), state_.cp.tau0 + std::exp(prop));
    if (integrated) {
      residual_column(i, tau_old, false, col_old);
      residual_column(i, tau_new, false, col_new);
      const VectorXd u_t = cov_u_.temporal_eig.Q.transpose() * (col_new - col_old);
      const VectorXd a = cov_u_.spatial_eig.Q.row(i).transpose();
      const double cross = a.dot(rww * u_t);
      const VectorXd u_sq = u_t.array().square().matrix();
      const double self = a.array().square().matrix().dot(
          (den.array().inverse().matrix() * u_sq));
      log_r += -(cross + 0.5 * self);
      if (std::isfinite(log_r) && std::log(rng_.uniform()) < log_r) {
        apply_delta_component(i, prop);
        rw.noalias() += a * u_t.transpose();
        rww = (rw.array() / den.array()).matrix();
        pw.noalias() += d * delta_corr_.Rinv.col(k);
        adapt_delta_.record(i, true);
      } else {
        adapt_delta_.record(i, false);
      }
    } else {
      residual_column(i, tau_old, true, col_old);
      residual_column(i, tau_new, true, col_new);
      log_r += -0.5 * (col_new.squaredNorm() - col_old.squaredNorm()) / narrow;
      if (std::isfinite(log_r) && std::log(rng_.uniform()) < log_r) {
        apply_delta_component(i, prop);
        pw.noalias() += d * delta_corr_.Rinv.col(k);
        adapt_delta_.record(i, true);
      } else {
        adapt_delta_.record(i, false);
      }
    }
  }
}

VectorXd Chain::conditional_residual() const {
  const Index n = grid_.n();
  VectorXd r = y_ - mean_surface(state_.mean, state_.cp, n) - state_.latent.u;
  if (cfg_.variance_mode != VarianceMode::equal) {
    const VectorXd mask = active_mask(state_.cp, cfg_.variance_mode, n);
    r -= state_.latent.eps_gamma.cwiseProduct(mask);
  }
  return r;
}

VectorXd Chain::integrated_residual() const {
  VectorXd r;
  candidate_residual(state_.cp.tau0, r);
  return r;
}

void Chain::sample_alpha() {
  const Index n = grid_.n();
  const double narrow = state_.cov.narrow_variance();
  const MatrixXd den = ((cov_u_.scale * cov_u_.eigenvalue_products()).array() + narrow).matrix();
  const MatrixXd z = build_Z(state_.cp, n);
  VectorXd adj = y_ - mu_R_vector(state_.mean, state_.cp, n).cwiseProduct(state_.cp.post_indicator);
  if (cfg_.variance_mode != VarianceMode::equal) {
    const VectorXd mask = active_mask(state_.cp, cfg_.variance_mode, n);
    adj -= state_.latent.eps_gamma.cwiseProduct(mask);
  }
  MatrixXd wz[3];
  for (int c = 0; c < 3; ++c) wz[c] = cov_u_.whiten(z.col(c));
  const MatrixXd wadj = cov_u_.whiten(adj);
  Eigen::Matrix3d a;
  Eigen::Vector3d b;
  for (int c = 0; c < 3; ++c) {
    b[c] = (wz[c].array() * wadj.array() / den.array()).sum();
    for (int c2 = c; c2 < 3; ++c2) {
      a(c, c2) = (wz[c].array() * wz[c2].array() / den.array()).sum();
      a(c2, c) = a(c, c2);
    }
  }
  a += Eigen::Matrix3d::Identity() / cfg_.hyper.s_a_sq;
  Eigen::LLT<Eigen::Matrix3d> llt(a);
  if (llt.info() != Eigen::Success) throw numerical_failure("sample_alpha: singular 3x3 system");
  const Eigen::Vector3d mu = llt.solve(b);
  Eigen::Vector3d zdraw;
  for (int c = 0; c < 3; ++c) zdraw[c] = rng_.normal();
  const Eigen::Vector3d draw = mu + llt.matrixU().solve(zdraw);
  state_.mean.alpha0 = draw[0];
  state_.mean.gamma0F = draw[1];
  state_.mean.gamma1F = draw[2];
}

void Chain::sample_u() {
  const double narrow = state_.cov.narrow_variance();
  VectorXd r;
  candidate_residual(state_.cp.tau0, r);  // y - Z alpha - mu_R o 1+ - eps o mask
  state_.latent.u = sample_u_posterior(cov_u_, narrow, r, rng_);
}

void Chain::sample_eps_gamma() {
  if (cfg_.variance_mode == VarianceMode::equal) {
    state_.latent.eps_gamma.setZero();
    return;
  }
  const Index n = grid_.n();
  const double narrow = state_.cov.narrow_variance();
  const double sg = state_.cov.sigma_gamma_sq;
  const VectorXd mask = active_mask(state_.cp, cfg_.variance_mode, n);
  const VectorXd mu = mean_surface(state_.mean, state_.cp, n);
  const double var = 1.0 / (1.0 / narrow + 1.0 / sg);
  const double sd = std::sqrt(var);
  for (Index idx = 0; idx < y_.size(); ++idx) {
    if (mask[idx] > 0.5) {
      const double resid = y_[idx] - mu[idx] - state_.latent.u[idx];
      state_.latent.eps_gamma[idx] = var * resid / narrow + sd * rng_.normal();
    } else {
      state_.latent.eps_gamma[idx] = 0.0;
    }
  }
}

void Chain::gibbs_variances() {
  const Index n = grid_.n();
  const int m = grid_.m;
  const auto& hp = cfg_.hyper;
  const double mn = static_cast<double>(n * m);

  const VectorXd resid = conditional_residual();
  const double ss = resid.squaredNorm();
  const double narrow = rng_.inv_gamma(hp.a1 + 0.5 * mn, hp.b1 + 0.5 * ss);
  if (!(narrow > 0.0)) throw invalid_parameter("gibbs_variances: nonpositive draw");

  if (cfg_.variance_mode == VarianceMode::equal) {
    state_.cov.sigma1_sq = narrow;
    state_.cov.sigma2_sq = narrow;
  } else {
    const VectorXd mask = active_mask(state_.cp, cfg_.variance_mode, n);
    const double k_active = mask.sum();
    const double eps_ss = state_.latent.eps_gamma.squaredNorm();
    const double sg = rng_.inv_gamma(hp.a2 + 0.5 * k_active, hp.b2 + 0.5 * eps_ss);
    state_.cov.sigma_gamma_sq = sg;
    if (cfg_.variance_mode == VarianceMode::increase) {
      state_.cov.sigma1_sq = narrow;
      state_.cov.sigma2_sq = narrow + sg;
    } else {
      state_.cov.sigma2_sq = narrow;
      state_.cov.sigma1_sq = narrow + sg;
    }
  }

  // sigma_U_sq: quadratic form U' (Rt^-1 (x) Rs^-1) U in the joint eigenbasis
  const MatrixXd coords = cov_u_.whiten(state_.latent.u);
  const MatrixXd lam = cov_u_.eigenvalue_products();
  const double qu = (coords.array().square() / lam.array()).sum();
  state_.cov.sigma_U_sq = rng_.inv_gamma(hp.a3 + 0.5 * mn, hp.b3 + 0.5 * qu);
  cov_u_.scale = state_.cov.sigma_U_sq;

  // sigma_Delta_sq over the non-origin components
  VectorXd vprior(n - 1);
  for (Index k = 0; k < n - 1; ++k)
    vprior[k] = log_delta_[non_origin_[k]] - x_nonorigin_.row(k).dot(state_.cov.beta);
  const double qd = vprior.dot(delta_corr_.Rinv * vprior);
  state_.cov.sigma_Delta_sq =
      rng_.inv_gamma(hp.a4 + 0.5 * static_cast<double>(n - 1), hp.b4 + 0.5 * qd);
}

void Chain::gibbs_trunc_variances() {
  const Index n = grid_.n();
  const auto& hp = cfg_.hyper;
  const double shape = hp.a5 + 0.5 * static_cast<double>(n);
  {
    const double quad = state_.mean.gamma0R.dot(g0_corr_.Rinv * state_.mean.gamma0R);
    const double bound = state_.mean.gamma0F * state_.mean.gamma0F / 9.0;
    state_.cov.sigma_g0_sq = truncated_inv_gamma(shape, hp.b5 + 0.5 * quad, bound,
                                                 hp.trunc_sigma_floor, rng_);
  }
  {
    const double quad = state_.mean.gamma1R.dot(g1_corr_.Rinv * state_.mean.gamma1R);
    const double bound = state_.mean.gamma1F * state_.mean.gamma1F / 9.0;
    state_.cov.sigma_g1_sq = truncated_inv_gamma(shape, hp.b5 + 0.5 * quad, bound,
                                                 hp.trunc_sigma_floor, rng_);
  }
}

void Chain::gibbs_beta() {
  if (cfg_.pin_beta) {
    state_.cov.beta.setZero();
    return;
  }
  const Index n = grid_.n();
  VectorXd logd(n - 1);
  for (Index k = 0; k < n - 1; ++k) logd[k] = log_delta_[non_origin_[k]];
  const MatrixXd rx = delta_corr_.Rinv * x_nonorigin_;
  Eigen::Matrix2d a = (x_nonorigin_.transpose() * rx) / state_.cov.sigma_Delta_sq;
  a += Eigen::Matrix2d::Identity() / cfg_.hyper.s_b_sq;
  const Eigen::Vector2d b = (rx.transpose() * logd) / state_.cov.sigma_Delta_sq;
  Eigen::LLT<Eigen::Matrix2d> llt(a);
  if (llt.info() != Eigen::Success) throw numerical_failure("gibbs_beta: singular 2x2 system");
  Eigen::Vector2d zdraw(rng_.normal(), rng_.normal());
  state_.cov.beta = llt.solve(b) + llt.matrixU().solve(zdraw);
}

double Chain::decay_mh_step(DecayPrior prior, double current, double log_target_cur,
                            const std::function<double(double)>& log_target, bool& accepted) {
  accepted = false;
  const double prop = draw_truncated_normal(current, prior.proposal_sd, prior.lower, prior.upper, rng_);
  if (!(prop > prior.lower && prop < prior.upper)) return current;  // auto-reject at the edge
  double log_r = log_target(prop) - log_target_cur;
  log_r += log_phi_interval(current, prior.proposal_sd, prior.lower, prior.upper) -
           log_phi_interval(prop, prior.proposal_sd, prior.lower, prior.upper);
  if (std::isfinite(log_r) && std::log(rng_.uniform()) < log_r) {
    accepted = true;
    return prop;
  }
  return current;
}

void Chain::mh_update_ranges() {
  const Index n = grid_.n();
  const int m = grid_.m;
  const auto& hp = cfg_.hyper;
  Eigen::Map<const MatrixXd> u_mat(state_.latent.u.data(), n, m);

  // phi_U: temporal decay; |R|^{-N/2} and U'(Rt^-1 (x) Rs^-1)U
  {
    Eigen::LLT<MatrixXd> llt_s(cov_u_.spatial.R);
    const MatrixXd bs = llt_s.solve(u_mat);  // Rs^-1 V
    auto log_target = [&](double theta) {
      const MatrixXd rt = exp_correlation(dist_t_, theta).R;
      Eigen::LLT<MatrixXd> llt(rt);
      if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      const MatrixXd vt = llt.solve(u_mat.transpose()).transpose();  // V Rt^-1
      const double quad = (bs.array() * vt.array()).sum();
      return -0.5 * static_cast<double>(n) * logdet -
             0.5 * quad / state_.cov.sigma_U_sq;
    };
    bool acc = false;
    const double cur = state_.cov.phi_U;
    const double next = decay_mh_step(hp.phi_U, cur, log_target(cur), log_target, acc);
    if (acc) {
      state_.cov.phi_U = next;
      cov_u_.set_temporal(exp_correlation(dist_t_, next));
    }
  }
  // psi_U: spatial decay; |R|^{-M/2}
  {
    Eigen::LLT<MatrixXd> llt_t(cov_u_.temporal.R);
    const MatrixXd vt = llt_t.solve(u_mat.transpose()).transpose();  // V Rt^-1
    auto log_target = [&](double theta) {
      const MatrixXd rs = exp_correlation(dist_s_, theta).R;
      Eigen::LLT<MatrixXd> llt(rs);
      if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      const MatrixXd bs = llt.solve(u_mat);
      const double quad = (bs.array() * vt.array()).sum();
      return -0.5 * static_cast<double>(m) * logdet -
             0.5 * quad / state_.cov.sigma_U_sq;
    };
    bool acc = false;
    const double cur = state_.cov.psi_U;
    const double next = decay_mh_step(hp.psi_U, cur, log_target(cur), log_target, acc);
    if (acc) {
      state_.cov.psi_U = next;
      cov_u_.set_spatial(exp_correlation(dist_s_, next));
    }
  }
  // psi_Delta on the non-origin field
  {
    VectorXd vprior(n - 1);
    for (Index k = 0; k < n - 1; ++k)
      vprior[k] = log_delta_[non_origin_[k]] - x_nonorigin_.row(k).dot(state_.cov.beta);
    auto log_target = [&](double theta) {
      const MatrixXd r = exp_correlation(dist_s_nonorigin_, theta).R;
      Eigen::LLT<MatrixXd> llt(r);
      if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      const double quad = vprior.dot(llt.solve(vprior));
      return -0.5 * logdet - 0.5 * quad / state_.cov.sigma_Delta_sq;
    };
    bool acc = false;
    const double cur = state_.cov.psi_Delta;
    const double next = decay_mh_step(hp.psi_Delta, cur, log_target(cur), log_target, acc);
    if (acc) {
      state_.cov.psi_Delta = next;
      delta_corr_ = make_cache(dist_s_nonorigin_, next);
    }
  }
  if (!cfg_.sample_random_effects) return;
  // psi_g0 / psi_g1 with the gamma_iR Gaussian prior density
  for (int which = 0; which < 2; ++which) {
    const VectorXd& g = which == 0 ? state_.mean.gamma0R : state_.mean.gamma1R;
    const double scale = which == 0 ? state_.cov.sigma_g0_sq : state_.cov.sigma_g1_sq;
    const DecayPrior& pr = which == 0 ? hp.psi_g0 : hp.psi_g1;
    auto log_target = [&](double theta) {
      const MatrixXd r = exp_correlation(dist_s_, theta).R;
      Eigen::LLT<MatrixXd> llt(r);
      if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
      const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      const double quad = g.dot(llt.solve(g));
      return -0.5 * logdet - 0.5 * quad / scale;
    };
    bool acc = false;
    const double cur = which == 0 ? state_.cov.psi_g0 : state_.cov.psi_g1;
    const double next = decay_mh_step(pr, cur, log_target(cur), log_target, acc);
    if (acc) {
      if (which == 0) {
        state_.cov.psi_g0 = next;
        g0_corr_ = make_cache(dist_s_, next);
      } else {
        state_.cov.psi_g1 = next;
        g1_corr_ = make_cache(dist_s_, next);
      }
    }
  }
}

void Chain::mh_update_gamma0R() {
  const Index n = grid_.n();
  const double narrow = state_.cov.narrow_variance();
  VectorXd rc = conditional_residual();
  VectorXd w = g0_corr_.Rinv * state_.mean.gamma0R;
  for (Index i = 0; i < n; ++i) {
    const double sd = std::exp(adapt_g0_.log_sd[i]);
    const double d = sd * rng_.normal();
    const double dq_prior = 2.0 * d * w[i] + d * d * g0_corr_.Rinv(i, i);
    double log_r = -0.5 * dq_prior / state_.cov.sigma_g0_sq;
    double sum_r = 0.0;
    int n_active = 0;
    for (int t = state_.cp.first_active[i]; t <= grid_.m; ++t) {
      sum_r += rc[flat_index(i, t, n)];
      n_active += 1;
    }
    log_r += (2.0 * d * sum_r - static_cast<double>(n_active) * d * d) / (2.0 * narrow);
    if (std::isfinite(log_r) && std::log(rng_.uniform()) < log_r) {
      state_.mean.gamma0R[i] += d;
      for (int t = state_.cp.first_active[i]; t <= grid_.m; ++t) rc[flat_index(i, t, n)] -= d;
      w.noalias() += d * g0_corr_.Rinv.col(i);
      adapt_g0_.record(i, true);
    } else {
      adapt_g0_.record(i, false);
    }
  }
}

void Chain::mh_update_gamma1R() {
  const Index n = grid_.n();
  const double narrow = state_.cov.narrow_variance();
  VectorXd rc = conditional_residual();
  VectorXd w = g1_corr_.Rinv * state_.mean.gamma1R;
  for (Index i = 0; i < n; ++i) {
    const double sd = std::exp(adapt_g1_.log_sd[i]);
    const double d = sd * rng_.normal();
    const double dq_prior = 2.0 * d * w[i] + d * d * g1_corr_.Rinv(i, i);
    double log_r = -0.5 * dq_prior / state_.cov.sigma_g1_sq;
    double sum_rs = 0.0, sum_ss = 0.0;
    for (int t = state_.cp.first_active[i]; t <= grid_.m; ++t) {
      const double s = static_cast<double>(t) - state_.cp.tau[i];
      sum_rs += rc[flat_index(i, t, n)] * s;
      sum_ss += s * s;
    }
    log_r += (2.0 * d * sum_rs - d * d * sum_ss) / (2.0 * narrow);
    if (std::isfinite(log_r) && std::log(rng_.uniform()) < log_r) {
      state_.mean.gamma1R[i] += d;
      for (int t = state_.cp.first_active[i]; t <= grid_.m; ++t) {
        const double s = static_cast<double>(t) - state_.cp.tau[i];
        rc[flat_index(i, t, n)] -= d * s;
      }
      w.noalias() += d * g1_corr_.Rinv.col(i);
      adapt_g1_.record(i, true);
    } else {
      adapt_g1_.record(i, false);
    }
  }
}

void Chain::pcg_sweep() {
  // Step 1: changepoint block with U integrated out (tau0, then delta)
  sample_tau0();
  mh_update_delta();
  // Step 2: alpha with U integrated out
  sample_alpha();
  // Step 3: U
  sample_u();
  // Step 4: theta block (eps_gamma, variances, beta, decays, random effects)
  if (cfg_.variance_mode != VarianceMode::equal) sample_eps_gamma();
  gibbs_variances();
  if (cfg_.sample_random_effects) gibbs_trunc_variances();
  gibbs_beta();
  if (cfg_.sample_decays) mh_update_ranges();
  if (cfg_.sample_random_effects) {
    mh_update_gamma0R();
    mh_update_gamma1R();
  }
  sweep_count_ += 1;
  if (sweep_count_ % cfg_.batch_size == 0) {
    adapt_batch(adapt_delta_);
    if (cfg_.sample_random_effects) {
      adapt_batch(adapt_g0_);
      adapt_batch(adapt_g1_);
    }
  }
}

ChainTrace Chain::run() {
  if (cfg_.burn_in < 0 || cfg_.iterations <= cfg_.burn_in)
    throw invalid_input("run_chain: need iterations > burn_in >= 0");
  if (cfg_.thin < 1) throw invalid_input("run_chain: thin must be >= 1");
  const Index n = grid_.n();
  const int m = grid_.m;

  // Initialization: tau0 at the prior median of the support, delta from its
  // prior with beta = 0, alpha by least squares assuming no changepoint,
  // variances by method of moments, decays at bound midpoints.
  {
    const auto& hp = cfg_.hyper;
    double acc = 0.0;
    int tau0_init = hp.tau0_support.back();
    for (std::size_t k = 0; k < hp.tau0_support.size(); ++k) {
      acc += hp.tau0_prior[static_cast<Index>(k)];
      if (acc >= 0.5) {
        tau0_init = hp.tau0_support[k];
        break;
      }
    }
    const double var_y = (y_.array() - y_.mean()).square().sum() /
                         std::max<double>(1.0, static_cast<double>(y_.size() - 1));
    const double v = std::max(var_y, 1e-4);
    state_.cov.sigma1_sq = 0.5 * v;
    state_.cov.sigma2_sq = 0.5 * v;
    state_.cov.sigma_U_sq = 0.5 * v;
    state_.cov.sigma_Delta_sq = 1.0;
    state_.cov.sigma_g0_sq = 0.01;
    state_.cov.sigma_g1_sq = 0.01;
    if (cfg_.variance_mode == VarianceMode::increase) {
      state_.cov.sigma_gamma_sq = 0.25 * v;
      state_.cov.sigma2_sq = state_.cov.sigma1_sq + state_.cov.sigma_gamma_sq;
    } else if (cfg_.variance_mode == VarianceMode::decrease) {
      state_.cov.sigma_gamma_sq = 0.25 * v;
      state_.cov.sigma1_sq = state_.cov.sigma2_sq + state_.cov.sigma_gamma_sq;
    }
    state_.cov.beta.setZero();
    state_.mean.alpha0 = y_.mean();
    state_.mean.gamma0F = 0.0;
    state_.mean.gamma1F = 0.0;
    state_.mean.gamma0R.setZero();
    state_.mean.gamma1R.setZero();
    state_.latent.u.setZero();
    state_.latent.eps_gamma.setZero();
    sync_u_covariance();
    sync_prior_caches();
    // delta from the prior (beta = 0)
    Eigen::LLT<MatrixXd> llt(state_.cov.sigma_Delta_sq * delta_corr_.R);
    const VectorXd zd = llt.matrixL() * rng_.normal_vector(n - 1);
    VectorXd delta = VectorXd::Zero(n);
    for (Index k = 0; k < n - 1; ++k)
      delta[non_origin_[k]] = std::exp(std::min(zd[k], 30.0));
    set_changepoint(static_cast<double>(tau0_init), delta);
  }

  const Index rows = (cfg_.iterations - cfg_.burn_in + cfg_.thin - 1) / cfg_.thin;
  ChainTrace tr;
  tr.m = m;
  tr.n_loc = n;
  tr.burn_in = cfg_.burn_in;
  tr.thin = cfg_.thin;
  tr.tau0.resize(rows);
  tr.tau.resize(rows, n);
  tr.alpha0.resize(rows);
  tr.gamma0F.resize(rows);
  tr.gamma1F.resize(rows);
  tr.gamma0R.resize(rows, n);
  tr.gamma1R.resize(rows, n);
  tr.beta.resize(rows, 2);
  tr.sigma1_sq.resize(rows);
  tr.sigma2_sq.resize(rows);
  tr.sigma_gamma_sq.resize(rows);
  tr.sigma_U_sq.resize(rows);
  tr.sigma_Delta_sq.resize(rows);
  tr.sigma_g0_sq.resize(rows);
  tr.sigma_g1_sq.resize(rows);
  tr.phi_U.resize(rows);
  tr.psi_U.resize(rows);
  tr.psi_Delta.resize(rows);
  tr.psi_g0.resize(rows);
  tr.psi_g1.resize(rows);
  tr.deviance.resize(rows);

  // running means of the latent fields for the plug-in deviance
  VectorXd u_acc = VectorXd::Zero(n * m), eps_acc = VectorXd::Zero(n * m);

  Index row = 0;
  for (int it = 1; it <= cfg_.iterations; ++it) {
    pcg_sweep();
    if (it % 64 == 0) {
      const bool ok = state_.latent.u.allFinite() && state_.cp.tau.allFinite() &&
                      std::isfinite(state_.mean.alpha0) &&
                      std::isfinite(state_.cov.sigma1_sq);
      if (!ok)
        throw numerical_failure("run_chain: non-finite state at iteration " + std::to_string(it));
    }
    if (it <= cfg_.burn_in || (it - cfg_.burn_in - 1) % cfg_.thin != 0) continue;
    tr.tau0[row] = state_.cp.tau0;
    tr.tau.row(row) = state_.cp.tau.transpose();
    tr.alpha0[row] = state_.mean.alpha0;
    tr.gamma0F[row] = state_.mean.gamma0F;
    tr.gamma1F[row] = state_.mean.gamma1F;
    tr.gamma0R.row(row) = state_.mean.gamma0R.transpose();
    tr.gamma1R.row(row) = state_.mean.gamma1R.transpose();
    tr.beta.row(row) = state_.cov.beta.transpose();
    tr.sigma1_sq[row] = state_.cov.sigma1_sq;
    tr.sigma2_sq[row] = state_.cov.sigma2_sq;
    tr.sigma_gamma_sq[row] = state_.cov.sigma_gamma_sq;
    tr.sigma_U_sq[row] = state_.cov.sigma_U_sq;
    tr.sigma_Delta_sq[row] = state_.cov.sigma_Delta_sq;
    tr.sigma_g0_sq[row] = state_.cov.sigma_g0_sq;
    tr.sigma_g1_sq[row] = state_.cov.sigma_g1_sq;
    tr.phi_U[row] = state_.cov.phi_U;
    tr.psi_U[row] = state_.cov.psi_U;
    tr.psi_Delta[row] = state_.cov.psi_Delta;
    tr.psi_g0[row] = state_.cov.psi_g0;
    tr.psi_g1[row] = state_.cov.psi_g1;
    tr.deviance[row] = deviance();
    u_acc += state_.latent.u;
    eps_acc += state_.latent.eps_gamma;
    row += 1;
  }

  const double nr = static_cast<double>(rows);
  tr.u_mean = u_acc / nr;
  tr.eps_mean = eps_acc / nr;
  tr.deviance_at_mean = plugin_deviance(tr, y_, cfg_.variance_mode);
  return tr;
}

ChainTrace run_chain(const VectorXd& y, const SpaceTimeGrid& grid, const SamplerConfig& cfg) {
  Chain chain(grid, y, cfg);
  return chain.run();
}

}  // namespace stcp
