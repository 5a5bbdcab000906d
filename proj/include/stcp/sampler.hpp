#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "stcp/common.hpp"
#include "stcp/kron.hpp"
#include "stcp/model.hpp"
#include "stcp/rng.hpp"

namespace stcp {

struct DecayPrior {
  double lower = 0.01;
  double upper = 10.0;
  double proposal_sd = 0.5;  // fixed truncated-normal proposal scale
};

struct Hyperparams {
  double s_a_sq = 100.0;  // prior variance for alpha components
  double s_b_sq = 100.0;  // prior variance for beta components
  // inverse-gamma shape/scale pairs
  double a1 = 2.0, b1 = 1.0;  // narrow measurement variance
  double a2 = 2.0, b2 = 1.0;  // sigma_gamma_sq
  double a3 = 2.0, b3 = 1.0;  // sigma_U_sq
  double a4 = 2.0, b4 = 1.0;  // sigma_Delta_sq
  double a5 = 2.0, b5 = 1.0;  // truncated IG for sigma_g0_sq / sigma_g1_sq
  DecayPrior phi_U, psi_U, psi_Delta, psi_g0, psi_g1;
  std::vector<int> tau0_support;  // subset of {1..M}; must contain M; empty = all
  VectorXd tau0_prior;            // probabilities over the support; empty = uniform
  double trunc_sigma_floor = 1e-4;

  void finalize(int m);  // fills defaults, checks invariants
};

// Component-wise adaptive proposal state (batch scheme targeting 0.44).
struct AdaptiveProposal {
  VectorXd log_sd;        // log proposal standard deviations
  int batch_size = 50;    // B
  VectorXi batch_accepts;
  int batch_index = 0;    // j, number of completed batches

  void init(Index n, int batch, double init_log_sd = 0.0);
  void record(Index i, bool accepted) {
    if (accepted) batch_accepts[i] += 1;
  }
};

// Applies one batch adjustment: log_sd += delta(j) when the batch acceptance
// rate exceeds 0.44, else -delta(j), with delta(j) = min(0.1, 1/sqrt(j)).
void adapt_batch(AdaptiveProposal& ap);

enum class DeltaUpdate {
  integrated,   // U integrated out of the data term (exact PCG; default)
  conditional,  // conditions on the current U draw
};

struct SamplerConfig {
  int iterations = 4000;
  int burn_in = 1000;
  int thin = 1;
  int batch_size = 50;
  VarianceMode variance_mode = VarianceMode::equal;
  bool pin_beta = false;
  bool sample_decays = true;
  bool sample_random_effects = true;
  DeltaUpdate delta_update = DeltaUpdate::integrated;
  std::uint64_t seed = 1;
  Hyperparams hyper;
};

struct SamplerState {
  MeanParams mean;
  CovarianceParams cov;
  ChangepointField cp;
  LatentState latent;
};

// Observation draw given the full latent state: y ~ N(mu_tau + U + eps o mask, narrow I).
VectorXd draw_observation(const SamplerState& state, Index n_loc, Rng& rng);

// Per-iteration posterior draws retained after burn-in/thinning.
struct ChainTrace {
  int m = 0;
  Index n_loc = 0;
  int burn_in = 0;
  int thin = 1;
  VectorXd tau0;
  MatrixXd tau;  // rows x N, continuous min(M, tau(s))
  VectorXd alpha0, gamma0F, gamma1F;
  MatrixXd gamma0R, gamma1R;  // rows x N
  MatrixXd beta;              // rows x 2
  VectorXd sigma1_sq, sigma2_sq, sigma_gamma_sq, sigma_U_sq, sigma_Delta_sq;
  VectorXd sigma_g0_sq, sigma_g1_sq;
  VectorXd phi_U, psi_U, psi_Delta, psi_g0, psi_g1;
  VectorXd deviance;
  double deviance_at_mean = 0.0;
  VectorXd u_mean, eps_mean;  // posterior means of the latent fields

  Index rows() const { return tau0.size(); }
  // posterior mode of floor(min(M, tau(s))); ties break to the smaller value
  int tau_mode(Index i) const;
  double p_no_changepoint(Index i) const;
};

double dic(const ChainTrace& trace);

// Deviance at the posterior means stored in the trace, with tau(s) plugged in
// at its floored posterior mode.
double plugin_deviance(const ChainTrace& trace, const VectorXd& y, VarianceMode mode);

// Concatenates chains (same model/dimensions) and refreshes deviance_at_mean.
ChainTrace merge_chains(const std::vector<ChainTrace>& chains, const VectorXd& y,
                        VarianceMode mode);

// One chain of the partially collapsed Gibbs sampler. Step order is fixed
// (tau0, delta | alpha | U | theta-block) and must not be permuted.
class Chain {
 public:
  Chain(const SpaceTimeGrid& grid, VectorXd y, SamplerConfig cfg);

  // individual sweep steps, exposed for targeted tests
  void sample_tau0();
  void mh_update_delta();
  void sample_alpha();
  void sample_u();
  void sample_eps_gamma();
  void gibbs_variances();
  void gibbs_trunc_variances();
  void gibbs_beta();
  void mh_update_ranges();
  void mh_update_gamma0R();
  void mh_update_gamma1R();

  void pcg_sweep();
  ChainTrace run();

  const SamplerState& state() const { return state_; }
  void set_state(SamplerState s);
  void set_changepoint(double tau0, const VectorXd& delta);
  void set_observations(VectorXd y);
  const VectorXd& observations() const { return y_; }
  double deviance() const;
  Rng& rng() { return rng_; }
  const SpaceTimeGrid& grid() const { return grid_; }
  const KroneckerCovariance& u_covariance() const { return cov_u_; }
  const AdaptiveProposal& delta_proposal() const { return adapt_delta_; }

  // log weights of the tau0 scan (tests compare to a dense oracle)
  VectorXd tau0_log_weights();

 private:
  struct CorrCache {
    double decay = 0.0;
    MatrixXd R;
    MatrixXd Rinv;
    double logdet = 0.0;
  };
  CorrCache make_cache(const MatrixXd& dist, double theta) const;

  void sync_u_covariance();
  void sync_prior_caches();
  void enforce_eps_invariant();
  void candidate_residual(double tau0_candidate, VectorXd& out) const;
  void residual_column(Index i, double tau_i, bool subtract_u, VectorXd& col) const;
  VectorXd conditional_residual() const;
  VectorXd integrated_residual() const;
  void apply_delta_component(Index i, double new_log_delta);
  double decay_mh_step(DecayPrior prior, double current, double log_target_cur,
                       const std::function<double(double)>& log_target, bool& accepted);

  SpaceTimeGrid grid_;
  VectorXd y_;
  SamplerConfig cfg_;
  Rng rng_;

  SamplerState state_;
  VectorXd log_delta_;  // log of delta; origin entry unused
  MatrixXd x_;          // N x 2 design matrix of lags
  MatrixXd x_nonorigin_;
  std::vector<Index> non_origin_;
  MatrixXd dist_s_, dist_t_, dist_s_nonorigin_;

  KroneckerCovariance cov_u_;
  CorrCache delta_corr_;  // on the (N-1) non-origin set
  CorrCache g0_corr_, g1_corr_;

  AdaptiveProposal adapt_delta_, adapt_g0_, adapt_g1_;
  long sweep_count_ = 0;
};

ChainTrace run_chain(const VectorXd& y, const SpaceTimeGrid& grid, const SamplerConfig& cfg);

}  // namespace stcp
