#pragma once

#include <vector>

#include "stcp/common.hpp"
#include "stcp/kron.hpp"

namespace stcp {

// N spatial locations x M time indices (1..M); fixes the vectorization order
// of all length-MN vectors (spatial index fastest).
struct SpaceTimeGrid {
  std::vector<Vector2d> locations;  // (lon, lat) degrees, or abstract coords
  int m = 0;                        // number of time points
  int origin_index = 0;             // s0
  Metric metric = Metric::euclidean;
  double radius = 1.0;  // great-circle radius (distances in radians when 1)

  Index n() const { return static_cast<Index>(locations.size()); }
  void validate() const;
};

SpaceTimeGrid make_lattice_grid(int side, double spacing, int m, int origin_index = 0);

// tau(s) = min(M, tau0 + delta(s)); tau(s) = M encodes "no changepoint".
struct ChangepointField {
  double tau0 = 1.0;
  VectorXd delta;           // >= 0, delta(origin) = 0
  VectorXd tau;             // derived, length N
  VectorXd post_indicator;  // MN 0/1 vector, 1 iff t > tau(s)
  VectorXi first_active;    // per-location first t with t > tau(s); M+1 if none
  int m = 0;

  bool detected(Index i) const { return tau[i] < static_cast<double>(m); }
};

ChangepointField build_tau(double tau0, const VectorXd& delta, int m);

struct MeanParams {
  double alpha0 = 0.0;
  double gamma0F = 0.0;  // fixed mean shift
  double gamma1F = 0.0;  // fixed post-change slope per time step
  VectorXd gamma0R;      // spatial random effects of the shift
  VectorXd gamma1R;      // spatial random effects of the slope
};

enum class VarianceMode { equal, increase, decrease };

struct CovarianceParams {
  double sigma1_sq = 1.0;
  double sigma2_sq = 1.0;
  double sigma_gamma_sq = 0.0;  // wide = narrow + sigma_gamma_sq
  double sigma_U_sq = 1.0;
  double phi_U = 1.0;  // temporal decay of U
  double psi_U = 1.0;  // spatial decay of U
  double sigma_Delta_sq = 1.0;
  double psi_Delta = 1.0;
  double sigma_g0_sq = 1.0;
  double psi_g0 = 1.0;
  double sigma_g1_sq = 1.0;
  double psi_g1 = 1.0;
  Vector2d beta = Vector2d::Zero();
  VarianceMode variance_mode = VarianceMode::equal;

  // variance of the narrow regime (the one carrying the iid likelihood)
  double narrow_variance() const {
    return variance_mode == VarianceMode::decrease ? sigma2_sq : sigma1_sq;
  }
  void validate() const;
};

struct LatentState {
  VectorXd u;          // MN space-time process
  VectorXd eps_gamma;  // MN; exactly 0 wherever the wide regime does not apply
};

// Design matrix of spatial lags to the origin; row i = (lon_i - lon_0, lat_i - lat_0).
MatrixXd design_matrix_X(const SpaceTimeGrid& grid);

// Mask selecting the indices where eps_gamma is active for the given mode:
// post-change for increase, pre-change for decrease, empty for equal.
VectorXd active_mask(const ChangepointField& cp, VarianceMode mode, Index n_loc);

// Z_tau = [1, 1+, (t - tau) o 1+], MN x 3.
MatrixXd build_Z(const ChangepointField& cp, Index n_loc);

// mu_R = gamma0R + gamma1R * (t - tau), unmasked (callers apply o 1+).
VectorXd mu_R_vector(const MeanParams& mp, const ChangepointField& cp, Index n_loc);

// mu_tau = Z alpha + mu_R o 1+.
VectorXd mean_surface(const MeanParams& mp, const ChangepointField& cp, Index n_loc);

// log N(y; mu_tau + U + eps_gamma o mask, narrow_variance * I)
double conditional_loglik(const VectorXd& y, const VectorXd& mu_tau, const LatentState& latent,
                          const CovarianceParams& cov, const ChangepointField& cp);

// log density of y given (mu_tau, U) with eps_gamma integrated out: per-index
// variance sigma1_sq before the changepoint and sigma2_sq after. This is the
// deviance used for DIC model comparison.
double two_regime_loglik(const VectorXd& y, const VectorXd& mu_tau, const VectorXd& u,
                         const CovarianceParams& cov, const ChangepointField& cp);

// log N(y; mu_tau + eps_term, sigma1_sq I + Sigma_U), via the Kronecker routines.
double integrated_loglik(const VectorXd& y, const VectorXd& mu_tau, const VectorXd& eps_term,
                         double sigma1_sq, const KroneckerCovariance& cov_u);

// DIC = Dbar + p_D with p_D = Dbar - D(theta_bar).
double dic(const VectorXd& deviances, double deviance_at_mean);

}  // namespace stcp
