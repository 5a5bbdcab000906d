#pragma once

#include <vector>

#include "stcp/common.hpp"
#include "stcp/rng.hpp"

namespace stcp {

enum class Metric { great_circle, euclidean };

// Great-circle distance (haversine) in units of radius; lon/lat in degrees.
double great_circle_distance(double lon_p, double lat_p, double lon_q, double lat_q,
                             double radius = 1.0);

// Pairwise distances; symmetric with zero diagonal.
MatrixXd spatial_distance_matrix(const std::vector<Vector2d>& lonlat, Metric metric,
                                 double radius = 1.0);
MatrixXd temporal_distance_matrix(int m);

struct CorrelationMatrix {
  MatrixXd R;
  double decay = 0.0;
  Index size() const { return R.rows(); }
};

// Entry-wise exp(-theta * d); theta must be positive.
CorrelationMatrix exp_correlation(const MatrixXd& dist, double theta);

struct EigenFactorization {
  MatrixXd Q;       // orthogonal, columns are eigenvectors
  VectorXd lambda;  // descending, clipped below at 1e-12
};

EigenFactorization eigen_factorization(const MatrixXd& symmetric);

// (A (x) B) v for A pxp temporal, B qxq spatial, v of length pq in
// spatial-fastest order.
VectorXd kron_matvec(const MatrixXd& a, const MatrixXd& b, const VectorXd& v);

// Sigma_U = scale * (temporal (x) spatial), with cached eigendecompositions.
struct KroneckerCovariance {
  double scale = 1.0;
  CorrelationMatrix temporal;  // M x M, decay phi_U
  CorrelationMatrix spatial;   // N x N, decay psi_U
  EigenFactorization temporal_eig;
  EigenFactorization spatial_eig;

  Index m() const { return temporal.size(); }
  Index n() const { return spatial.size(); }

  void set_temporal(CorrelationMatrix r) {
    temporal = std::move(r);
    temporal_eig = eigen_factorization(temporal.R);
  }
  void set_spatial(CorrelationMatrix r) {
    spatial = std::move(r);
    spatial_eig = eigen_factorization(spatial.R);
  }

  // (Qt (x) Qs)^T v as an N x M coordinate matrix, and its inverse map.
  MatrixXd whiten(const VectorXd& v) const;
  VectorXd unwhiten(const MatrixXd& coords) const;

  // outer(lambda_s, lambda_t): entry (i,j) = lambda_s[i] * lambda_t[j]
  MatrixXd eigenvalue_products() const;
};

KroneckerCovariance make_kronecker_covariance(double scale, CorrelationMatrix temporal,
                                              CorrelationMatrix spatial);

// x solving (c I + Sigma_U) x = v via the joint eigenbasis.
VectorXd kron_plus_diag_solve(const KroneckerCovariance& cov, double c, const VectorXd& v);

// log|c I + Sigma_U| = sum_ij log(c + scale * lambda_t_j * lambda_s_i)
double kron_plus_diag_logdet(const KroneckerCovariance& cov, double c);

// Exact draw from N(mu, P^-1) with P = I/sigma1_sq + Sigma_U^-1 and
// mu = P^-1 residual / sigma1_sq, realized in the joint eigenbasis.
VectorXd sample_u_posterior(const KroneckerCovariance& cov, double sigma1_sq,
                            const VectorXd& residual, Rng& rng);

}  // namespace stcp
