#include "stcp/kron.hpp"

#include <cmath>

namespace stcp {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kEigenFloor = 1e-12;
}  // namespace

double great_circle_distance(double lon_p, double lat_p, double lon_q, double lat_q,
                             double radius) {
  if (!std::isfinite(lon_p) || !std::isfinite(lat_p) || !std::isfinite(lon_q) ||
      !std::isfinite(lat_q))
    throw invalid_input("great_circle_distance: non-finite coordinates");
  if (lat_p < -90.0 || lat_p > 90.0 || lat_q < -90.0 || lat_q > 90.0)
    throw invalid_input("great_circle_distance: latitude outside [-90, 90]");
  const double deg = kPi / 180.0;
  const double phi1 = lat_p * deg, phi2 = lat_q * deg;
  const double dphi = (lat_q - lat_p) * deg, dlam = (lon_q - lon_p) * deg;
  const double s1 = std::sin(0.5 * dphi), s2 = std::sin(0.5 * dlam);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * radius * std::asin(std::min(1.0, std::sqrt(h)));
}

MatrixXd spatial_distance_matrix(const std::vector<Vector2d>& lonlat, Metric metric,
                                 double radius) {
  const Index n = static_cast<Index>(lonlat.size());
  MatrixXd d = MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      double v;
      if (metric == Metric::great_circle) {
        v = great_circle_distance(lonlat[i][0], lonlat[i][1], lonlat[j][0], lonlat[j][1], radius);
      } else {
        v = (lonlat[i] - lonlat[j]).norm();
      }
      d(i, j) = d(j, i) = v;
    }
  }
  return d;
}

MatrixXd temporal_distance_matrix(int m) {
  MatrixXd d(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) d(i, j) = std::abs(i - j);
  return d;
}

CorrelationMatrix exp_correlation(const MatrixXd& dist, double theta) {
  if (!(theta > 0.0)) throw invalid_parameter("exp_correlation: decay rate must be positive");
  CorrelationMatrix out;
  out.decay = theta;
  out.R = (-theta * dist.array()).exp().matrix();
  return out;
}

EigenFactorization eigen_factorization(const MatrixXd& symmetric) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetric);
  if (es.info() != Eigen::Success)
    throw numerical_failure("eigen_factorization: eigensolver failed");
  const Index n = symmetric.rows();
  EigenFactorization f;
  f.Q.resize(n, n);
  f.lambda.resize(n);
  // Eigen returns ascending order; store descending and clip tiny eigenvalues
  // so exponential kernels at small decay rates stay invertible.
  for (Index k = 0; k < n; ++k) {
    f.Q.col(k) = es.eigenvectors().col(n - 1 - k);
    f.lambda[k] = std::max(es.eigenvalues()[n - 1 - k], kEigenFloor);
  }
  return f;
}

VectorXd kron_matvec(const MatrixXd& a, const MatrixXd& b, const VectorXd& v) {
  const Index p = a.rows(), q = b.rows();
  if (a.cols() != p || b.cols() != q || v.size() != p * q)
    throw invalid_input("kron_matvec: dimension mismatch");
  Eigen::Map<const MatrixXd> vm(v.data(), q, p);
  MatrixXd res = b * vm * a.transpose();
  return Eigen::Map<VectorXd>(res.data(), p * q);
}

MatrixXd KroneckerCovariance::whiten(const VectorXd& v) const {
  Eigen::Map<const MatrixXd> vm(v.data(), n(), m());
  return spatial_eig.Q.transpose() * vm * temporal_eig.Q;
}

VectorXd KroneckerCovariance::unwhiten(const MatrixXd& coords) const {
  MatrixXd res = spatial_eig.Q * coords * temporal_eig.Q.transpose();
  return Eigen::Map<VectorXd>(res.data(), m() * n());
}

MatrixXd KroneckerCovariance::eigenvalue_products() const {
  return spatial_eig.lambda * temporal_eig.lambda.transpose();
}

KroneckerCovariance make_kronecker_covariance(double scale, CorrelationMatrix temporal,
                                              CorrelationMatrix spatial) {
  if (scale < 0.0) throw invalid_parameter("kronecker covariance: negative scale");
  KroneckerCovariance cov;
  cov.scale = scale;
  cov.set_temporal(std::move(temporal));
  cov.set_spatial(std::move(spatial));
  return cov;
}

VectorXd kron_plus_diag_solve(const KroneckerCovariance& cov, double c, const VectorXd& v) {
  if (v.size() != cov.m() * cov.n()) throw invalid_input("kron_plus_diag_solve: bad length");
  MatrixXd coords = cov.whiten(v);
  const MatrixXd den = (cov.scale * cov.eigenvalue_products()).array() + c;
  if ((den.array() <= 0.0).any())
    throw numerical_failure("kron_plus_diag_solve: singular system");
  coords.array() /= den.array();
  return cov.unwhiten(coords);
}

double kron_plus_diag_logdet(const KroneckerCovariance& cov, double c) {
  const MatrixXd den = (cov.scale * cov.eigenvalue_products()).array() + c;
  if ((den.array() <= 0.0).any())
    throw numerical_failure("kron_plus_diag_logdet: nonpositive eigenvalue term");
  return den.array().log().sum();
}

VectorXd sample_u_posterior(const KroneckerCovariance& cov, double sigma1_sq,
                            const VectorXd& residual, Rng& rng) {
  if (!(sigma1_sq > 0.0))
    throw invalid_parameter("sample_u_posterior: sigma1_sq must be positive");
  if (residual.size() != cov.m() * cov.n())
    throw invalid_input("sample_u_posterior: bad residual length");
  const MatrixXd prior_var = cov.scale * cov.eigenvalue_products();
  // per-coordinate posterior variance (1/sigma1^2 + 1/(scale lam_t lam_s))^-1
  const MatrixXd post_var =
      (1.0 / sigma1_sq + prior_var.array().inverse()).inverse().matrix();
  MatrixXd coords = cov.whiten(residual);
  coords = (post_var.array() * coords.array() / sigma1_sq).matrix();
  const Index n = cov.n(), m = cov.m();
  for (Index j = 0; j < m; ++j)
    for (Index i = 0; i < n; ++i) coords(i, j) += std::sqrt(post_var(i, j)) * rng.normal();
  return cov.unwhiten(coords);
}

}  // namespace stcp
