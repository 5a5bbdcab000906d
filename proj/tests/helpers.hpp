#pragma once

#include <cmath>
#include <vector>

#include "stcp/common.hpp"

namespace stcp::testing {

inline MatrixXd dense_kron(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// batch-means standard error for autocorrelated chains
inline double batch_se(const std::vector<double>& x, int n_batches = 50) {
  const std::size_t n = x.size() / n_batches * n_batches;
  const std::size_t bs = n / n_batches;
  double grand = 0.0;
  std::vector<double> means(n_batches, 0.0);
  for (std::size_t b = 0; b < static_cast<std::size_t>(n_batches); ++b) {
    for (std::size_t k = 0; k < bs; ++k) means[b] += x[b * bs + k];
    means[b] /= static_cast<double>(bs);
    grand += means[b];
  }
  grand /= n_batches;
  double var = 0.0;
  for (double m : means) var += (m - grand) * (m - grand);
  var /= (n_batches - 1);
  return std::sqrt(var / n_batches);
}

inline double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// two-sample Kolmogorov-Smirnov p-value (asymptotic)
inline double ks_two_sample_p(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  const double lambda = (ne + 0.12 + 0.11 / ne) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k)
    p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::min(1.0, std::max(0.0, p));
}

}  // namespace stcp::testing
