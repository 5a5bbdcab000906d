#pragma once

#include <cstdint>
#include <random>

#include "stcp/common.hpp"

namespace stcp {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seedable random stream. Child streams for replications/chains are derived
// with derive_seed so parallel jobs never share state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  static std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(splitmix64(master) ^ splitmix64(stream));
  }

  double uniform() {
    std::uniform_real_distribution<double> d(0.0, 1.0);
    return d(eng_);
  }
  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(eng_);
  }
  double normal() {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(eng_);
  }
  double normal(double mean, double sd) { return mean + sd * normal(); }
  VectorXd normal_vector(Index n) {
    VectorXd z(n);
    for (Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }
  // shape/scale parameterization (mean = shape*scale)
  double gamma(double shape, double scale) {
    std::gamma_distribution<double> d(shape, scale);
    return d(eng_);
  }
  // InvGamma(a, b): 1/X with X ~ Gamma(a, rate b)
  double inv_gamma(double shape, double scale) {
    if (shape <= 0.0 || scale <= 0.0)
      throw invalid_parameter("inv_gamma: shape and scale must be positive");
    return 1.0 / gamma(shape, 1.0 / scale);
  }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    std::uniform_int_distribution<int> d(lo, hi);
    return d(eng_);
  }

  // Draws an index from unnormalized log-weights via log-sum-exp; weights are
  // floored at 1e-300 so no support point gets exactly zero mass.
  int categorical_from_log(const VectorXd& logw) {
    const double m = logw.maxCoeff();
    if (!std::isfinite(m)) throw numerical_failure("categorical_from_log: all weights underflow");
    VectorXd w = (logw.array() - m).exp().max(1e-300).matrix();
    const double total = w.sum();
    double u = uniform() * total, acc = 0.0;
    for (Index k = 0; k < w.size(); ++k) {
      acc += w[k];
      if (u <= acc) return static_cast<int>(k);
    }
    return static_cast<int>(w.size() - 1);
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace stcp
