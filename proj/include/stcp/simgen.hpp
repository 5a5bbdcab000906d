#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stcp/baseline1d.hpp"
#include "stcp/model.hpp"
#include "stcp/rng.hpp"
#include "stcp/sampler.hpp"

namespace stcp {

// Ground-truth generator settings. The lattice uses lag magnitudes in the
// diffusion mean (delays grow with distance from the origin in every
// direction); spacing 0.4 calibrates the no-changepoint / changepoint balance.
struct SimConfig {
  int grid_side = 11;
  double spacing = 0.4;
  int m = 61;
  double tau0_true = 18.0;
  Vector2d beta_true = Vector2d(1.5, 1.0);
  double sigma_Delta_sq = 1.0;
  double psi_Delta = 0.5;
  double alpha0 = 0.0;
  double sigma1_sq = 1.0;
  double gamma0 = 2.0;       // fixed mean shift; 0 means no mean change
  double gamma1 = 0.0;       // post-change slope
  double sigma2_sq = 1.0;    // post-change variance (== sigma1_sq for equal)
  double sigma_U_sq = 1.0;
  double phi_U = 1.5;
  double psi_U = 2.0;
  int replications = 100;
  std::uint64_t seed = 1;
};

struct SimTruth {
  ChangepointField cp;
  std::vector<bool> has_cp;  // tau(s) < M
};

struct SimDataset {
  SpaceTimeGrid grid;
  VectorXd y;
  SimTruth truth;
};

SimDataset generate_dataset(const SimConfig& cfg, Rng& rng);

// Paper-style detection rates: denominators are the detected / undetected
// counts. Returns NaN when the denominator is zero.
double fpr(const std::vector<bool>& truth, const std::vector<bool>& detected);
double fnr(const std::vector<bool>& truth, const std::vector<bool>& detected);
double rmse_tau(const VectorXd& truth_tau, const VectorXd& est_tau, int m);

struct CoverageResult {
  double coverage = 0.0;
  double mean_length = 0.0;
};
CoverageResult coverage_and_length(const ChainTrace& trace, const SimTruth& truth,
                                   double level = 0.95);

struct MetricRow {
  std::string setting;
  int replication = 0;
  std::string method;  // "ST" or "1D"
  double fpr = std::numeric_limits<double>::quiet_NaN();
  double fnr = std::numeric_limits<double>::quiet_NaN();
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double ci_length = std::numeric_limits<double>::quiet_NaN();
};

struct StudySetting {
  std::string name;
  double gamma0 = 2.0;
  double sigma2_sq = 1.0;
  VarianceMode fit_mode = VarianceMode::equal;
  ChangeType baseline_type = ChangeType::mean;
};

struct StudyConfig {
  SimConfig base;
  std::vector<StudySetting> settings;
  SamplerConfig sampler;
  int replications = 100;
  bool baseline_on = true;
  std::uint64_t master_seed = 1;
  int threads = 0;  // 0 = hardware concurrency
};

std::vector<MetricRow> run_study(const StudyConfig& cfg);

void write_metrics_csv(const std::vector<MetricRow>& rows, const std::string& path);

}  // namespace stcp
