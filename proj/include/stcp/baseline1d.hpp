#pragma once

#include <optional>

#include "stcp/common.hpp"

namespace stcp {

enum class ChangeType { mean, var, meanvar };

struct CptConfig {
  int min_segment = 2;
  // When set, a constant penalty replacing the modified-BIC form.
  std::optional<double> manual_penalty;
};

struct CptResult {
  std::optional<int> changepoint;  // last index of the first segment (1-based)
  double statistic = 0.0;          // penalized log-likelihood gain at the argmax
  ChangeType change_type = ChangeType::mean;
  bool degenerate = false;  // zero-variance input
};

// At-most-one-changepoint scan with a modified-BIC penalty. The gain at split
// k is twice the Gaussian log-likelihood improvement of the two-segment model
// (mean: segment means with pooled variance; var: common mean with segment
// variances; meanvar: both free).
CptResult amoc_detect(const VectorXd& series, ChangeType type, const CptConfig& cfg = {});

double mbic_penalty(int k, int m);

}  // namespace stcp
