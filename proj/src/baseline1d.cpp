#include "stcp/baseline1d.hpp"

#include <cmath>
#include <limits>

namespace stcp {

namespace {

double seg_rss(const VectorXd& y, int lo, int hi, double mean) {  // 0-based inclusive
  double s = 0.0;
  for (int t = lo; t <= hi; ++t) s += (y[t] - mean) * (y[t] - mean);
  return s;
}

double safe_log(double v) { return std::log(std::max(v, 1e-300)); }

}  // namespace

double mbic_penalty(int k, int m) {
  const double md = static_cast<double>(m), kd = static_cast<double>(k);
  return 3.0 * std::log(md) + std::log(kd / md) + std::log(1.0 - kd / md) + std::log(md);
}

CptResult amoc_detect(const VectorXd& series, ChangeType type, const CptConfig& cfg) {
  const int m = static_cast<int>(series.size());
  if (m < 4) throw invalid_input("amoc_detect: need at least 4 points");
  CptResult res;
  res.change_type = type;

  const double ybar = series.mean();
  const double rss0 = seg_rss(series, 0, m - 1, ybar);
  if (rss0 <= 0.0) {
    res.degenerate = true;
    return res;
  }

  const int lo = cfg.min_segment, hi = m - cfg.min_segment;  // k: last index of left segment
  double best_gain = -std::numeric_limits<double>::infinity();
  int best_k = 0;
  double left_sum = 0.0;
  for (int t = 0; t < lo - 1; ++t) left_sum += series[t];
  for (int k = lo; k <= hi; ++k) {
    left_sum += series[k - 1];
    const int nl = k, nr = m - k;
    double gain;
    if (type == ChangeType::mean) {
      const double ml = left_sum / nl, mr = (series.sum() - left_sum) / nr;
      const double rss = seg_rss(series, 0, k - 1, ml) + seg_rss(series, k, m - 1, mr);
      gain = m * safe_log(rss0 / m) - m * safe_log(rss / m);
    } else if (type == ChangeType::var) {
      const double vl = seg_rss(series, 0, k - 1, ybar) / nl;
      const double vr = seg_rss(series, k, m - 1, ybar) / nr;
      gain = m * safe_log(rss0 / m) - nl * safe_log(vl) - nr * safe_log(vr);
    } else {
      const double ml = left_sum / nl, mr = (series.sum() - left_sum) / nr;
      const double vl = seg_rss(series, 0, k - 1, ml) / nl;
      const double vr = seg_rss(series, k, m - 1, mr) / nr;
      gain = m * safe_log(rss0 / m) - nl * safe_log(vl) - nr * safe_log(vr);
    }
    if (gain > best_gain) {
      best_gain = gain;
      best_k = k;
    }
  }
  const double penalty = cfg.manual_penalty.value_or(mbic_penalty(best_k, m));
  res.statistic = best_gain - penalty;
  if (res.statistic > 0.0) res.changepoint = best_k;
  return res;
}

}  // namespace stcp
