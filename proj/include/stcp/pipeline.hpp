#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stcp/model.hpp"
#include "stcp/sampler.hpp"
#include "stcp/simgen.hpp"

namespace stcp {

// ---------- ingestion ----------

struct GridData {
  SpaceTimeGrid grid;
  VectorXd y;
};

// CSV with header lon,lat,time,value; every location x time present exactly
// once. Locations are ordered by (lat, lon); times remapped to 1..M.
GridData load_grid_csv(const std::string& path);
void write_grid_csv(const GridData& data, const std::string& path);

// ---------- preprocessing ----------

// Subtracts per-month-of-year means estimated on the pre-event window.
// Stand-in for a seasonal-trend decomposition done by external tooling.
VectorXd deseasonalize_monthly(const VectorXd& series, int pre_event_end, int period = 12);

struct DetrendResult {
  VectorXd series;
  double slope = 0.0;
  bool significant = false;
};
// OLS trend on the pre-event window; removed over the whole series when the
// slope is significant at `alpha`, otherwise only the pre-event mean is.
DetrendResult detrend_significant(const VectorXd& series, int pre_event_end, double alpha = 0.05);

struct NormalizeResult {
  VectorXd series;
  double scale = 1.0;  // pre-event standard deviation
};
NormalizeResult normalize_series(const VectorXd& series, int pre_event_end);

// Averages over longitude within each latitude band.
GridData zonal_mean(const GridData& data);

// ---------- posterior summary ----------

struct CalendarMap {
  int start_year = 0;
  int start_month = 1;  // time index 1 = this month
  bool enabled = false;
  std::string label(int t) const;
};

struct LocationSummary {
  double lon = 0.0, lat = 0.0;
  std::optional<int> cp_mode;  // floored posterior mode; empty when at M
  std::string cp_label;
  double p_no_cp = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
  double gamma0_mean = 0.0, gamma0_low = 0.0, gamma0_high = 0.0;
};

struct ParamSummary {
  double mean = 0.0, ci_low = 0.0, ci_high = 0.0;
};

struct PosteriorSummary {
  std::vector<LocationSummary> per_location;
  std::map<std::string, ParamSummary> global;
  double dic = 0.0;
};

PosteriorSummary summarize_posterior(const ChainTrace& trace, const SpaceTimeGrid& grid,
                                     const VectorXd& scales, const CalendarMap& cal = {});
std::string summary_to_json(const PosteriorSummary& summary);

// ---------- trace io ----------

void write_trace_csv(const std::vector<ChainTrace>& chains, const std::string& path);
ChainTrace read_trace_csv(const std::string& path);

// ---------- configuration ----------

// Flat key=value text grouped in [sections]; '#' starts a comment.
struct ConfigFile {
  std::map<std::string, std::string> values;  // "section.key" -> value

  static ConfigFile parse(const std::string& path);
  static ConfigFile parse_text(const std::string& text);
  bool has(const std::string& key) const { return values.count(key) > 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
};

struct RunConfig {
  std::string command;  // simulate | fit | compare | summarize
  std::string data_csv;
  std::string trace_csv;  // summarize input
  std::string out_dir = ".";
  int chains = 1;
  std::uint64_t seed = 1;
  int threads = 0;
  SamplerConfig sampler;
  bool fit_all_modes = false;
  std::optional<Vector2d> origin;  // nearest grid point becomes s0
  CalendarMap calendar;
  // preprocessing toggles
  bool deseasonalize = false;
  int period = 12;
  bool detrend = false;
  bool normalize = false;
  bool zonal = false;
  int pre_event_end = 0;
  // simulate/compare
  StudyConfig study;
};

RunConfig load_run_config(const ConfigFile& cfg);

// ---------- commands ----------

int cmd_fit(const RunConfig& cfg);
int cmd_simulate(const RunConfig& cfg);
int cmd_compare(const RunConfig& cfg);
int cmd_summarize(const RunConfig& cfg);

}  // namespace stcp
