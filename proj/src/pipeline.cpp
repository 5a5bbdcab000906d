#include "stcp/pipeline.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace stcp {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

GridData load_grid_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ingestion_error("load_grid_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw ingestion_error("load_grid_csv: empty file");
  {
    auto hdr = split_csv_line(line);
    if (hdr.size() != 4 || trim(hdr[0]) != "lon" || trim(hdr[1]) != "lat" ||
        trim(hdr[2]) != "time" || trim(hdr[3]) != "value")
      throw ingestion_error("load_grid_csv: expected header lon,lat,time,value");
  }
  struct Cell {
    double lon, lat;
    long time;
    double value;
  };
  std::vector<Cell> cells;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    lineno += 1;
    if (trim(line).empty()) continue;
    auto parts = split_csv_line(line);
    if (parts.size() != 4)
      throw ingestion_error("load_grid_csv: bad field count at line " + std::to_string(lineno));
    try {
      cells.push_back({std::stod(parts[0]), std::stod(parts[1]), std::stol(parts[2]),
                       std::stod(parts[3])});
    } catch (const std::exception&) {
      throw ingestion_error("load_grid_csv: unparseable row at line " + std::to_string(lineno));
    }
  }
  if (cells.empty()) throw ingestion_error("load_grid_csv: no data rows");

  // canonical ordering: locations by (lat, lon); times remapped to 1..M
  std::map<std::pair<double, double>, Index> loc_ids;  // (lat, lon) -> index
  std::map<long, int> time_ids;
  for (const auto& c : cells) {
    loc_ids.emplace(std::make_pair(c.lat, c.lon), 0);
    time_ids.emplace(c.time, 0);
  }
  Index li = 0;
  for (auto& kv : loc_ids) kv.second = li++;
  int ti = 1;
  for (auto& kv : time_ids) kv.second = ti++;

  GridData out;
  out.grid.m = static_cast<int>(time_ids.size());
  out.grid.metric = Metric::great_circle;
  out.grid.locations.resize(loc_ids.size());
  for (const auto& kv : loc_ids)
    out.grid.locations[kv.second] = Vector2d(kv.first.second, kv.first.first);
  const Index n = out.grid.n();
  const int m = out.grid.m;
  out.y = VectorXd::Constant(n * m, std::numeric_limits<double>::quiet_NaN());
  for (const auto& c : cells) {
    const Index i = loc_ids.at({c.lat, c.lon});
    const int t = time_ids.at(c.time);
    const Index idx = flat_index(i, t, n);
    if (!std::isnan(out.y[idx]))
      throw ingestion_error("load_grid_csv: duplicate cell (lon=" + std::to_string(c.lon) +
                            ", lat=" + std::to_string(c.lat) +
                            ", time=" + std::to_string(c.time) + ")");
    out.y[idx] = c.value;
  }
  std::vector<std::string> gaps;
  std::vector<long> time_keys(time_ids.size());
  for (const auto& kv : time_ids) time_keys[kv.second - 1] = kv.first;
  for (Index i = 0; i < n && gaps.size() < 10; ++i) {
    for (int t = 1; t <= m && gaps.size() < 10; ++t) {
      if (std::isnan(out.y[flat_index(i, t, n)])) {
        gaps.push_back("(lon=" + std::to_string(out.grid.locations[i][0]) +
                       ", lat=" + std::to_string(out.grid.locations[i][1]) +
                       ", time=" + std::to_string(time_keys[t - 1]) + ")");
      }
    }
  }
  if (!gaps.empty()) {
    std::string msg = "load_grid_csv: missing cells:";
    for (const auto& g : gaps) msg += " " + g;
    throw ingestion_error(msg);
  }
  out.grid.validate();
  return out;
}

void write_grid_csv(const GridData& data, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ingestion_error("write_grid_csv: cannot open " + path);
  f << "lon,lat,time,value\n";
  char buf[160];
  const Index n = data.grid.n();
  for (Index i = 0; i < n; ++i) {
    for (int t = 1; t <= data.grid.m; ++t) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d,%.17g\n", data.grid.locations[i][0],
                    data.grid.locations[i][1], t, data.y[flat_index(i, t, n)]);
      f << buf;
    }
  }
}

VectorXd deseasonalize_monthly(const VectorXd& series, int pre_event_end, int period) {
  const int m = static_cast<int>(series.size());
  if (m < 2 * period)
    throw invalid_input("deseasonalize_monthly: series shorter than two periods");
  if (pre_event_end < period)
    throw invalid_input("deseasonalize_monthly: pre-event window shorter than one period");
  VectorXd means = VectorXd::Zero(period);
  VectorXi counts = VectorXi::Zero(period);
  for (int t = 1; t <= pre_event_end; ++t) {
    const int k = (t - 1) % period;
    means[k] += series[t - 1];
    counts[k] += 1;
  }
  for (int k = 0; k < period; ++k) means[k] /= static_cast<double>(counts[k]);
  VectorXd out = series;
  for (int t = 1; t <= m; ++t) out[t - 1] -= means[(t - 1) % period];
  return out;
}

DetrendResult detrend_significant(const VectorXd& series, int pre_event_end, double alpha) {
  const int n = pre_event_end;
  if (n < 3) throw invalid_input("detrend_significant: pre-event window too short");
  if (n > series.size()) throw invalid_input("detrend_significant: window beyond series");
  double tbar = 0.5 * (1.0 + n);
  double ybar = 0.0;
  for (int t = 1; t <= n; ++t) ybar += series[t - 1];
  ybar /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (int t = 1; t <= n; ++t) {
    sxx += (t - tbar) * (t - tbar);
    sxy += (t - tbar) * (series[t - 1] - ybar);
    syy += (series[t - 1] - ybar) * (series[t - 1] - ybar);
  }
  DetrendResult res;
  if (syy <= 0.0) {  // constant window, slope undefined: treat as insignificant
    res.series = series.array() - ybar;
    return res;
  }
  const double slope = sxy / sxx;
  const double intercept = ybar - slope * tbar;
  double rss = 0.0;
  for (int t = 1; t <= n; ++t) {
    const double e = series[t - 1] - intercept - slope * t;
    rss += e * e;
  }
  res.slope = slope;
  if (rss <= 0.0) {
    res.significant = slope != 0.0;
  } else {
    const double se = std::sqrt(rss / (n - 2) / sxx);
    const double tstat = slope / se;
    boost::math::students_t_distribution<double> dist(n - 2);
    const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(tstat)));
    res.significant = p < alpha;
  }
  if (res.significant) {
    res.series = series;
    for (Index t = 1; t <= series.size(); ++t)
      res.series[t - 1] -= intercept + slope * static_cast<double>(t);
  } else {
    res.series = series.array() - ybar;
  }
  return res;
}

NormalizeResult normalize_series(const VectorXd& series, int pre_event_end) {
  if (pre_event_end < 2 || pre_event_end > series.size())
    throw invalid_input("normalize_series: bad pre-event window");
  double mean = 0.0;
  for (int t = 1; t <= pre_event_end; ++t) mean += series[t - 1];
  mean /= pre_event_end;
  double ss = 0.0;
  for (int t = 1; t <= pre_event_end; ++t)
    ss += (series[t - 1] - mean) * (series[t - 1] - mean);
  const double sd = std::sqrt(ss / (pre_event_end - 1));
  if (!(sd > 0.0)) throw invalid_input("normalize_series: zero pre-event standard deviation");
  NormalizeResult res;
  res.scale = sd;
  res.series = series / sd;
  return res;
}

GridData zonal_mean(const GridData& data) {
  const Index n = data.grid.n();
  const int m = data.grid.m;
  std::map<double, std::vector<Index>> bands;  // lat -> member locations
  for (Index i = 0; i < n; ++i) bands[data.grid.locations[i][1]].push_back(i);
  if (bands.empty()) throw invalid_input("zonal_mean: no latitude bands");
  GridData out;
  out.grid.m = m;
  out.grid.metric = data.grid.metric;
  out.grid.radius = data.grid.radius;
  for (const auto& kv : bands) {
    if (kv.second.empty()) throw invalid_input("zonal_mean: empty band");
    out.grid.locations.push_back(Vector2d(0.0, kv.first));
  }
  const Index nb = out.grid.n();
  out.y.resize(nb * m);
  Index b = 0;
  for (const auto& kv : bands) {
    for (int t = 1; t <= m; ++t) {
      double s = 0.0;
      for (Index i : kv.second) s += data.y[flat_index(i, t, n)];
      out.y[flat_index(b, t, nb)] = s / static_cast<double>(kv.second.size());
    }
    b += 1;
  }
  return out;
}

ConfigFile ConfigFile::parse(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ingestion_error("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_text(ss.str());
}

ConfigFile ConfigFile::parse_text(const std::string& text) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    lineno += 1;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ingestion_error("config: bad section at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ingestion_error("config: expected key=value at line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    cfg.values[section.empty() ? key : section + "." + key] = val;
  }
  return cfg;
}

std::string ConfigFile::get(const std::string& key, const std::string& fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : it->second;
}
double ConfigFile::get_double(const std::string& key, double fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : std::stod(it->second);
}
int ConfigFile::get_int(const std::string& key, int fallback) const {
  auto it = values.find(key);
  return it == values.end() ? fallback : std::stoi(it->second);
}
bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  auto it = values.find(key);
  if (it == values.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ingestion_error("config: bad boolean value for " + key);
}

std::string CalendarMap::label(int t) const {
  if (!enabled) return "t" + std::to_string(t);
  const int month0 = (start_month - 1) + (t - 1);
  const int year = start_year + month0 / 12;
  const int month = month0 % 12 + 1;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02d", year, month);
  return buf;
}

}  // namespace stcp
