#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stcp/pipeline.hpp"
#include "stcp/stats.hpp"

namespace stcp {

namespace {

ParamSummary summarize_vector(const VectorXd& draws) {
  ParamSummary s;
  s.mean = draws.mean();
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  s.ci_low = quantile(v, 0.025);
  s.ci_high = quantile(v, 0.975);
  return s;
}

}  // namespace

PosteriorSummary summarize_posterior(const ChainTrace& trace, const SpaceTimeGrid& grid,
                                     const VectorXd& scales, const CalendarMap& cal) {
  if (trace.rows() == 0) throw invalid_input("summarize_posterior: empty trace");
  if (grid.n() != trace.n_loc) throw invalid_input("summarize_posterior: grid/trace mismatch");
  PosteriorSummary out;
  const Index n = trace.n_loc;
  const double md = static_cast<double>(trace.m);
  std::vector<double> draws(trace.rows());
  for (Index i = 0; i < n; ++i) {
    LocationSummary ls;
    ls.lon = grid.locations[i][0];
    ls.lat = grid.locations[i][1];
    const int mode = trace.tau_mode(i);
    ls.p_no_cp = trace.p_no_changepoint(i);
    if (mode < trace.m) {
      ls.cp_mode = mode;
      ls.cp_label = cal.label(mode);
    } else {
      ls.cp_label = "none";
    }
    for (Index r = 0; r < trace.rows(); ++r) draws[r] = std::min(md, trace.tau(r, i));
    ls.ci_low = quantile(draws, 0.025);
    ls.ci_high = quantile(draws, 0.975);
    const double scale = scales.size() == n ? scales[i] : 1.0;
    for (Index r = 0; r < trace.rows(); ++r)
      draws[r] = (trace.gamma0F[r] + trace.gamma0R(r, i)) * scale;
    ls.gamma0_mean = 0.0;
    for (double v : draws) ls.gamma0_mean += v;
    ls.gamma0_mean /= static_cast<double>(draws.size());
    ls.gamma0_low = quantile(draws, 0.025);
    ls.gamma0_high = quantile(draws, 0.975);
    out.per_location.push_back(ls);
  }
  out.global["alpha0"] = summarize_vector(trace.alpha0);
  out.global["gamma0F"] = summarize_vector(trace.gamma0F);
  out.global["gamma1F"] = summarize_vector(trace.gamma1F);
  out.global["beta1"] = summarize_vector(trace.beta.col(0));
  out.global["beta2"] = summarize_vector(trace.beta.col(1));
  out.global["sigma1_sq"] = summarize_vector(trace.sigma1_sq);
  out.global["sigma2_sq"] = summarize_vector(trace.sigma2_sq);
  out.global["sigma_gamma_sq"] = summarize_vector(trace.sigma_gamma_sq);
  out.global["sigma_U_sq"] = summarize_vector(trace.sigma_U_sq);
  out.global["sigma_Delta_sq"] = summarize_vector(trace.sigma_Delta_sq);
  out.global["sigma_g0_sq"] = summarize_vector(trace.sigma_g0_sq);
  out.global["sigma_g1_sq"] = summarize_vector(trace.sigma_g1_sq);
  out.global["phi_U"] = summarize_vector(trace.phi_U);
  out.global["psi_U"] = summarize_vector(trace.psi_U);
  out.global["psi_Delta"] = summarize_vector(trace.psi_Delta);
  out.global["psi_g0"] = summarize_vector(trace.psi_g0);
  out.global["psi_g1"] = summarize_vector(trace.psi_g1);
  out.global["tau0"] = summarize_vector(trace.tau0);
  out.dic = dic(trace);
  return out;
}

std::string summary_to_json(const PosteriorSummary& summary) {
  nlohmann::json j;
  j["per_location"] = nlohmann::json::array();
  for (const auto& ls : summary.per_location) {
    nlohmann::json e;
    e["lon"] = ls.lon;
    e["lat"] = ls.lat;
    if (ls.cp_mode)
      e["cp_mode"] = *ls.cp_mode;
    else
      e["cp_mode"] = nullptr;
    e["cp_label"] = ls.cp_label;
    e["p_no_cp"] = ls.p_no_cp;
    e["ci_low"] = ls.ci_low;
    e["ci_high"] = ls.ci_high;
    e["gamma0_mean"] = ls.gamma0_mean;
    e["gamma0_low"] = ls.gamma0_low;
    e["gamma0_high"] = ls.gamma0_high;
    j["per_location"].push_back(e);
  }
  j["global"] = nlohmann::json::object();
  for (const auto& kv : summary.global) {
    j["global"][kv.first] = {
        {"mean", kv.second.mean}, {"ci_low", kv.second.ci_low}, {"ci_high", kv.second.ci_high}};
  }
  j["dic"] = summary.dic;
  return j.dump(2);
}

void write_trace_csv(const std::vector<ChainTrace>& chains, const std::string& path) {
  if (chains.empty()) throw invalid_input("write_trace_csv: no chains");
  std::ofstream f(path);
  if (!f) throw ingestion_error("write_trace_csv: cannot open " + path);
  const Index n = chains.front().n_loc;
  f << "chain,iter,tau0";
  for (Index i = 1; i <= n; ++i) f << ",tau_" << i;
  f << ",alpha0,gamma0F,gamma1F";
  for (Index i = 1; i <= n; ++i) f << ",gamma0R_" << i;
  for (Index i = 1; i <= n; ++i) f << ",gamma1R_" << i;
  f << ",beta_1,beta_2,sigma1_sq,sigma2_sq,sigma_gamma_sq,sigma_U_sq,sigma_Delta_sq,"
       "sigma_g0_sq,sigma_g1_sq,phi_U,psi_U,psi_Delta,psi_g0,psi_g1,deviance\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const ChainTrace& tr = chains[c];
    for (Index r = 0; r < tr.rows(); ++r) {
      f << c + 1 << ',' << r + 1 << ',' << num(tr.tau0[r]);
      for (Index i = 0; i < n; ++i) f << ',' << num(tr.tau(r, i));
      f << ',' << num(tr.alpha0[r]) << ',' << num(tr.gamma0F[r]) << ',' << num(tr.gamma1F[r]);
      for (Index i = 0; i < n; ++i) f << ',' << num(tr.gamma0R(r, i));
      for (Index i = 0; i < n; ++i) f << ',' << num(tr.gamma1R(r, i));
      f << ',' << num(tr.beta(r, 0)) << ',' << num(tr.beta(r, 1)) << ',' << num(tr.sigma1_sq[r])
        << ',' << num(tr.sigma2_sq[r]) << ',' << num(tr.sigma_gamma_sq[r]) << ','
        << num(tr.sigma_U_sq[r]) << ',' << num(tr.sigma_Delta_sq[r]) << ','
        << num(tr.sigma_g0_sq[r]) << ',' << num(tr.sigma_g1_sq[r]) << ',' << num(tr.phi_U[r])
        << ',' << num(tr.psi_U[r]) << ',' << num(tr.psi_Delta[r]) << ',' << num(tr.psi_g0[r])
        << ',' << num(tr.psi_g1[r]) << ',' << num(tr.deviance[r]) << '\n';
    }
  }
}

ChainTrace read_trace_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ingestion_error("read_trace_csv: cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw ingestion_error("read_trace_csv: empty file");
  std::istringstream hdr(line);
  std::vector<std::string> cols;
  {
    std::string c;
    while (std::getline(hdr, c, ',')) cols.push_back(c);
  }
  Index n = 0;
  for (const auto& c : cols)
    if (c.rfind("tau_", 0) == 0) n += 1;
  if (n == 0) throw ingestion_error("read_trace_csv: no tau_<i> columns");
  std::vector<std::vector<double>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<double> vals;
    std::string item;
    while (std::getline(ss, item, ',')) vals.push_back(std::stod(item));
    if (vals.size() != cols.size()) throw ingestion_error("read_trace_csv: ragged row");
    rows.push_back(std::move(vals));
  }
  const Index r = static_cast<Index>(rows.size());
  if (r == 0) throw ingestion_error("read_trace_csv: no draws");
  ChainTrace tr;
  tr.n_loc = n;
  tr.tau0.resize(r);
  tr.tau.resize(r, n);
  tr.alpha0.resize(r);
  tr.gamma0F.resize(r);
  tr.gamma1F.resize(r);
  tr.gamma0R.resize(r, n);
  tr.gamma1R.resize(r, n);
  tr.beta.resize(r, 2);
  tr.sigma1_sq.resize(r);
  tr.sigma2_sq.resize(r);
  tr.sigma_gamma_sq.resize(r);
  tr.sigma_U_sq.resize(r);
  tr.sigma_Delta_sq.resize(r);
  tr.sigma_g0_sq.resize(r);
  tr.sigma_g1_sq.resize(r);
  tr.phi_U.resize(r);
  tr.psi_U.resize(r);
  tr.psi_Delta.resize(r);
  tr.psi_g0.resize(r);
  tr.psi_g1.resize(r);
  tr.deviance.resize(r);
  for (Index k = 0; k < r; ++k) {
    const auto& v = rows[k];
    Index c = 2;  // skip chain, iter
    tr.tau0[k] = v[c++];
    for (Index i = 0; i < n; ++i) tr.tau(k, i) = v[c++];
    tr.alpha0[k] = v[c++];
    tr.gamma0F[k] = v[c++];
    tr.gamma1F[k] = v[c++];
    for (Index i = 0; i < n; ++i) tr.gamma0R(k, i) = v[c++];
    for (Index i = 0; i < n; ++i) tr.gamma1R(k, i) = v[c++];
    tr.beta(k, 0) = v[c++];
    tr.beta(k, 1) = v[c++];
    tr.sigma1_sq[k] = v[c++];
    tr.sigma2_sq[k] = v[c++];
    tr.sigma_gamma_sq[k] = v[c++];
    tr.sigma_U_sq[k] = v[c++];
    tr.sigma_Delta_sq[k] = v[c++];
    tr.sigma_g0_sq[k] = v[c++];
    tr.sigma_g1_sq[k] = v[c++];
    tr.phi_U[k] = v[c++];
    tr.psi_U[k] = v[c++];
    tr.psi_Delta[k] = v[c++];
    tr.psi_g0[k] = v[c++];
    tr.psi_g1[k] = v[c++];
    tr.deviance[k] = v[c++];
  }
  return tr;
}

}  // namespace stcp
