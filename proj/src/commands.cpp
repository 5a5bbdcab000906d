#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "stcp/pipeline.hpp"
#include "stcp/stats.hpp"

namespace stcp {

namespace {

VarianceMode parse_mode(const std::string& s) {
  if (s == "equal") return VarianceMode::equal;
  if (s == "increase") return VarianceMode::increase;
  if (s == "decrease") return VarianceMode::decrease;
  throw ingestion_error("config: unknown variance_mode '" + s + "'");
}

std::string mode_name(VarianceMode m) {
  switch (m) {
    case VarianceMode::equal:
      return "equal";
    case VarianceMode::increase:
      return "increase";
    default:
      return "decrease";
  }
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::istringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

DecayPrior parse_decay(const ConfigFile& cfg, const std::string& name, const DecayPrior& base) {
  DecayPrior d = base;
  d.lower = cfg.get_double("priors." + name + "_lower", d.lower);
  d.upper = cfg.get_double("priors." + name + "_upper", d.upper);
  d.proposal_sd = cfg.get_double("priors." + name + "_proposal_sd", d.proposal_sd);
  return d;
}

std::string strip(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig load_run_config(const ConfigFile& cfg) {
  RunConfig rc;
  rc.data_csv = cfg.get("data.csv", "");
  rc.trace_csv = cfg.get("data.trace", "");
  rc.out_dir = cfg.get("output.dir", ".");
  rc.seed = static_cast<std::uint64_t>(cfg.get_int("mcmc.seed", 1));
  rc.chains = cfg.get_int("mcmc.chains", 1);
  rc.threads = cfg.get_int("mcmc.threads", 0);

  SamplerConfig& sc = rc.sampler;
  sc.iterations = cfg.get_int("mcmc.iterations", 4000);
  sc.burn_in = cfg.get_int("mcmc.burn_in", 1000);
  sc.thin = cfg.get_int("mcmc.thin", 1);
  sc.batch_size = cfg.get_int("mcmc.batch", 50);
  sc.seed = rc.seed;
  const std::string mode = cfg.get("model.variance_mode", "equal");
  if (mode == "all") {
    rc.fit_all_modes = true;
    sc.variance_mode = VarianceMode::equal;
  } else {
    sc.variance_mode = parse_mode(mode);
  }
  sc.pin_beta = cfg.get_bool("model.pin_beta", false);
  sc.sample_decays = cfg.get_bool("model.sample_decays", true);
  sc.sample_random_effects = cfg.get_bool("model.sample_random_effects", true);
  const std::string du = cfg.get("model.delta_update", "integrated");
  if (du == "integrated")
    sc.delta_update = DeltaUpdate::integrated;
  else if (du == "conditional")
    sc.delta_update = DeltaUpdate::conditional;
  else
    throw ingestion_error("config: unknown delta_update '" + du + "'");

  Hyperparams& hp = sc.hyper;
  hp.s_a_sq = cfg.get_double("priors.s_a_sq", 100.0);
  hp.s_b_sq = cfg.get_double("priors.s_b_sq", 100.0);
  hp.a1 = cfg.get_double("priors.a1", 2.0);
  hp.b1 = cfg.get_double("priors.b1", 1.0);
  hp.a2 = cfg.get_double("priors.a2", 2.0);
  hp.b2 = cfg.get_double("priors.b2", 1.0);
  hp.a3 = cfg.get_double("priors.a3", 2.0);
  hp.b3 = cfg.get_double("priors.b3", 1.0);
  hp.a4 = cfg.get_double("priors.a4", 2.0);
  hp.b4 = cfg.get_double("priors.b4", 1.0);
  hp.a5 = cfg.get_double("priors.a5", 2.0);
  hp.b5 = cfg.get_double("priors.b5", 1.0);
  DecayPrior base;
  base.lower = cfg.get_double("priors.decay_lower", 0.01);
  base.upper = cfg.get_double("priors.decay_upper", 10.0);
  base.proposal_sd = cfg.get_double("priors.decay_proposal_sd", 0.5);
  hp.phi_U = parse_decay(cfg, "phi_U", base);
  hp.psi_U = parse_decay(cfg, "psi_U", base);
  hp.psi_Delta = parse_decay(cfg, "psi_Delta", base);
  hp.psi_g0 = parse_decay(cfg, "psi_g0", base);
  hp.psi_g1 = parse_decay(cfg, "psi_g1", base);
  const std::string support = cfg.get("priors.tau0_support", "all");
  if (support != "all") {
    for (double v : parse_double_list(support))
      hp.tau0_support.push_back(static_cast<int>(v));
  }

  if (cfg.has("data.origin_lon") || cfg.has("data.origin_lat")) {
    rc.origin = Vector2d(cfg.get_double("data.origin_lon", 0.0),
                         cfg.get_double("data.origin_lat", 0.0));
  }
  const std::string cal = cfg.get("data.calendar_start", "");
  if (!cal.empty()) {
    if (cal.size() != 7 || cal[4] != '-')
      throw ingestion_error("config: calendar_start must be YYYY-MM");
    rc.calendar.enabled = true;
    rc.calendar.start_year = std::stoi(cal.substr(0, 4));
    rc.calendar.start_month = std::stoi(cal.substr(5, 2));
  }

  rc.deseasonalize = cfg.get_bool("preprocess.deseasonalize", false);
  rc.period = cfg.get_int("preprocess.period", 12);
  rc.detrend = cfg.get_bool("preprocess.detrend", false);
  rc.normalize = cfg.get_bool("preprocess.normalize", false);
  rc.zonal = cfg.get_bool("preprocess.zonal_mean", false);
  rc.pre_event_end = cfg.get_int("preprocess.pre_event_end", 0);

  // simulation study
  StudyConfig& st = rc.study;
  st.base.grid_side = cfg.get_int("study.grid_side", 11);
  st.base.spacing = cfg.get_double("study.spacing", 0.4);
  st.base.m = cfg.get_int("study.m", 61);
  st.base.tau0_true = cfg.get_double("study.tau0_true", 18.0);
  st.base.sigma_Delta_sq = cfg.get_double("study.sigma_Delta_sq", 1.0);
  st.base.psi_Delta = cfg.get_double("study.psi_Delta", 0.5);
  st.base.sigma_U_sq = cfg.get_double("study.sigma_U_sq", 1.0);
  st.base.phi_U = cfg.get_double("study.phi_U", 1.5);
  st.base.psi_U = cfg.get_double("study.psi_U", 2.0);
  st.replications = cfg.get_int("study.replications", 100);
  st.master_seed = rc.seed;
  st.threads = rc.threads;
  st.sampler = sc;
  for (double g0 : parse_double_list(cfg.get("study.gamma0_values", "1.5,2,3"))) {
    StudySetting s;
    std::ostringstream name;
    name << "mean" << g0;
    s.name = name.str();
    s.gamma0 = g0;
    s.sigma2_sq = st.base.sigma1_sq;
    s.fit_mode = VarianceMode::equal;
    s.baseline_type = ChangeType::mean;
    st.settings.push_back(s);
  }
  const std::string vs = cfg.get("study.variance_settings", "");
  if (!vs.empty()) {
    std::istringstream ss(vs);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = strip(item);
      if (item.empty()) continue;
      const auto colon = item.find(':');
      if (colon == std::string::npos)
        throw ingestion_error("config: variance_settings entries are gamma0:sigma2_sq");
      StudySetting s;
      s.gamma0 = std::stod(item.substr(0, colon));
      s.sigma2_sq = std::stod(item.substr(colon + 1));
      s.fit_mode = VarianceMode::increase;
      s.baseline_type = s.gamma0 == 0.0 ? ChangeType::var : ChangeType::meanvar;
      std::ostringstream name;
      name << (s.gamma0 == 0.0 ? "var" : "meanvar") << "_g" << s.gamma0 << "_s" << s.sigma2_sq;
      s.name = name.str();
      st.settings.push_back(s);
    }
  }
  return rc;
}

namespace {

struct PreparedData {
  GridData data;
  VectorXd scales;
};

PreparedData prepare_data(const RunConfig& cfg) {
  if (cfg.data_csv.empty()) throw ingestion_error("fit: data.csv not configured");
  PreparedData out;
  out.data = load_grid_csv(cfg.data_csv);
  if (cfg.zonal) out.data = zonal_mean(out.data);
  const Index n = out.data.grid.n();
  const int m = out.data.grid.m;
  out.scales = VectorXd::Ones(n);
  if (cfg.deseasonalize || cfg.detrend || cfg.normalize) {
    if (cfg.pre_event_end < 3)
      throw ingestion_error("preprocess: pre_event_end must be set (>= 3)");
    VectorXd series(m);
    for (Index i = 0; i < n; ++i) {
      for (int t = 1; t <= m; ++t) series[t - 1] = out.data.y[flat_index(i, t, n)];
      if (cfg.deseasonalize) series = deseasonalize_monthly(series, cfg.pre_event_end, cfg.period);
      if (cfg.detrend) series = detrend_significant(series, cfg.pre_event_end).series;
      if (cfg.normalize) {
        const NormalizeResult nr = normalize_series(series, cfg.pre_event_end);
        series = nr.series;
        out.scales[i] = nr.scale;
      }
      for (int t = 1; t <= m; ++t) out.data.y[flat_index(i, t, n)] = series[t - 1];
    }
  }
  if (cfg.origin) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      const double d = (out.data.grid.locations[i] - *cfg.origin).norm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    out.data.grid.origin_index = static_cast<int>(best);
  }
  return out;
}

std::vector<ChainTrace> run_chains(const GridData& data, const SamplerConfig& sc, int n_chains,
                                   std::uint64_t master_seed, int threads) {
  std::vector<ChainTrace> chains(n_chains);
  std::atomic<int> next{0};
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int nt = threads > 0 ? threads : std::max(1, hw);
  std::vector<std::thread> pool;
  std::atomic<bool> failed{false};
  std::string error_msg;
  std::mutex err_mu;
  for (int t = 0; t < std::min(nt, n_chains); ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        const int c = next.fetch_add(1);
        if (c >= n_chains || failed.load()) return;
        SamplerConfig scc = sc;
        scc.seed = Rng::derive_seed(master_seed, static_cast<std::uint64_t>(c) + 1);
        try {
          chains[c] = run_chain(data.y, data.grid, scc);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lk(err_mu);
          failed.store(true);
          error_msg = e.what();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failed.load()) throw numerical_failure("chain failed: " + error_msg);
  return chains;
}

void write_meta(const std::string& path, const ChainTrace& merged, VarianceMode mode) {
  nlohmann::json j;
  j["m"] = merged.m;
  j["n"] = static_cast<int>(merged.n_loc);
  j["burn_in"] = merged.burn_in;
  j["thin"] = merged.thin;
  j["deviance_at_mean"] = merged.deviance_at_mean;
  j["variance_mode"] = mode_name(mode);
  std::ofstream f(path);
  f << j.dump(2) << "\n";
}

}  // namespace

int cmd_fit(const RunConfig& cfg) {
  PreparedData prep = prepare_data(cfg);
  std::filesystem::create_directories(cfg.out_dir);
  std::vector<VarianceMode> modes;
  if (cfg.fit_all_modes)
    modes = {VarianceMode::equal, VarianceMode::increase, VarianceMode::decrease};
  else
    modes = {cfg.sampler.variance_mode};

  double best_dic = std::numeric_limits<double>::infinity();
  ChainTrace best;
  VarianceMode best_mode = modes.front();
  std::vector<ChainTrace> best_chains;
  std::ofstream dic_table;
  if (cfg.fit_all_modes) {
    dic_table.open(cfg.out_dir + "/dic_table.csv");
    dic_table << "variance_mode,dic\n";
  }
  for (std::size_t mi = 0; mi < modes.size(); ++mi) {
    SamplerConfig sc = cfg.sampler;
    sc.variance_mode = modes[mi];
    std::vector<ChainTrace> chains =
        run_chains(prep.data, sc, cfg.chains, Rng::derive_seed(cfg.seed, 7000 + mi), cfg.threads);
    ChainTrace merged = merge_chains(chains, prep.data.y, modes[mi]);
    const double d = dic(merged);
    if (cfg.fit_all_modes) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", d);
      dic_table << mode_name(modes[mi]) << ',' << buf << '\n';
    }
    std::cout << "mode " << mode_name(modes[mi]) << ": DIC = " << d << "\n";
    if (d < best_dic) {
      best_dic = d;
      best = std::move(merged);
      best_mode = modes[mi];
      best_chains = std::move(chains);
    }
  }
  write_trace_csv(best_chains, cfg.out_dir + "/trace.csv");
  write_meta(cfg.out_dir + "/trace_meta.json", best, best_mode);
  const PosteriorSummary summary =
      summarize_posterior(best, prep.data.grid, prep.scales, cfg.calendar);
  std::ofstream sf(cfg.out_dir + "/summary.json");
  sf << summary_to_json(summary) << "\n";
  std::cout << "selected mode: " << mode_name(best_mode) << " (DIC " << best_dic << ")\n"
            << "wrote " << cfg.out_dir << "/trace.csv, summary.json\n";
  return 0;
}

int cmd_simulate(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  StudyConfig st = cfg.study;
  st.baseline_on = false;
  const std::vector<MetricRow> rows = run_study(st);
  write_metrics_csv(rows, cfg.out_dir + "/metrics.csv");
  std::cout << "wrote " << cfg.out_dir << "/metrics.csv (" << rows.size() << " rows)\n";
  return 0;
}

int cmd_compare(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  StudyConfig st = cfg.study;
  st.baseline_on = true;
  std::cout << "1D penalty: modified BIC, 3*log(M) + log(k/M) + log(1-k/M) + log(M)\n";
  const std::vector<MetricRow> rows = run_study(st);
  write_metrics_csv(rows, cfg.out_dir + "/metrics.csv");
  std::cout << "wrote " << cfg.out_dir << "/metrics.csv (" << rows.size() << " rows)\n";
  return 0;
}

int cmd_summarize(const RunConfig& cfg) {
  if (cfg.trace_csv.empty()) throw ingestion_error("summarize: data.trace not configured");
  PreparedData prep = prepare_data(cfg);
  ChainTrace trace = read_trace_csv(cfg.trace_csv);
  trace.m = prep.data.grid.m;
  if (trace.n_loc != prep.data.grid.n())
    throw ingestion_error("summarize: trace and grid disagree on location count");
  // deviance at mean from the sidecar metadata when present
  const std::string meta_path = cfg.trace_csv.substr(0, cfg.trace_csv.size() - 4) + "_meta.json";
  std::ifstream mf(meta_path);
  if (mf) {
    nlohmann::json j;
    mf >> j;
    trace.deviance_at_mean = j.value("deviance_at_mean", trace.deviance.mean());
  } else {
    trace.deviance_at_mean = trace.deviance.mean();
  }
  std::filesystem::create_directories(cfg.out_dir);
  const PosteriorSummary summary =
      summarize_posterior(trace, prep.data.grid, prep.scales, cfg.calendar);
  std::ofstream sf(cfg.out_dir + "/summary.json");
  sf << summary_to_json(summary) << "\n";
  std::cout << "wrote " << cfg.out_dir << "/summary.json\n";
  return 0;
}

}  // namespace stcp
