#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "stcp/simgen.hpp"
#include "stcp/stats.hpp"

using namespace stcp;

TEST_CASE("dataset generation") {
  SECTION("noiseless step surface") {
    SimConfig cfg;
    cfg.grid_side = 4;
    cfg.m = 12;
    cfg.tau0_true = 4.0;
    cfg.gamma0 = 3.0;
    cfg.gamma1 = 0.0;
    cfg.sigma1_sq = 1e-12;
    cfg.sigma2_sq = 1e-12;
    cfg.sigma_U_sq = 0.0;
    Rng rng(83);
    const SimDataset d = generate_dataset(cfg, rng);
    const Index n = d.grid.n();
    for (Index i = 0; i < n; ++i) {
      for (int t = 1; t <= cfg.m; ++t) {
        const double expected = static_cast<double>(t) > d.truth.cp.tau[i] ? 3.0 : 0.0;
        REQUIRE_THAT(d.y[flat_index(i, t, n)], Catch::Matchers::WithinAbs(expected, 1e-4));
      }
    }
  }
  SECTION("gamma0 = 0 with equal variances forces no changepoints") {
    SimConfig cfg;
    cfg.gamma0 = 0.0;
    cfg.sigma2_sq = cfg.sigma1_sq;
    Rng rng(89);
    const SimDataset d = generate_dataset(cfg, rng);
    for (bool b : d.truth.has_cp) REQUIRE_FALSE(b);
  }
  SECTION("gamma0 = 0 with variance shift keeps the drawn changepoint field") {
    SimConfig cfg;
    cfg.gamma0 = 0.0;
    cfg.sigma2_sq = 5.0;
    Rng rng(97);
    const SimDataset d = generate_dataset(cfg, rng);
    int with = 0;
    for (bool b : d.truth.has_cp) with += b ? 1 : 0;
    CHECK(with > 0);
  }
  SECTION("delta at the origin is pinned to zero") {
    SimConfig cfg;
    Rng rng(101);
    for (int rep = 0; rep < 20; ++rep) {
      const SimDataset d = generate_dataset(cfg, rng);
      REQUIRE(d.truth.cp.delta[d.grid.origin_index] == 0.0);
      REQUIRE(d.truth.cp.tau.minCoeff() == d.truth.cp.tau[d.grid.origin_index]);
    }
  }
  SECTION("class balance near the reported average") {
    SimConfig cfg;  // defaults: gamma0 = 2, equal-ish settings irrelevant for tau field
    Rng rng(103);
    const int reps = 200;
    double n0 = 0.0;
    for (int rep = 0; rep < reps; ++rep) {
      const SimDataset d = generate_dataset(cfg, rng);
      for (bool b : d.truth.has_cp) n0 += b ? 0.0 : 1.0;
    }
    n0 /= reps;
    const double ratio = n0 / (121.0 - n0);
    const double target = 57.0 / 64.0;
    CHECK(std::abs(ratio - target) / target < 0.2);
  }
}

TEST_CASE("detection rate metrics") {
  SECTION("fpr enumeration example") {
    const std::vector<bool> truth = {true, true, false, false, false};
    const std::vector<bool> detected = {true, false, true, true, false};
    CHECK_THAT(fpr(truth, detected), Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-15));
  }
  SECTION("fnr enumeration example") {
    const std::vector<bool> truth = {true, true, false, false, false};
    const std::vector<bool> detected = {true, false, true, true, false};
    // undetected = {2, 5}; falsely undetected = {2}
    CHECK_THAT(fnr(truth, detected), Catch::Matchers::WithinAbs(0.5, 1e-15));
  }
  SECTION("perfect detection") {
    const std::vector<bool> truth = {true, false, true};
    CHECK(fpr(truth, truth) == 0.0);
    CHECK(fnr(truth, truth) == 0.0);
  }
  SECTION("undefined denominators") {
    const std::vector<bool> truth = {true, false};
    CHECK(std::isnan(fpr(truth, {false, false})));
    CHECK(std::isnan(fnr(truth, {true, true})));
  }
  SECTION("exchangeable under relabeling") {
    Rng rng(107);
    std::vector<bool> truth(30), det(30);
    for (int i = 0; i < 30; ++i) {
      truth[i] = rng.uniform() < 0.5;
      det[i] = rng.uniform() < 0.5;
    }
    const double f1 = fpr(truth, det), f2 = fnr(truth, det);
    std::vector<int> perm(30);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    std::vector<bool> t2(30), d2(30);
    for (int i = 0; i < 30; ++i) {
      t2[i] = truth[perm[i]];
      d2[i] = det[perm[i]];
    }
    CHECK(fpr(t2, d2) == f1);
    CHECK(fnr(t2, d2) == f2);
  }
}

TEST_CASE("rmse of changepoint estimates") {
  SECTION("perfect estimates") {
    VectorXd t(3);
    t << 10, 20, 61;
    CHECK(rmse_tau(t, t, 61) == 0.0);
  }
  SECTION("no-changepoint encoded at M") {
    VectorXd truth(1), est(1);
    truth << 61.0;
    est << 50.0;
    CHECK_THAT(rmse_tau(truth, est, 61), Catch::Matchers::WithinAbs(11.0, 1e-15));
  }
  SECTION("two locations") {
    VectorXd truth(2), est(2);
    truth << 10.0, 20.0;
    est << 13.0, 24.0;
    CHECK_THAT(rmse_tau(truth, est, 61), Catch::Matchers::WithinAbs(std::sqrt(12.5), 1e-12));
  }
}

TEST_CASE("coverage and credible interval length") {
  ChainTrace tr;
  tr.m = 61;
  tr.n_loc = 2;
  const Index rows = 4000;
  tr.tau.resize(rows, 2);
  tr.tau0.resize(rows);  // rows() uses tau0's length
  tr.tau0.setZero();
  SimTruth truth;
  VectorXd delta(2);
  delta << 0.0, 100.0;
  truth.cp = build_tau(20.0, delta, 61);
  SECTION("point mass at the truth") {
    for (Index r = 0; r < rows; ++r) {
      tr.tau(r, 0) = 20.0;
      tr.tau(r, 1) = 61.0;
    }
    const CoverageResult c = coverage_and_length(tr, truth);
    CHECK(c.coverage == 1.0);
    CHECK(c.mean_length == 0.0);
  }
  SECTION("uniform posterior has length about 0.95 (M-1)") {
    Rng rng(109);
    for (Index r = 0; r < rows; ++r) {
      tr.tau(r, 0) = rng.uniform(1.0, 61.0);
      tr.tau(r, 1) = rng.uniform(1.0, 61.0);
    }
    const CoverageResult c = coverage_and_length(tr, truth);
    CHECK_THAT(c.mean_length, Catch::Matchers::WithinAbs(0.95 * 60.0, 1.5));
  }
  SECTION("truth outside the interval contributes zero") {
    for (Index r = 0; r < rows; ++r) {
      tr.tau(r, 0) = 40.0 + 0.001 * static_cast<double>(r % 10);  // far from truth 20
      tr.tau(r, 1) = 61.0;
    }
    const CoverageResult c = coverage_and_length(tr, truth);
    CHECK(c.coverage == 0.5);  // location 2 covered, location 1 not
  }
  SECTION("too few draws") {
    ChainTrace small;
    small.m = 61;
    small.n_loc = 1;
    small.tau0.resize(10);
    small.tau.resize(10, 1);
    CHECK_THROWS_AS(coverage_and_length(small, truth), invalid_input);
  }
}

TEST_CASE("study driver") {
  SECTION("zero replications give an empty report") {
    StudyConfig cfg;
    cfg.replications = 0;
    cfg.settings.push_back({"mean2", 2.0, 1.0, VarianceMode::equal, ChangeType::mean});
    CHECK(run_study(cfg).empty());
  }
  SECTION("fixed seed reproduces the report") {
    StudyConfig cfg;
    cfg.base.grid_side = 3;
    cfg.base.m = 16;
    cfg.base.tau0_true = 5.0;
    cfg.base.spacing = 1.0;
    cfg.replications = 2;
    cfg.master_seed = 13;
    cfg.sampler.iterations = 120;
    cfg.sampler.burn_in = 40;
    cfg.sampler.hyper = Hyperparams{};
    cfg.settings.push_back({"mean3", 3.0, 1.0, VarianceMode::equal, ChangeType::mean});
    const auto a = run_study(cfg);
    const auto b = run_study(cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].setting == b[i].setting);
      CHECK(a[i].method == b[i].method);
      CHECK(((std::isnan(a[i].fpr) && std::isnan(b[i].fpr)) || a[i].fpr == b[i].fpr));
      CHECK(((std::isnan(a[i].rmse) && std::isnan(b[i].rmse)) || a[i].rmse == b[i].rmse));
    }
    // one ST and one 1D row per (setting, replication)
    CHECK(a.size() == 4);
  }
}
