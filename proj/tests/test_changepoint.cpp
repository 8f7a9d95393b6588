#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "breakiv/changepoint.hpp"
#include "breakiv/linalg.hpp"
#include "breakiv/stats.hpp"
#include "helpers.hpp"

using namespace breakiv;

TEST_CASE("noiseless planted break is recovered exactly") {
  testutil::SynthSpec spec;
  spec.T = 400;
  spec.brk = 160;
  spec.noise = 0.0;
  const Dataset d = testutil::make_synthetic(spec);
  const BreakScan scan = estimate_break_2sls(d, 0.15);
  CHECK(scan.break_index == 160);
  CHECK(scan.lambda_hat == doctest::Approx(0.4));
}

TEST_CASE("scan equals a brute-force SSR oracle") {
  testutil::SynthSpec spec;
  spec.T = 80;
  spec.brk = 30;
  spec.seed = 5;
  const Dataset d = testutil::make_synthetic(spec);
  const BreakScan scan = estimate_break_2sls(d, 0.15);

  // Oracle: naive QR fits of both segments for every candidate.
  const MatrixXd pia = d.Z().colPivHouseholderQr().solve(d.W());
  const MatrixXd w_hat = d.Z() * pia;
  for (std::size_t i = 0; i < scan.candidates.size(); ++i) {
    const int k = scan.candidates[i];
    const VectorXd th1 = w_hat.topRows(k).colPivHouseholderQr().solve(d.y().head(k));
    const VectorXd th2 =
        w_hat.bottomRows(d.T() - k).colPivHouseholderQr().solve(d.y().tail(d.T() - k));
    const double ssr = (d.y().head(k) - w_hat.topRows(k) * th1).squaredNorm() +
                       (d.y().tail(d.T() - k) - w_hat.bottomRows(d.T() - k) * th2).squaredNorm();
    CHECK(scan.ssr_profile[i] == doctest::Approx(ssr).epsilon(1e-9));
  }
  // And the argmin matches.
  int best = scan.candidates[0];
  double best_ssr = scan.ssr_profile[0];
  for (std::size_t i = 1; i < scan.candidates.size(); ++i)
    if (scan.ssr_profile[i] < best_ssr) {
      best_ssr = scan.ssr_profile[i];
      best = scan.candidates[i];
    }
  CHECK(scan.break_index == best);
}

TEST_CASE("break estimate is invariant to positive rescaling of y") {
  testutil::SynthSpec spec;
  spec.T = 200;
  spec.seed = 8;
  const Dataset d = testutil::make_synthetic(spec);
  const Dataset scaled =
      Dataset::from_parts_unchecked(3.5 * d.y(), d.X(), d.Z1(), d.Z());
  const BreakScan a = estimate_break_2sls(d, 0.15);
  const BreakScan b = estimate_break_2sls(scaled, 0.15);
  CHECK(a.break_index == b.break_index);
  for (std::size_t i = 0; i < a.ssr_profile.size(); ++i)
    CHECK(b.ssr_profile[i] == doctest::Approx(3.5 * 3.5 * a.ssr_profile[i]).epsilon(1e-9));
}

TEST_CASE("sup-Wald profile properties") {
  testutil::SynthSpec spec;
  spec.T = 300;
  spec.seed = 4;
  const Dataset d = testutil::make_synthetic(spec);
  const WaldScan scan = sup_wald_scan(d, 0.15);
  REQUIRE(!scan.wald_values.empty());
  double max_w = 0.0;
  for (double w : scan.wald_values) {
    CHECK(w >= 0.0);
    max_w = std::max(max_w, w);
  }
  CHECK(scan.sup_stat == max_w);

  SUBCASE("profile invariant under instrument re-mixing") {
    RngStream rng(77);
    MatrixXd C = MatrixXd::Identity(d.q(), d.q()) +
                 0.25 * testutil::rand_matrix(rng, d.q(), d.q());
    REQUIRE(std::abs(C.determinant()) > 0.05);
    const Dataset mixed = Dataset::from_parts_unchecked(d.y(), d.X(), d.Z1(), d.Z() * C);
    const WaldScan other = sup_wald_scan(mixed, 0.15);
    REQUIRE(other.wald_values.size() == scan.wald_values.size());
    for (std::size_t i = 0; i < scan.wald_values.size(); ++i)
      CHECK(other.wald_values[i] ==
            doctest::Approx(scan.wald_values[i]).epsilon(1e-8));
  }
}

TEST_CASE("common change test: exact null gives zero statistic and p-value one") {
  testutil::SynthSpec spec;
  spec.T = 300;
  spec.theta1 = (VectorXd(2) << 0.3, 0.7).finished();
  spec.theta2 = spec.theta1;  // stable structural equation
  spec.noise = 0.0;           // u = v = 0
  Dataset clean = testutil::make_synthetic(spec);
  // Re-introduce first-stage variation only: X = Z Pi + v with noisy v but
  // u = 0 so y = Z1 th_z + X th_x exactly.
  RngStream rng(17);
  MatrixXd X = clean.X();
  VectorXd y(clean.T());
  for (Eigen::Index t = 0; t < clean.T(); ++t) {
    X(t, 0) += rng.normal();
    y(t) = spec.theta1(0) + X(t, 0) * spec.theta1(1);
  }
  const Dataset d = Dataset::from_parts_unchecked(y, X, clean.Z1(), clean.Z());
  const BreakTestReport rep = common_change_wald(d, 150);
  CHECK(rep.statistic == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(*rep.p_value == doctest::Approx(1.0));
}

TEST_CASE("chi-squared p-value matches the independent closed form at p=2") {
  // p = 2 upper tail is exp(-x/2): 5.991 -> 0.05.
  CHECK(chi_squared_upper_tail(5.991, 2) == doctest::Approx(std::exp(-5.991 / 2.0)).epsilon(1e-12));
  CHECK(chi_squared_upper_tail(5.991, 2) == doctest::Approx(0.05).epsilon(1e-3));
  CHECK(chi_squared_quantile(0.05, 2) == doctest::Approx(5.991).epsilon(1e-3));
}

TEST_CASE("common change test detects a planted common break") {
  testutil::SynthSpec spec;
  spec.T = 400;
  spec.brk = 200;
  spec.seed = 30;
  const Dataset d = testutil::make_synthetic(spec);  // theta changes at 200
  const BreakTestReport rep = common_change_wald(d, 200);
  CHECK(rep.decision_at.at(0.01));
  CHECK(*rep.p_value < 1e-4);
}

TEST_CASE("bp_ols_breaks") {
  const BpCriticalTable table = BpCriticalTable::standard_trim02();

  SUBCASE("shipped critical values") {
    CHECK(table.value_at(0, 0.01) == 3.46);
    CHECK(table.value_at(0, 0.05) == 2.90);
    CHECK(table.value_at(0, 0.10) == 2.61);
    CHECK(table.value_at(1, 0.01) == 3.63);
    CHECK(table.value_at(1, 0.05) == 3.15);
    CHECK(table.value_at(1, 0.10) == 2.89);
  }

  SUBCASE("stable noiseless series yields no breaks") {
    const int n = 90;
    MatrixXd R = MatrixXd::Ones(n, 1);
    VectorXd y = 2.0 * VectorXd::Ones(n);
    const BpResult res = bp_ols_breaks(y, R, 2, 0.2, table, 0.05);
    CHECK(res.num_breaks == 0);
    CHECK(res.breaks.empty());
  }

  SUBCASE("two planted mean shifts recovered exactly; DP equals exhaustive search") {
    const int n = 90;
    MatrixXd R = MatrixXd::Ones(n, 1);
    VectorXd y(n);
    for (int t = 0; t < n; ++t) y(t) = t < 30 ? 0.0 : (t < 60 ? 2.0 : -1.0);
    const BpResult res = bp_ols_breaks(y, R, 2, 0.2, table, 0.05);
    REQUIRE(res.num_breaks == 2);
    CHECK(res.breaks[0] == 30);
    CHECK(res.breaks[1] == 60);

    // Exhaustive two-break search with the same admissibility rule.
    const int min_len = 18;  // ceil(0.2 * 90)
    auto seg_ssr = [&](int a, int b) {
      const double mean = y.segment(a, b - a).mean();
      return (y.segment(a, b - a).array() - mean).square().sum();
    };
    double best = std::numeric_limits<double>::infinity();
    int b1 = -1, b2 = -1;
    for (int i = min_len; i + min_len <= n; ++i)
      for (int j = i + min_len; j + min_len <= n; ++j) {
        const double ssr = seg_ssr(0, i) + seg_ssr(i, j) + seg_ssr(j, n);
        if (ssr < best) {
          best = ssr;
          b1 = i;
          b2 = j;
        }
      }
    CHECK(res.breaks_by_count[1][0] == b1);
    CHECK(res.breaks_by_count[1][1] == b2);
  }

  SUBCASE("noisy single break: DP optimum equals exhaustive enumeration") {
    RngStream rng(55);
    const int n = 100;
    MatrixXd R(n, 2);
    R.col(0).setOnes();
    for (int t = 0; t < n; ++t) R(t, 1) = rng.normal();
    VectorXd y(n);
    for (int t = 0; t < n; ++t)
      y(t) = (t < 45 ? 0.0 : 1.5) + 0.5 * R(t, 1) + 0.3 * rng.normal();
    const BpResult res = bp_ols_breaks(y, R, 2, 0.2, table, 0.05);

    const int min_len = 20;
    double best = std::numeric_limits<double>::infinity();
    int best_k = -1;
    auto seg_ssr = [&](int a, int b) {
      const MatrixXd Rs = R.middleRows(a, b - a);
      const VectorXd ys = y.segment(a, b - a);
      const VectorXd th = Rs.colPivHouseholderQr().solve(ys);
      return (ys - Rs * th).squaredNorm();
    };
    for (int k = min_len; k + min_len <= n; ++k) {
      const double ssr = seg_ssr(0, k) + seg_ssr(k, n);
      if (ssr < best) {
        best = ssr;
        best_k = k;
      }
    }
    REQUIRE(!res.breaks_by_count[0].empty());
    CHECK(res.breaks_by_count[0][0] == best_k);
  }
}

TEST_CASE("critical value simulation") {
  SUBCASE("deterministic given the seed") {
    const CriticalValueTable a = simulate_sup_wald_critvals(1, 0.15, 2000, 200, 99, 2);
    const CriticalValueTable b = simulate_sup_wald_critvals(1, 0.15, 2000, 200, 99, 1);
    CHECK(a.levels.at(0.05) == b.levels.at(0.05));
    CHECK(a.levels.at(0.01) == b.levels.at(0.01));
  }

  SUBCASE("quantiles are positive and monotone in the level") {
    const CriticalValueTable t = simulate_sup_wald_critvals(2, 0.15, 5000, 200, 7);
    CHECK(t.levels.at(0.10) > 0.0);
    CHECK(t.levels.at(0.05) > t.levels.at(0.10));
    CHECK(t.levels.at(0.01) > t.levels.at(0.05));
  }

  SUBCASE("doubling the default grid moves quantiles by less than 1.5%") {
    const CriticalValueTable a = simulate_sup_wald_critvals(1, 0.15, 100000, 1000, 11, 2);
    const CriticalValueTable b = simulate_sup_wald_critvals(1, 0.15, 100000, 2000, 11, 2);
    for (double level : {0.10, 0.05}) {
      const double rel = std::fabs(a.levels.at(level) / b.levels.at(level) - 1.0);
      CHECK(rel < 0.015);
    }
  }

  SUBCASE("parameter validation") {
    CHECK_THROWS_AS(simulate_sup_wald_critvals(0, 0.15, 2000, 200, 1), Error);
    CHECK_THROWS_AS(simulate_sup_wald_critvals(1, 0.15, 10, 200, 1), Error);
    CHECK_THROWS_AS(simulate_sup_wald_critvals(1, 0.15, 2000, 10, 1), Error);
  }
}

TEST_CASE("critical value provider: hardcoded table and disk cache") {
  SUBCASE("shipped values for p=6 at 15% trimming") {
    CHECK(sup_wald_critical_value(6, 0.15, 0.01) == 24.45);
    CHECK(sup_wald_critical_value(6, 0.15, 0.05) == 20.08);
    CHECK(sup_wald_critical_value(6, 0.15, 0.10) == 17.95);
  }

  SUBCASE("simulated values round-trip through the cache file") {
    const std::string dir =
        (std::filesystem::temp_directory_path() / "breakiv_cv_cache").string();
    std::filesystem::remove_all(dir);
    CritvalSimParams sim;
    sim.n_paths = 2000;
    sim.grid_size = 200;
    sim.seed = 5;
    const double first = sup_wald_critical_value(3, 0.2, 0.05, sim, dir);
    CHECK(std::filesystem::exists(std::filesystem::path(dir) / "sup_wald_critvals.json"));
    const double second = sup_wald_critical_value(3, 0.2, 0.05, sim, dir);
    CHECK(first == second);

    std::ifstream in(std::filesystem::path(dir) / "sup_wald_critvals.json");
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(body.find("3/0.2/2000/200/5") != std::string::npos);
  }
}

TEST_CASE("sequential_sf_breaks") {
  SUBCASE("stable noisy segment returns nothing") {
    testutil::SynthSpec spec;
    spec.T = 300;
    spec.theta2 = spec.theta1;
    spec.seed = 61;
    const Dataset d = testutil::make_synthetic(spec);
    CritvalSimParams sim;
    sim.n_paths = 5000;
    sim.grid_size = 200;
    const auto breaks = sequential_sf_breaks(d, 0, d.T(), 0.15, 0.05, sim);
    CHECK(breaks.empty());
  }

  SUBCASE("one planted noiseless break is exact") {
    testutil::SynthSpec spec;
    spec.T = 300;
    spec.brk = 120;
    spec.noise = 0.0;
    const Dataset d = testutil::make_synthetic(spec);
    CritvalSimParams sim;
    sim.n_paths = 5000;
    sim.grid_size = 200;
    const auto breaks = sequential_sf_breaks(d, 0, d.T(), 0.15, 0.05, sim);
    REQUIRE(breaks.size() == 1);
    CHECK(breaks[0] == 120);
  }

  SUBCASE("two well-separated noiseless breaks are both recovered") {
    testutil::SynthSpec base;
    base.T = 600;
    base.noise = 0.0;
    base.brk = 200;
    // Build a three-regime series by hand: breaks at 200 and 400.
    RngStream rng(62);
    const int T = 600;
    VectorXd y(T);
    MatrixXd X(T, 1), Z1(T, 1), Z(T, 2);
    for (int t = 0; t < T; ++t) {
      Z1(t, 0) = 1.0;
      Z(t, 0) = 1.0;
      Z(t, 1) = rng.normal();
      X(t, 0) = Z.row(t).sum();
      const double th_z = t < 200 ? 0.0 : (t < 400 ? 2.0 : -1.0);
      const double th_x = t < 200 ? 0.0 : (t < 400 ? 2.0 : -1.0);
      y(t) = th_z + X(t, 0) * th_x;
    }
    const Dataset d(y, X, Z1, Z);
    CritvalSimParams sim;
    sim.n_paths = 5000;
    sim.grid_size = 200;
    const auto breaks = sequential_sf_breaks(d, 0, d.T(), 0.15, 0.05, sim);
    REQUIRE(breaks.size() == 2);
    CHECK(breaks[0] == 200);
    CHECK(breaks[1] == 400);
  }
}
