#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "breakiv/dataset.hpp"
#include "breakiv/hac.hpp"

namespace breakiv {

// --------------------------------------------------------------------------
// Critical values

struct CriticalValueTable {
  int p = 0;
  double trimming = 0.15;
  std::map<double, double> levels;  // test level -> critical value
  enum class Source { Hardcoded, Simulated } source = Source::Hardcoded;
  int n_paths = 0;
  int grid_size = 0;
  std::uint64_t seed = 0;

  double value_at(double level) const;
};

struct CritvalSimParams {
  int n_paths = 100000;
  int grid_size = 1000;
  std::uint64_t seed = 20240214;
  unsigned threads = 0;
};

// Simulates the sup over [eps, 1-eps] of ||B_p(l) - l B_p(1)||^2 / (l(1-l))
// from p independent standard Brownian motions on a uniform grid of scaled
// Gaussian partial sums; returns empirical 90/95/99% quantiles. Paths own
// pre-assigned RNG substreams, so results are independent of thread count.
CriticalValueTable simulate_sup_wald_critvals(int p, double trimming, int n_paths,
                                              int grid_size, std::uint64_t seed,
                                              unsigned threads = 0);

// Sorted per-path suprema (for quantiles at arbitrary levels).
std::vector<double> simulate_sup_wald_suprema(int p, double trimming, int n_paths,
                                              int grid_size, std::uint64_t seed,
                                              unsigned threads = 0);

// Resolves a sup-Wald critical value: hardcoded tables for the shipped
// configurations, then a JSON disk cache keyed by p/eps/nPaths/gridSize/seed,
// then simulation. Results are memoized in-process.
double sup_wald_critical_value(int p, double trimming, double level,
                               const CritvalSimParams& sim = {},
                               const std::optional<std::string>& cache_dir = std::nullopt);

CriticalValueTable sup_wald_table(int p, double trimming,
                                  const CritvalSimParams& sim = {},
                                  const std::optional<std::string>& cache_dir = std::nullopt);

// Sequential sup-F critical values for least-squares break detection, rows
// F(1|0), F(2|1), ... at levels 0.10 / 0.05 / 0.01.
struct BpCriticalTable {
  double trimming = 0.2;
  std::vector<std::array<double, 3>> rows;  // [l][{0.10, 0.05, 0.01}]

  // Picks the nearest tabulated level at or below `level` (conservative);
  // rows beyond the table reuse the last row.
  double value_at(int l, double level) const;

  static BpCriticalTable standard_trim02();
};

// --------------------------------------------------------------------------
// Break location estimation and detection

struct BreakScan {
  int break_index = 0;   // 1-based last index of the first regime
  double lambda_hat = 0.0;
  std::vector<int> candidates;
  std::vector<double> ssr_profile;
};

// Minimizes the 2SLS split criterion with a full-sample first stage over
// every admissible integer break in [ceil(eps T), floor((1-eps) T)].
// Candidates with singular segment designs get +inf SSR; ties resolve to
// the smallest index.
BreakScan estimate_break_2sls(const Dataset& data, double trimming);

struct WaldScan {
  std::vector<int> candidates;
  std::vector<double> wald_values;
  double sup_stat = 0.0;
  int argmax_break = 0;  // the implied break location lambda-hat^W
  double trimming = 0.15;
};

WaldScan sup_wald_scan(const Dataset& data, double trimming, const HacConfig& cfg = {});

struct BreakTestReport {
  double statistic = 0.0;
  std::map<double, double> critical_values;  // level -> critical value
  std::map<double, bool> decision_at;        // level -> reject?
  std::optional<int> estimated_break;
  std::optional<double> p_value;
};

// Wald test for a change in the structural equation at a first-stage break:
// per-segment first stages and 2SLS fits, chi-squared(p) null.
BreakTestReport common_change_wald(const Dataset& data, int first_stage_break,
                                   const HacConfig& cfg = {});

// Chi-squared reference report helper (quantiles at 10/5/1%).
double chi_squared_quantile(double upper_tail_prob, int k);

// --------------------------------------------------------------------------
// Least-squares multiple-break detection (per first-stage equation)

struct BpResult {
  std::vector<int> breaks;        // at the decided number of breaks
  std::vector<double> seq_stats;  // F(l+1 | l) for l = 0..max_breaks-1
  int num_breaks = 0;
  // Global-SSR-optimal break sets for every m = 1..max_breaks.
  std::vector<std::vector<int>> breaks_by_count;
};

BpResult bp_ols_breaks(const VectorXd& y, const MatrixXd& regressors, int max_breaks,
                       double trimming, const BpCriticalTable& table, double level);

// Recursive sup-Wald detection within a row range [begin, end): scan, and
// on rejection fix the break at the 2SLS break estimate and recurse on both
// sides. Segments too short to split terminate the recursion silently.
std::vector<int> sequential_sf_breaks(const Dataset& data, Eigen::Index begin,
                                      Eigen::Index end, double trimming, double level,
                                      const CritvalSimParams& sim = {},
                                      const std::optional<std::string>& cache_dir = std::nullopt,
                                      const HacConfig& cfg = {});

}  // namespace breakiv
