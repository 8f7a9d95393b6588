#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "breakiv/changepoint.hpp"
#include "breakiv/dataset.hpp"
#include "breakiv/estimators.hpp"

namespace breakiv {

enum class ErrScheme { HOM, HET1, HET2 };
enum class McScenario { KnownBreak, EstimatedBreak, NoBreakEstimated, PreTest };

const char* scheme_name(ErrScheme s);
const char* scenario_name(McScenario s);

// Simulation design: intercept plus n_iv external standard-normal
// instruments, bivariate normal errors with correlation rho, first stage
// Pi = (1,...,1)', structural parameters theta1 shifting by change_size in
// every coordinate after floor(T lambda0).
struct McConfig {
  int T = 400;
  int n_iv = 1;
  double rho = -0.5;
  std::optional<double> lambda0 = 0.4;
  double change_size = 1.0;
  ErrScheme scheme = ErrScheme::HOM;
  int n_reps = 1000;
  std::uint64_t seed = 1;
  McScenario scenario = McScenario::KnownBreak;
  double trimming = 0.15;
  double level = 0.05;
  HacConfig hac;
  unsigned threads = 0;
  double noise_scale = 1.0;  // 0 gives the degenerate zero-noise variant
  CritvalSimParams critval_sim;
  std::optional<std::string> cache_dir;

  // theta_z1 = theta_x1 = 0; regime 2 adds change_size to both.
  VectorXd theta1() const;
  VectorXd theta2() const;
  int burn_in() const;  // HET2 GARCH recursion burn-in
  void validate() const;
};

Dataset generate_dgp(const McConfig& cfg, int rep);

struct McCell {
  double bias = 0.0;
  double mc_std = 0.0;
  double asy_std = 0.0;
  double rmse = 0.0;      // sqrt(bias^2 + asy_std^2)
  double ci_length = 0.0;
  double coverage = 0.0;
};

struct McReport {
  McConfig config;
  // cells[estimator][regime], estimators ordered GMM, TS2SLS, TSGMM.
  std::array<std::array<McCell, 2>, 3> cells{};
  std::optional<double> mean_estimated_break;
  std::optional<double> detection_prob;
  int failed_reps = 0;
  bool flagged = false;  // more than 1% of replications failed
  // Per-replication break estimates in replication order (histogram data).
  std::vector<double> estimated_breaks;
};

// One line per replication, for external histogram plotting.
std::string breaks_to_csv(const McReport& report);

McReport run_mc(const McConfig& cfg);

struct DetectionRow {
  double change_size = 0.0;
  double detection_prob = 0.0;
  double mean_estimated_break = 0.0;
};

std::vector<DetectionRow> detection_experiment(const McConfig& cfg,
                                               const std::vector<double>& change_sizes);

// Report-table rendering: columns Bias, MC Std, As. Std., RMSE,
// Length, Coverage, rows theta_{j,i} for j in {GMM, TS2SLS, TSGMM}.
std::string to_markdown(const McReport& report);
std::string to_csv(const McReport& report);
std::string to_markdown(const std::vector<DetectionRow>& rows);
std::string to_csv(const std::vector<DetectionRow>& rows);

}  // namespace breakiv
