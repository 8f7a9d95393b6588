#pragma once

#include <optional>
#include <string>
#include <vector>

#include "breakiv/changepoint.hpp"
#include "breakiv/dataset.hpp"
#include "breakiv/estimators.hpp"

namespace breakiv {

struct PipelineConfig {
  double trimming = 0.15;      // structural-equation scans and break merging
  double bp_trimming = 0.2;    // first-stage least-squares break detection
  double level = 0.05;
  int max_breaks = 2;          // per first-stage equation
  HacConfig hac;
  bool bonferroni = true;
  BpCriticalTable bp_table = BpCriticalTable::standard_trim02();
  CritvalSimParams critval_sim;
  std::optional<std::string> cache_dir;
};

struct DecisionRecord {
  std::string stage;        // "S1" .. "S4"
  std::string description;
  double statistic = 0.0;
  double critical_value = 0.0;
  double level = 0.0;
  bool rejected = false;
  std::string note;
};

struct SegmentEstimate {
  Eigen::Index begin = 0;  // 0-based row range [begin, end)
  Eigen::Index end = 0;
  std::vector<int> inner_breaks;  // global break indices inside the segment
  EstimateResult result;
};

struct PipelineReport {
  std::vector<int> first_stage_breaks;   // B_S1
  std::vector<int> second_stage_breaks;  // B_S2,NC
  std::vector<int> common_breaks;        // B_S2,C
  std::vector<SegmentEstimate> final_estimates;
  std::vector<DecisionRecord> decisions;
  int bonferroni_divisor = 1;
  double effective_level = 0.05;

  std::vector<int> all_second_stage_breaks() const;  // sorted union
};

// The four-stage procedure: (1) least-squares break detection per
// first-stage equation, (2) sequential sup-Wald detection in the
// structural equation within stable-first-stage segments, (3) common-change
// Wald tests at the first-stage breaks, (4) TSGMM within segments holding a
// detected structural change, full-segment GMM elsewhere. Under
// cfg.bonferroni, the working level is level / (realized test count),
// with the count taken from a dry pass at the nominal level.
PipelineReport run_four_stage(const Dataset& data, const PipelineConfig& cfg);

std::string to_json(const PipelineReport& report);
std::string to_text(const PipelineReport& report);

}  // namespace breakiv
