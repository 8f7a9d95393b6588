#include "breakiv/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "breakiv/stats.hpp"

namespace breakiv {

std::vector<int> PipelineReport::all_second_stage_breaks() const {
  std::set<int> u(second_stage_breaks.begin(), second_stage_breaks.end());
  u.insert(common_breaks.begin(), common_breaks.end());
  return {u.begin(), u.end()};
}

namespace {

struct StageRun {
  PipelineReport report;
  int tests = 0;
};

std::string range_label(Eigen::Index lo, Eigen::Index hi) {
  std::ostringstream os;
  os << "rows (" << lo << ", " << hi << "]";
  return os.str();
}

void stage2_recurse(const Dataset& data, Eigen::Index begin, Eigen::Index end,
                    const PipelineConfig& cfg, double level, int depth, StageRun& run,
                    std::vector<int>& found) {
  const Eigen::Index len = end - begin;
  const Eigen::Index min_half = std::max<Eigen::Index>(
      std::max(data.p(), data.q()) + 1,
      static_cast<Eigen::Index>(std::ceil(cfg.trimming * static_cast<double>(len))));
  if (len < 2 * min_half) return;

  DecisionRecord rec;
  rec.stage = "S2";
  rec.description = "sup-Wald scan over " + range_label(begin, end);
  rec.level = level;
  if (depth > 0) rec.note = "conjecture-based sequential decision";

  int local_break = 0;
  try {
    const Dataset segment = DatasetView(data, begin, end - begin).materialize();
    const WaldScan scan = sup_wald_scan(segment, cfg.trimming, cfg.hac);
    rec.statistic = scan.sup_stat;
    rec.critical_value = sup_wald_critical_value(static_cast<int>(data.p()), cfg.trimming,
                                                 level, cfg.critval_sim, cfg.cache_dir);
    rec.rejected = scan.sup_stat > rec.critical_value;
    ++run.tests;
    if (rec.rejected) local_break = estimate_break_2sls(segment, cfg.trimming).break_index;
  } catch (const Error& e) {
    rec.rejected = false;
    rec.note = std::string("downgraded after error: ") + e.what();
    run.report.decisions.push_back(rec);
    return;
  }
  run.report.decisions.push_back(rec);
  if (!rec.rejected) return;

  const Eigen::Index global_break = begin + local_break;
  found.push_back(static_cast<int>(global_break));
  stage2_recurse(data, begin, global_break, cfg, level, depth + 1, run, found);
  stage2_recurse(data, global_break, end, cfg, level, depth + 1, run, found);
}

StageRun execute(const Dataset& data, const PipelineConfig& cfg, double level) {
  StageRun run;
  run.report.effective_level = level;
  const Eigen::Index T = data.T();
  const int merge_radius =
      static_cast<int>(std::ceil(cfg.trimming * static_cast<double>(T)));

  // Stage 1: least-squares break detection per first-stage equation.
  std::vector<int> rf_breaks;
  for (Eigen::Index j = 0; j < data.p2(); ++j) {
    try {
      const BpResult bp = bp_ols_breaks(data.X().col(j), data.Z(), cfg.max_breaks,
                                        cfg.bp_trimming, cfg.bp_table, level);
      const int performed =
          std::min<int>(bp.num_breaks + 1, static_cast<int>(bp.seq_stats.size()));
      for (int l = 0; l < performed; ++l) {
        DecisionRecord rec;
        rec.stage = "S1";
        std::ostringstream os;
        os << "first-stage equation " << (j + 1) << ": F(" << (l + 1) << "|" << l << ")";
        rec.description = os.str();
        rec.statistic = bp.seq_stats[static_cast<std::size_t>(l)];
        rec.critical_value = cfg.bp_table.value_at(l, level);
        rec.level = level;
        rec.rejected = rec.statistic > rec.critical_value;
        run.report.decisions.push_back(rec);
        ++run.tests;
      }
      rf_breaks.insert(rf_breaks.end(), bp.breaks.begin(), bp.breaks.end());
    } catch (const Error& e) {
      DecisionRecord rec;
      rec.stage = "S1";
      rec.description = "first-stage equation " + std::to_string(j + 1);
      rec.level = level;
      rec.note = std::string("downgraded after error: ") + e.what();
      run.report.decisions.push_back(rec);
    }
  }
  std::sort(rf_breaks.begin(), rf_breaks.end());
  for (int b : rf_breaks) {
    if (!run.report.first_stage_breaks.empty() &&
        b - run.report.first_stage_breaks.back() < merge_radius)
      continue;  // proximity merge keeps the earlier index
    run.report.first_stage_breaks.push_back(b);
  }

  // Stage 2: sequential sup-Wald within each stable-first-stage segment.
  std::vector<Eigen::Index> rf_bounds = {0};
  for (int b : run.report.first_stage_breaks) rf_bounds.push_back(b);
  rf_bounds.push_back(T);
  std::vector<int> sf_breaks;
  for (std::size_t s = 0; s + 1 < rf_bounds.size(); ++s)
    stage2_recurse(data, rf_bounds[s], rf_bounds[s + 1], cfg, level, 0, run, sf_breaks);
  std::sort(sf_breaks.begin(), sf_breaks.end());
  run.report.second_stage_breaks = sf_breaks;

  // Stage 3: common-change tests at the first-stage breaks, skipped where a
  // stage-2 break already sits at that location.
  std::vector<Eigen::Index> all_bounds = rf_bounds;
  for (int b : sf_breaks) all_bounds.push_back(b);
  std::sort(all_bounds.begin(), all_bounds.end());
  for (int b : run.report.first_stage_breaks) {
    bool already = false;
    for (int s : sf_breaks)
      if (std::abs(s - b) < merge_radius) already = true;
    if (already) {
      DecisionRecord rec;
      rec.stage = "S3";
      rec.description = "common-change test at " + std::to_string(b);
      rec.level = level;
      rec.note = "skipped: a stage-2 break already covers this location";
      run.report.decisions.push_back(rec);
      continue;
    }
    Eigen::Index lower = 0, upper = T;
    for (Eigen::Index bound : all_bounds) {
      if (bound < b) lower = std::max(lower, bound);
      if (bound > b) upper = std::min(upper, bound);
    }
    DecisionRecord rec;
    rec.stage = "S3";
    rec.description =
        "common-change test at " + std::to_string(b) + " within " + range_label(lower, upper);
    rec.level = level;
    try {
      const Dataset window = DatasetView(data, lower, upper - lower).materialize();
      const BreakTestReport test =
          common_change_wald(window, b - static_cast<int>(lower), cfg.hac);
      rec.statistic = test.statistic;
      rec.critical_value = chi_squared_quantile(level, static_cast<int>(data.p()));
      rec.rejected = test.statistic > rec.critical_value;
      ++run.tests;
      if (rec.rejected) run.report.common_breaks.push_back(b);
    } catch (const Error& e) {
      rec.rejected = false;
      rec.note = std::string("downgraded after error: ") + e.what();
    }
    run.report.decisions.push_back(rec);
  }

  // Stage 4: estimation within each stable-first-stage segment.
  for (std::size_t s = 0; s + 1 < rf_bounds.size(); ++s) {
    const Eigen::Index lo = rf_bounds[s], hi = rf_bounds[s + 1];
    std::vector<int> inner;
    for (int b : sf_breaks)
      if (b > lo && b < hi) inner.push_back(b);

    const Dataset segment = DatasetView(data, lo, hi - lo).materialize();
    auto log_choice = [&](const std::string& what) {
      DecisionRecord rec;
      rec.stage = "S4";
      rec.description = what + " on " + range_label(lo, hi);
      rec.level = level;
      rec.note = inner.empty() ? "no structural break inside this segment"
                               : "structural break(s) inside this segment";
      run.report.decisions.push_back(rec);
    };

    if (inner.empty()) {
      SegmentEstimate est;
      est.begin = lo;
      est.end = hi;
      est.result = full_sample_gmm(segment, cfg.hac);
      run.report.final_estimates.push_back(std::move(est));
      log_choice("full-segment GMM");
    } else if (inner.size() == 1) {
      SegmentEstimate est;
      est.begin = lo;
      est.end = hi;
      est.inner_breaks = inner;
      est.result = tsgmm(segment, inner[0] - static_cast<int>(lo), cfg.hac);
      run.report.final_estimates.push_back(std::move(est));
      log_choice("TSGMM");
    } else {
      // Multiple structural breaks: two-regime TSGMM applied to consecutive
      // regime pairs inside the stable-first-stage segment.
      std::vector<Eigen::Index> bounds = {lo};
      for (int b : inner) bounds.push_back(b);
      bounds.push_back(hi);
      for (std::size_t j = 0; j + 2 < bounds.size(); ++j) {
        const Eigen::Index a = bounds[j], c = bounds[j + 2];
        const Dataset pair = DatasetView(data, a, c - a).materialize();
        SegmentEstimate est;
        est.begin = a;
        est.end = c;
        est.inner_breaks = {static_cast<int>(bounds[j + 1])};
        est.result = tsgmm(pair, static_cast<int>(bounds[j + 1] - a), cfg.hac);
        run.report.final_estimates.push_back(std::move(est));
      }
      log_choice("pairwise TSGMM");
    }
  }
  return run;
}

}  // namespace

PipelineReport run_four_stage(const Dataset& data, const PipelineConfig& cfg) {
  if (!(cfg.level > 0.0 && cfg.level < 1.0))
    fail(ErrorCode::InvalidConfig, "level must lie in (0,1)");
  StageRun nominal = execute(data, cfg, cfg.level);
  if (!cfg.bonferroni) {
    nominal.report.bonferroni_divisor = 1;
    return std::move(nominal.report);
  }
  const int divisor = std::max(1, nominal.tests);
  StageRun corrected = execute(data, cfg, cfg.level / divisor);
  corrected.report.bonferroni_divisor = divisor;
  return std::move(corrected.report);
}

namespace {

nlohmann::json estimate_to_json(const SegmentEstimate& est) {
  nlohmann::json j;
  j["rows_begin"] = est.begin;
  j["rows_end"] = est.end;
  j["inner_breaks"] = est.inner_breaks;
  j["estimator"] = estimator_name(est.result.kind);
  nlohmann::json regimes = nlohmann::json::array();
  const Eigen::Index p = est.result.params.theta_per_regime.front().size();
  for (std::size_t r = 0; r < est.result.params.theta_per_regime.size(); ++r) {
    nlohmann::json reg;
    const VectorXd& theta = est.result.params.theta_per_regime[r];
    std::vector<double> coef(theta.data(), theta.data() + theta.size());
    reg["theta"] = coef;
    std::vector<double> se;
    for (Eigen::Index i = 0; i < p; ++i)
      se.push_back(est.result.std_errors(static_cast<Eigen::Index>(r) * p + i));
    reg["std_errors"] = se;
    regimes.push_back(reg);
  }
  j["regimes"] = regimes;
  return j;
}

}  // namespace

std::string to_json(const PipelineReport& report) {
  nlohmann::json j;
  j["first_stage_breaks"] = report.first_stage_breaks;
  j["second_stage_breaks"] = report.second_stage_breaks;
  j["common_breaks"] = report.common_breaks;
  j["all_second_stage_breaks"] = report.all_second_stage_breaks();
  j["bonferroni_divisor"] = report.bonferroni_divisor;
  j["effective_level"] = report.effective_level;
  nlohmann::json decisions = nlohmann::json::array();
  for (const auto& d : report.decisions) {
    nlohmann::json rec;
    rec["stage"] = d.stage;
    rec["description"] = d.description;
    rec["statistic"] = d.statistic;
    rec["critical_value"] = d.critical_value;
    rec["level"] = d.level;
    rec["rejected"] = d.rejected;
    rec["note"] = d.note;
    decisions.push_back(rec);
  }
  j["decisions"] = decisions;
  nlohmann::json estimates = nlohmann::json::array();
  for (const auto& est : report.final_estimates) estimates.push_back(estimate_to_json(est));
  j["final_estimates"] = estimates;
  return j.dump(2);
}

std::string to_text(const PipelineReport& report) {
  std::ostringstream os;
  auto list = [&](const std::vector<int>& v) {
    if (v.empty()) {
      os << "none";
      return;
    }
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  };
  os << "First-stage breaks (B_S1): ";
  list(report.first_stage_breaks);
  os << "\nStructural breaks, stable first stage (B_S2,NC): ";
  list(report.second_stage_breaks);
  os << "\nCommon breaks (B_S2,C): ";
  list(report.common_breaks);
  os << "\nBonferroni divisor: " << report.bonferroni_divisor
     << " (working level " << report.effective_level << ")\n";
  os << "\nSegment estimates:\n";
  for (const auto& est : report.final_estimates) {
    os << "  rows (" << est.begin << ", " << est.end << "] via "
       << estimator_name(est.result.kind);
    if (!est.inner_breaks.empty()) {
      os << " with break(s) at ";
      for (std::size_t i = 0; i < est.inner_breaks.size(); ++i)
        os << (i ? ", " : "") << est.inner_breaks[i];
    }
    os << "\n";
    const Eigen::Index p = est.result.params.theta_per_regime.front().size();
    for (std::size_t r = 0; r < est.result.params.theta_per_regime.size(); ++r) {
      os << "    regime " << (r + 1) << ":";
      for (Eigen::Index i = 0; i < p; ++i) {
        os << " " << est.result.params.theta_per_regime[r](i) << " ("
           << est.result.std_errors(static_cast<Eigen::Index>(r) * p + i) << ")";
      }
      os << "\n";
    }
  }
  os << "\nDecisions:\n";
  for (const auto& d : report.decisions) {
    os << "  [" << d.stage << "] " << d.description;
    if (d.note.find("skipped") == std::string::npos && d.note.find("error") == std::string::npos)
      os << ": stat=" << d.statistic << " cv=" << d.critical_value << " level=" << d.level
         << (d.rejected ? " -> reject" : " -> keep");
    if (!d.note.empty()) os << " [" << d.note << "]";
    os << "\n";
  }
  return os.str();
}

}  // namespace breakiv
