#include "breakiv/montecarlo.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "breakiv/parallel.hpp"
#include "breakiv/rng.hpp"
#include "breakiv/stats.hpp"

namespace breakiv {

const char* scheme_name(ErrScheme s) {
  switch (s) {
    case ErrScheme::HOM: return "HOM";
    case ErrScheme::HET1: return "HET1";
    case ErrScheme::HET2: return "HET2";
  }
  return "?";
}

const char* scenario_name(McScenario s) {
  switch (s) {
    case McScenario::KnownBreak: return "known-break";
    case McScenario::EstimatedBreak: return "estimated-break";
    case McScenario::NoBreakEstimated: return "no-break-estimated";
    case McScenario::PreTest: return "pre-test";
  }
  return "?";
}

VectorXd McConfig::theta1() const { return VectorXd::Zero(2); }

VectorXd McConfig::theta2() const {
  if (scenario == McScenario::NoBreakEstimated) return theta1();
  return theta1().array() + change_size;
}

int McConfig::burn_in() const {
  if (scheme != ErrScheme::HET2) return 0;
  return std::max(100, T / 4);
}

void McConfig::validate() const {
  if (T < 50) fail(ErrorCode::InvalidConfig, "T too small for the simulation design");
  if (n_iv < 1) fail(ErrorCode::InvalidConfig, "need at least one external instrument");
  if (!(rho > -1.0 && rho < 1.0)) fail(ErrorCode::InvalidConfig, "rho must lie in (-1,1)");
  if (n_reps < 1) fail(ErrorCode::InvalidConfig, "n_reps must be positive");
  if (lambda0 && !(*lambda0 > 0.0 && *lambda0 < 1.0))
    fail(ErrorCode::InvalidConfig, "lambda0 must lie in (0,1)");
  if (scenario != McScenario::NoBreakEstimated && !lambda0)
    fail(ErrorCode::InvalidConfig, "lambda0 required unless the DGP is stable");
  if (!(trimming > 0.0 && trimming < 0.5))
    fail(ErrorCode::InvalidConfig, "trimming must lie in (0, 0.5)");
  if (noise_scale < 0.0) fail(ErrorCode::InvalidConfig, "noise_scale must be >= 0");
}

Dataset generate_dgp(const McConfig& cfg, int rep) {
  cfg.validate();
  const int T = cfg.T;
  const int burn = cfg.burn_in();
  const int total = T + burn;
  const int q = 1 + cfg.n_iv;
  const double b = std::sqrt(1.0 - cfg.rho * cfg.rho);

  RngStream rng(substream_key(cfg.seed, static_cast<std::uint64_t>(rep)));

  // Fixed draw order per period: u, v, then the external instruments.
  MatrixXd z_ext(total, cfg.n_iv);
  VectorXd u(total), v(total);
  for (int t = 0; t < total; ++t) {
    const double eu = rng.normal();
    const double ev = rng.normal();
    u(t) = cfg.noise_scale * eu;
    v(t) = cfg.noise_scale * (cfg.rho * eu + b * ev);
    for (int j = 0; j < cfg.n_iv; ++j) z_ext(t, j) = rng.normal();
  }

  VectorXd sigma = VectorXd::Ones(total);
  if (cfg.scheme == ErrScheme::HET1) {
    // sigma_t^2 = (1 + (sum of the external instruments at t)^2) / 2; with a
    // single external instrument this is (1 + z_t^2) / 2.
    for (int t = 0; t < total; ++t) {
      const double zsum = z_ext.row(t).sum();
      sigma(t) = std::sqrt((1.0 + zsum * zsum) / 2.0);
    }
  } else if (cfg.scheme == ErrScheme::HET2) {
    // sigma_t^2 = 0.1 + 0.6 eps_{t-1}^2 + 0.3 sigma_{t-1}^2, eps_t = sigma_t u_t,
    // initialized at the unconditional variance.
    double s2 = 1.0;
    double eps_prev2 = s2;
    for (int t = 0; t < total; ++t) {
      if (t > 0) s2 = 0.1 + 0.6 * eps_prev2 + 0.3 * s2;
      sigma(t) = std::sqrt(s2);
      const double eps = sigma(t) * u(t);
      eps_prev2 = eps * eps;
    }
  }

  const int brk = cfg.lambda0 ? static_cast<int>(std::floor(*cfg.lambda0 * T)) : T;
  const VectorXd th1 = cfg.theta1();
  const VectorXd th2 = cfg.theta2();

  VectorXd y(T);
  MatrixXd X(T, 1), Z1(T, 1), Z(T, q);
  for (int t = 0; t < T; ++t) {
    const int s = burn + t;
    Z1(t, 0) = 1.0;
    Z(t, 0) = 1.0;
    for (int j = 0; j < cfg.n_iv; ++j) Z(t, j + 1) = z_ext(s, j);
    X(t, 0) = Z.row(t).sum() + v(s);  // Pi = (1, ..., 1)'
    const VectorXd& th = (t + 1 <= brk) ? th1 : th2;
    y(t) = th(0) + X(t, 0) * th(1) + sigma(s) * u(s);
  }
  return Dataset(std::move(y), std::move(X), std::move(Z1), std::move(Z));
}

namespace {

struct RepRecord {
  bool ok = false;
  // [estimator][regime]: estimate and asymptotic std of the endogenous
  // coefficient.
  std::array<std::array<double, 2>, 3> est{};
  std::array<std::array<double, 2>, 3> se{};
  double est_break = 0.0;
  bool detected = false;
  bool has_break_estimate = false;
};

// Pulls the endogenous coefficient and its standard error for regime r.
void read_regime(const EstimateResult& res, int regime, Eigen::Index p1, Eigen::Index p,
                 double& est, double& se) {
  const Eigen::Index idx = static_cast<Eigen::Index>(regime) * p + p1;
  est = res.params.theta_per_regime[static_cast<std::size_t>(regime)](p1);
  se = res.std_errors(idx);
}

RepRecord run_one_rep(const McConfig& cfg, int rep) {
  RepRecord rec;
  const Dataset data = generate_dgp(cfg, rep);
  const Eigen::Index p1 = data.p1();
  const Eigen::Index p = data.p();

  auto record_two_regime = [&](int j, const EstimateResult& res) {
    for (int r = 0; r < 2; ++r)
      read_regime(res, r, p1, p, rec.est[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)],
                  rec.se[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)]);
  };
  auto record_full_sample = [&](int j, const EstimateResult& res) {
    double est = 0.0, se = 0.0;
    read_regime(res, 0, p1, p, est, se);
    for (int r = 0; r < 2; ++r) {
      rec.est[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] = est;
      rec.se[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] = se;
    }
  };

  auto estimate_split = [&](int k) {
    record_two_regime(0, split_sample_gmm(data, k, cfg.hac));
    record_two_regime(1, ts2sls(data, k, cfg.hac));
    record_two_regime(2, tsgmm(data, k, cfg.hac));
  };

  switch (cfg.scenario) {
    case McScenario::KnownBreak: {
      estimate_split(static_cast<int>(std::floor(*cfg.lambda0 * cfg.T)));
      break;
    }
    case McScenario::EstimatedBreak:
    case McScenario::NoBreakEstimated: {
      const BreakScan scan = estimate_break_2sls(data, cfg.trimming);
      rec.est_break = scan.break_index;
      rec.has_break_estimate = true;
      estimate_split(scan.break_index);
      break;
    }
    case McScenario::PreTest: {
      const WaldScan scan = sup_wald_scan(data, cfg.trimming, cfg.hac);
      const double cv = sup_wald_critical_value(static_cast<int>(p), cfg.trimming,
                                                cfg.level, cfg.critval_sim, cfg.cache_dir);
      rec.detected = scan.sup_stat > cv;
      if (rec.detected) {
        const BreakScan bscan = estimate_break_2sls(data, cfg.trimming);
        rec.est_break = bscan.break_index;
        rec.has_break_estimate = true;
        estimate_split(bscan.break_index);
      } else {
        record_full_sample(0, full_sample_gmm(data, cfg.hac));
        record_full_sample(1, full_sample_ts2sls(data, cfg.hac));
        record_full_sample(2, full_sample_tsgmm(data, cfg.hac));
      }
      break;
    }
  }
  rec.ok = true;
  return rec;
}

}  // namespace

McReport run_mc(const McConfig& cfg) {
  cfg.validate();
  McReport report;
  report.config = cfg;

  std::vector<RepRecord> recs(static_cast<std::size_t>(cfg.n_reps));
  parallel_for(
      static_cast<std::size_t>(cfg.n_reps),
      [&](std::size_t r) {
        try {
          recs[r] = run_one_rep(cfg, static_cast<int>(r));
        } catch (const Error&) {
          recs[r].ok = false;
        }
      },
      cfg.threads);

  const double true_x1 = cfg.theta1()(1);
  const double true_x2 = cfg.theta2()(1);
  const double truth[2] = {true_x1, true_x2};

  int n_ok = 0, n_detected = 0, n_breaks = 0;
  double sum_break = 0.0;
  for (const auto& rec : recs) {
    if (!rec.ok) continue;
    ++n_ok;
    if (rec.detected) ++n_detected;
    if (rec.has_break_estimate) {
      ++n_breaks;
      sum_break += rec.est_break;
      report.estimated_breaks.push_back(rec.est_break);
    }
  }
  report.failed_reps = cfg.n_reps - n_ok;
  report.flagged = report.failed_reps > cfg.n_reps / 100;
  if (n_ok == 0) fail(ErrorCode::SingularDesign, "every replication failed");

  for (int j = 0; j < 3; ++j) {
    for (int r = 0; r < 2; ++r) {
      double sum_err = 0.0, sum_se = 0.0, covered = 0.0;
      for (const auto& rec : recs) {
        if (!rec.ok) continue;
        const double err =
            rec.est[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] - truth[r];
        const double se = rec.se[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)];
        sum_err += err;
        sum_se += se;
        // Absolute slack covers exact (zero-variance) estimators.
        if (std::fabs(err) <= kZ975 * se + 1e-10) covered += 1.0;
      }
      McCell& cell = report.cells[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)];
      cell.bias = sum_err / n_ok;
      cell.asy_std = sum_se / n_ok;
      cell.coverage = covered / n_ok;
      cell.ci_length = 2.0 * kZ975 * cell.asy_std;
      double ss = 0.0;
      for (const auto& rec : recs) {
        if (!rec.ok) continue;
        const double err =
            rec.est[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)] - truth[r];
        ss += (err - cell.bias) * (err - cell.bias);
      }
      cell.mc_std = n_ok > 1 ? std::sqrt(ss / (n_ok - 1)) : 0.0;
      cell.rmse = std::sqrt(cell.bias * cell.bias + cell.asy_std * cell.asy_std);
    }
  }

  if (n_breaks > 0) report.mean_estimated_break = sum_break / n_breaks;
  if (cfg.scenario == McScenario::PreTest)
    report.detection_prob = static_cast<double>(n_detected) / n_ok;
  return report;
}

std::vector<DetectionRow> detection_experiment(const McConfig& cfg,
                                               const std::vector<double>& change_sizes) {
  cfg.validate();
  std::vector<DetectionRow> rows;
  for (double size : change_sizes) {
    McConfig c = cfg;
    c.change_size = size;
    c.scenario = McScenario::EstimatedBreak;  // location recorded for every rep

    const int p_tested = 2;  // intercept + endogenous coefficient in this design
    const double cv = sup_wald_critical_value(p_tested, c.trimming, c.level,
                                              c.critval_sim, c.cache_dir);
    std::vector<char> rejected(static_cast<std::size_t>(c.n_reps), 0);
    std::vector<double> breaks(static_cast<std::size_t>(c.n_reps), 0.0);
    std::vector<char> ok(static_cast<std::size_t>(c.n_reps), 0);
    parallel_for(
        static_cast<std::size_t>(c.n_reps),
        [&](std::size_t r) {
          try {
            const Dataset data = generate_dgp(c, static_cast<int>(r));
            const WaldScan scan = sup_wald_scan(data, c.trimming, c.hac);
            rejected[r] = scan.sup_stat > cv ? 1 : 0;
            breaks[r] = estimate_break_2sls(data, c.trimming).break_index;
            ok[r] = 1;
          } catch (const Error&) {
            ok[r] = 0;
          }
        },
        c.threads);

    DetectionRow row;
    row.change_size = size;
    int n_ok = 0;
    double sum_rej = 0.0, sum_brk = 0.0;
    for (std::size_t r = 0; r < rejected.size(); ++r) {
      if (!ok[r]) continue;
      ++n_ok;
      sum_rej += rejected[r];
      sum_brk += breaks[r];
    }
    if (n_ok == 0) fail(ErrorCode::SingularDesign, "every replication failed");
    row.detection_prob = sum_rej / n_ok;
    row.mean_estimated_break = sum_brk / n_ok;
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string row_label(int j, int regime) {
  static const char* names[3] = {"GMM", "TS2SLS", "TSGMM"};
  std::ostringstream os;
  os << "theta_{" << names[j] << "," << (regime + 1) << "}";
  return os.str();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

std::string to_markdown(const McReport& report) {
  std::ostringstream os;
  os << "| Estimator | Bias | MC Std | As. Std. | RMSE | Length | Coverage |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (int r = 0; r < 2; ++r)
    for (int j = 0; j < 3; ++j) {
      const McCell& c = report.cells[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)];
      os << "| " << row_label(j, r) << " | " << fmt(c.bias) << " | " << fmt(c.mc_std)
         << " | " << fmt(c.asy_std) << " | " << fmt(c.rmse) << " | " << fmt(c.ci_length)
         << " | " << fmt(c.coverage) << " |\n";
    }
  if (report.mean_estimated_break)
    os << "\nEstimated change location: " << fmt(*report.mean_estimated_break) << "\n";
  if (report.detection_prob)
    os << "Prob. of detecting the change: " << fmt(*report.detection_prob) << "\n";
  if (report.failed_reps > 0)
    os << "Failed replications: " << report.failed_reps
       << (report.flagged ? " (flagged: above 1%)" : "") << "\n";
  return os.str();
}

std::string to_csv(const McReport& report) {
  std::ostringstream os;
  os << "estimator,regime,bias,mc_std,asy_std,rmse,length,coverage\n";
  static const char* names[3] = {"GMM", "TS2SLS", "TSGMM"};
  for (int r = 0; r < 2; ++r)
    for (int j = 0; j < 3; ++j) {
      const McCell& c = report.cells[static_cast<std::size_t>(j)][static_cast<std::size_t>(r)];
      os << names[j] << ',' << (r + 1) << ',' << fmt(c.bias) << ',' << fmt(c.mc_std) << ','
         << fmt(c.asy_std) << ',' << fmt(c.rmse) << ',' << fmt(c.ci_length) << ','
         << fmt(c.coverage) << "\n";
    }
  return os.str();
}

std::string breaks_to_csv(const McReport& report) {
  std::ostringstream os;
  os << "replication,estimated_break\n";
  for (std::size_t i = 0; i < report.estimated_breaks.size(); ++i)
    os << i << ',' << report.estimated_breaks[i] << "\n";
  return os.str();
}

std::string to_markdown(const std::vector<DetectionRow>& rows) {
  std::ostringstream os;
  os << "| Change size | Prob. of detecting change | Estimated change point |\n";
  os << "|---|---|---|\n";
  for (const auto& r : rows)
    os << "| " << fmt(r.change_size) << " | " << fmt(r.detection_prob) << " | "
       << fmt(r.mean_estimated_break) << " |\n";
  return os.str();
}

std::string to_csv(const std::vector<DetectionRow>& rows) {
  std::ostringstream os;
  os << "change_size,detection_prob,mean_estimated_break\n";
  for (const auto& r : rows)
    os << fmt(r.change_size) << ',' << fmt(r.detection_prob) << ','
       << fmt(r.mean_estimated_break) << "\n";
  return os.str();
}

}  // namespace breakiv
