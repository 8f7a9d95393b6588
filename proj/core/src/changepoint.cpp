#include "breakiv/changepoint.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "breakiv/linalg.hpp"
#include "breakiv/stats.hpp"

namespace breakiv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct CandidateRange {
  int lo = 0, hi = -1;  // inclusive candidate break indices
  bool empty() const { return lo > hi; }
};

CandidateRange candidate_range(Eigen::Index T, Eigen::Index p, double trimming) {
  if (!(trimming > 0.0 && trimming < 0.5))
    fail(ErrorCode::InvalidConfig, "trimming must lie in (0, 0.5)");
  CandidateRange r;
  const double Td = static_cast<double>(T);
  r.lo = std::max<int>(static_cast<int>(std::ceil(trimming * Td)), static_cast<int>(p));
  r.hi = std::min<int>(static_cast<int>(std::floor((1.0 - trimming) * Td)),
                       static_cast<int>(T - p));
  return r;
}

// Prefix sums of w_t w_t', w_t y_t, and y_t^2 for O(1) per-candidate OLS.
struct PrefixOls {
  std::vector<MatrixXd> ww;  // index t: sum over 1..t
  std::vector<VectorXd> wy;
  std::vector<double> yy;

  PrefixOls(const MatrixXd& w, const VectorXd& y) {
    const Eigen::Index T = y.size();
    const Eigen::Index p = w.cols();
    ww.assign(static_cast<std::size_t>(T) + 1, MatrixXd::Zero(p, p));
    wy.assign(static_cast<std::size_t>(T) + 1, VectorXd::Zero(p));
    yy.assign(static_cast<std::size_t>(T) + 1, 0.0);
    for (Eigen::Index t = 0; t < T; ++t) {
      const std::size_t i = static_cast<std::size_t>(t);
      ww[i + 1] = ww[i] + w.row(t).transpose() * w.row(t);
      wy[i + 1] = wy[i] + w.row(t).transpose() * y(t);
      yy[i + 1] = yy[i] + y(t) * y(t);
    }
  }

  // OLS of y on w over (a, b] (1-based closed interval [a+1, b]).
  // Returns false when the segment design is singular.
  bool fit(int a, int b, VectorXd& theta, double& ssr) const {
    const MatrixXd A = ww[static_cast<std::size_t>(b)] - ww[static_cast<std::size_t>(a)];
    const VectorXd rhs = wy[static_cast<std::size_t>(b)] - wy[static_cast<std::size_t>(a)];
    Eigen::LLT<MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) return false;
    const VectorXd d = llt.matrixL().toDenseMatrix().diagonal();
    if (d.minCoeff() <= 0.0 ||
        std::pow(d.maxCoeff() / d.minCoeff(), 2.0) > kConditionLimit)
      return false;
    theta = llt.solve(rhs);
    ssr = yy[static_cast<std::size_t>(b)] - yy[static_cast<std::size_t>(a)] -
          rhs.dot(theta);
    if (ssr < 0.0) ssr = 0.0;
    return true;
  }
};

MatrixXd projected_regressors(const Dataset& data) {
  const MatrixXd zz = data.Z().transpose() * data.Z();
  const MatrixXd pia = solve_spd(zz, data.Z().transpose() * data.W());
  return data.Z() * pia;  // W-hat
}

}  // namespace

BreakScan estimate_break_2sls(const Dataset& data, double trimming) {
  const Eigen::Index T = data.T();
  const Eigen::Index p = data.p();
  const CandidateRange range = candidate_range(T, p, trimming);
  if (range.empty()) fail(ErrorCode::InvalidConfig, "no admissible break candidates");

  const MatrixXd w_hat = projected_regressors(data);
  const PrefixOls pre(w_hat, data.y());

  BreakScan scan;
  double best = kInf;
  int best_k = -1;
  VectorXd theta;
  double ssr1 = 0.0, ssr2 = 0.0;
  for (int k = range.lo; k <= range.hi; ++k) {
    double total = kInf;
    if (pre.fit(0, k, theta, ssr1) && pre.fit(k, static_cast<int>(T), theta, ssr2))
      total = ssr1 + ssr2;
    scan.candidates.push_back(k);
    scan.ssr_profile.push_back(total);
    if (total < best) {
      best = total;
      best_k = k;
    }
  }
  if (best_k < 0)
    fail(ErrorCode::SingularDesign, "every candidate split has a singular design");
  scan.break_index = best_k;
  scan.lambda_hat = static_cast<double>(best_k) / static_cast<double>(T);
  return scan;
}

WaldScan sup_wald_scan(const Dataset& data, double trimming, const HacConfig& cfg) {
  const Eigen::Index T = data.T();
  const Eigen::Index p = data.p();
  const double Td = static_cast<double>(T);
  const CandidateRange range = candidate_range(T, p, trimming);
  if (range.empty()) fail(ErrorCode::InvalidConfig, "no admissible break candidates");

  const MatrixXd w_hat = projected_regressors(data);
  const PrefixOls pre(w_hat, data.y());

  WaldScan scan;
  scan.trimming = trimming;
  double sup = -kInf;
  int argmax = -1;

  // Exact-fit guard: when both segment regressions fit to numerical
  // precision there is no noise scale left, and the statistic degenerates
  // to 0 (no parameter shift) or +inf (an exact shift).
  const double total_yy = pre.yy[static_cast<std::size_t>(T)];
  const double ssr_floor = 1e-9 * (total_yy + 1.0);

  VectorXd theta1, theta2;
  double ssr1 = 0.0, ssr2 = 0.0;
  MatrixXd resid_moments(T, p);
  for (int k = range.lo; k <= range.hi; ++k) {
    if (!pre.fit(0, k, theta1, ssr1) || !pre.fit(k, static_cast<int>(T), theta2, ssr2))
      continue;  // singular candidate, skipped

    if (ssr1 + ssr2 <= ssr_floor) {
      const double th_scale = theta1.norm() + theta2.norm();
      const double wald =
          (theta1 - theta2).lpNorm<Eigen::Infinity>() <= 1e-9 * (1.0 + th_scale) ? 0.0
                                                                                 : kInf;
      scan.candidates.push_back(k);
      scan.wald_values.push_back(wald);
      if (wald > sup) {
        sup = wald;
        argmax = k;
      }
      continue;
    }

    // H_i = (T_i/T) * LRV of W-hat_t r_t over segment i (r = 2SLS residual).
    for (Eigen::Index t = 0; t < T; ++t) {
      const double r = data.y()(t) - w_hat.row(t).dot(t < k ? theta1 : theta2);
      resid_moments.row(t) = w_hat.row(t) * r;
    }
    MatrixXd h1, h2;
    try {
      h1 = (static_cast<double>(k) / Td) * hac_lrv(resid_moments.topRows(k), cfg);
      h2 = (static_cast<double>(T - k) / Td) * hac_lrv(resid_moments.bottomRows(T - k), cfg);
    } catch (const Error&) {
      continue;
    }

    const MatrixXd a1 = (pre.ww[static_cast<std::size_t>(k)]) / Td;
    const MatrixXd a2 =
        (pre.ww[static_cast<std::size_t>(T)] - pre.ww[static_cast<std::size_t>(k)]) / Td;
    MatrixXd g_sum;
    try {
      const MatrixXd a1_inv = inverse_spd(a1);
      const MatrixXd a2_inv = inverse_spd(a2);
      g_sum = a1_inv * h1 * a1_inv + a2_inv * h2 * a2_inv;
    } catch (const Error&) {
      continue;
    }
    const VectorXd d = theta1 - theta2;
    double wald;
    try {
      wald = Td * d.dot(VectorXd(solve_spd(g_sum, d)));
    } catch (const Error&) {
      continue;
    }
    if (!(wald >= 0.0)) continue;

    scan.candidates.push_back(k);
    scan.wald_values.push_back(wald);
    if (wald > sup) {
      sup = wald;
      argmax = k;
    }
  }
  if (argmax < 0)
    fail(ErrorCode::SingularDesign, "every candidate split degenerated in the Wald scan");
  scan.sup_stat = sup;
  scan.argmax_break = argmax;
  return scan;
}

double chi_squared_quantile(double upper_tail_prob, int k) {
  if (!(upper_tail_prob > 0.0 && upper_tail_prob < 1.0))
    fail(ErrorCode::InvalidConfig, "tail probability must lie in (0,1)");
  double lo = 0.0, hi = 1.0;
  while (chi_squared_upper_tail(hi, k) > upper_tail_prob) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (chi_squared_upper_tail(mid, k) > upper_tail_prob)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

BreakTestReport common_change_wald(const Dataset& data, int first_stage_break,
                                   const HacConfig& cfg) {
  const Eigen::Index T = data.T();
  const Eigen::Index p = data.p();
  const double Td = static_cast<double>(T);
  const Eigen::Index min_len = std::max(data.p(), data.q()) + 1;
  if (first_stage_break < min_len || T - first_stage_break < min_len)
    fail(ErrorCode::SegmentTooShort, "first-stage break leaves a segment too short");

  Partition part;
  part.break_indices = {first_stage_break};
  part.trimming = 1e-9;
  const auto views = split(data, part);

  std::vector<VectorXd> theta(2);
  std::vector<MatrixXd> g(2);
  double total_ssr = 0.0;
  for (int i = 0; i < 2; ++i) {
    const auto& view = views[static_cast<std::size_t>(i)];
    const MatrixXd Zs = view.Z();
    const MatrixXd zz = Zs.transpose() * Zs;
    const MatrixXd pia = solve_spd(zz, Zs.transpose() * view.W());
    const MatrixXd wh = Zs * pia;
    const MatrixXd a = wh.transpose() * wh / Td;
    theta[static_cast<std::size_t>(i)] =
        solve_spd(wh.transpose() * wh, wh.transpose() * view.y().matrix());
    const VectorXd resid = view.y().matrix() - wh * theta[static_cast<std::size_t>(i)];
    total_ssr += resid.squaredNorm();
    MatrixXd moments(view.T(), p);
    for (Eigen::Index t = 0; t < view.T(); ++t) moments.row(t) = wh.row(t) * resid(t);
    const MatrixXd b =
        (static_cast<double>(view.T()) / Td) * hac_lrv(moments, cfg);
    const MatrixXd a_inv = inverse_spd(a);
    g[static_cast<std::size_t>(i)] = a_inv * b * a_inv;
  }

  const VectorXd d = theta[0] - theta[1];
  const double theta_scale =
      theta[0].lpNorm<Eigen::Infinity>() + theta[1].lpNorm<Eigen::Infinity>();
  const bool exact_fit = total_ssr <= 1e-9 * (data.y().squaredNorm() + 1.0);
  double stat;
  if (exact_fit) {
    // No noise scale left: zero difference is an exact null, a nonzero
    // difference an exact rejection.
    stat = d.lpNorm<Eigen::Infinity>() <= 1e-9 * (1.0 + theta_scale) ? 0.0 : kInf;
  } else {
    try {
      stat = Td * d.dot(VectorXd(solve_spd(g[0] + g[1], d)));
    } catch (const Error&) {
      stat = d.lpNorm<Eigen::Infinity>() <= 1e-9 * (1.0 + theta_scale) ? 0.0 : kInf;
    }
  }
  if (stat < 0.0) stat = 0.0;

  BreakTestReport rep;
  rep.statistic = stat;
  rep.estimated_break = first_stage_break;
  rep.p_value = std::isinf(stat) ? 0.0 : chi_squared_upper_tail(stat, static_cast<int>(p));
  for (double level : {0.10, 0.05, 0.01}) {
    const double cv = chi_squared_quantile(level, static_cast<int>(p));
    rep.critical_values[level] = cv;
    rep.decision_at[level] = stat > cv;
  }
  return rep;
}

// ---------------------------------------------------------------------------

double BpCriticalTable::value_at(int l, double level) const {
  if (rows.empty()) fail(ErrorCode::InvalidConfig, "empty critical value table");
  const auto& row = rows[static_cast<std::size_t>(
      std::min<int>(l, static_cast<int>(rows.size()) - 1))];
  // Levels ordered {0.10, 0.05, 0.01}; pick the nearest tabulated level at
  // or below the request so Bonferroni-corrected levels act conservatively.
  if (level >= 0.10) return row[0];
  if (level >= 0.05) return row[1];
  return row[2];
}

BpCriticalTable BpCriticalTable::standard_trim02() {
  BpCriticalTable t;
  t.trimming = 0.2;
  t.rows = {{2.61, 2.90, 3.46},   // F(1|0) at 10/5/1%
            {2.89, 3.15, 3.63}};  // F(2|1)
  return t;
}

BpResult bp_ols_breaks(const VectorXd& y, const MatrixXd& regressors, int max_breaks,
                       double trimming, const BpCriticalTable& table, double level) {
  const Eigen::Index n = y.size();
  const Eigen::Index k = regressors.cols();
  if (regressors.rows() != n) fail(ErrorCode::DimensionMismatch, "regressor rows != y length");
  if (max_breaks < 1) fail(ErrorCode::InvalidConfig, "max_breaks must be >= 1");
  const int min_len = std::max<int>(static_cast<int>(k),
                                    static_cast<int>(std::ceil(trimming * static_cast<double>(n))));
  if (n < 2 * min_len) fail(ErrorCode::SegmentTooShort, "series too short for one break");

  const PrefixOls pre(regressors, y);
  const int N = static_cast<int>(n);

  // ssr[a][b]: SSR of the segment covering rows (a, b] (1-based b), +inf if
  // inadmissible or singular.
  std::vector<std::vector<double>> ssr(static_cast<std::size_t>(N) + 1,
                                       std::vector<double>(static_cast<std::size_t>(N) + 1, kInf));
  VectorXd theta;
  for (int a = 0; a <= N - min_len; ++a) {
    for (int b = a + min_len; b <= N; ++b) {
      double s;
      if (pre.fit(a, b, theta, s)) ssr[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = s;
    }
  }

  const int m_max = std::min<int>(max_breaks, N / min_len - 1);
  if (m_max < 1) fail(ErrorCode::SegmentTooShort, "trimming admits no break");

  // dp[m][b]: best SSR for rows (0, b] with exactly m breaks inside.
  std::vector<std::vector<double>> dp(static_cast<std::size_t>(m_max) + 1,
                                      std::vector<double>(static_cast<std::size_t>(N) + 1, kInf));
  std::vector<std::vector<int>> arg(static_cast<std::size_t>(m_max) + 1,
                                    std::vector<int>(static_cast<std::size_t>(N) + 1, -1));
  for (int b = 0; b <= N; ++b) dp[0][static_cast<std::size_t>(b)] = ssr[0][static_cast<std::size_t>(b)];
  for (int m = 1; m <= m_max; ++m) {
    for (int b = (m + 1) * min_len; b <= N; ++b) {
      double best = kInf;
      int best_k = -1;
      for (int kk = m * min_len; kk <= b - min_len; ++kk) {
        const double cand = dp[static_cast<std::size_t>(m - 1)][static_cast<std::size_t>(kk)] +
                            ssr[static_cast<std::size_t>(kk)][static_cast<std::size_t>(b)];
        if (cand < best) {
          best = cand;
          best_k = kk;
        }
      }
      dp[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)] = best;
      arg[static_cast<std::size_t>(m)][static_cast<std::size_t>(b)] = best_k;
    }
  }

  auto backtrack = [&](int m) {
    std::vector<int> breaks;
    int b = N;
    for (int j = m; j >= 1; --j) {
      const int kk = arg[static_cast<std::size_t>(j)][static_cast<std::size_t>(b)];
      if (kk < 0) return std::vector<int>{};
      breaks.push_back(kk);
      b = kk;
    }
    std::sort(breaks.begin(), breaks.end());
    return breaks;
  };

  BpResult res;
  for (int m = 1; m <= m_max; ++m) res.breaks_by_count.push_back(backtrack(m));

  // Sequential sup-F decisions. SSR ratios become F statistics on the
  // per-regressor scale matching the published critical values. Residual
  // sums at numerical-precision level count as perfect fits.
  const double zero_tol = 1e-10 * (pre.yy[static_cast<std::size_t>(N)] + 1.0);
  auto f_stat = [&, zero_tol](double ssr_null, double ssr_alt, int len) {
    if (!(ssr_null < kInf) || !(ssr_alt < kInf)) return 0.0;
    if (ssr_null <= zero_tol) return 0.0;  // already a perfect fit
    if (ssr_alt <= zero_tol) return kInf;  // split fits exactly
    const double dof = static_cast<double>(len) - 2.0 * static_cast<double>(k);
    if (dof <= 0.0) return 0.0;
    return (dof / static_cast<double>(k)) * (ssr_null - ssr_alt) / ssr_alt;
  };

  int decided = 0;
  for (int l = 0; l < m_max; ++l) {
    double stat;
    if (l == 0) {
      stat = f_stat(ssr[0][static_cast<std::size_t>(N)], dp[1][static_cast<std::size_t>(N)], N);
    } else {
      // Best additional split within each segment of the current optimum.
      const std::vector<int>& cur = res.breaks_by_count[static_cast<std::size_t>(l - 1)];
      std::vector<int> bounds = {0};
      bounds.insert(bounds.end(), cur.begin(), cur.end());
      bounds.push_back(N);
      stat = 0.0;
      for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
        const int a = bounds[s], b = bounds[s + 1];
        const double null_ssr = ssr[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
        double best_split = kInf;
        for (int kk = a + min_len; kk <= b - min_len; ++kk) {
          const double cand = ssr[static_cast<std::size_t>(a)][static_cast<std::size_t>(kk)] +
                              ssr[static_cast<std::size_t>(kk)][static_cast<std::size_t>(b)];
          if (cand < best_split) best_split = cand;
        }
        stat = std::max(stat, f_stat(null_ssr, best_split, b - a));
      }
    }
    res.seq_stats.push_back(stat);
    if (decided == l && stat > table.value_at(l, level)) decided = l + 1;
  }

  res.num_breaks = decided;
  res.breaks = decided == 0 ? std::vector<int>{}
                            : res.breaks_by_count[static_cast<std::size_t>(decided - 1)];
  return res;
}

std::vector<int> sequential_sf_breaks(const Dataset& data, Eigen::Index begin,
                                      Eigen::Index end, double trimming, double level,
                                      const CritvalSimParams& sim,
                                      const std::optional<std::string>& cache_dir,
                                      const HacConfig& cfg) {
  std::vector<int> found;
  const Eigen::Index len = end - begin;
  const Eigen::Index min_half =
      std::max<Eigen::Index>(std::max(data.p(), data.q()) + 1,
                             static_cast<Eigen::Index>(std::ceil(trimming * static_cast<double>(len))));
  if (len < 2 * min_half) return found;

  Dataset segment = DatasetView(data, begin, len).materialize();
  double sup = 0.0;
  int local_break = 0;
  try {
    const WaldScan scan = sup_wald_scan(segment, trimming, cfg);
    sup = scan.sup_stat;
    const double cv =
        sup_wald_critical_value(static_cast<int>(data.p()), trimming, level, sim, cache_dir);
    if (!(sup > cv)) return found;
    local_break = estimate_break_2sls(segment, trimming).break_index;
  } catch (const Error&) {
    return found;  // degenerate segment: treated as no detectable change
  }

  const Eigen::Index global_break = begin + local_break;
  auto left = sequential_sf_breaks(data, begin, global_break, trimming, level, sim, cache_dir, cfg);
  auto right = sequential_sf_breaks(data, global_break, end, trimming, level, sim, cache_dir, cfg);
  found.insert(found.end(), left.begin(), left.end());
  found.push_back(static_cast<int>(global_break));
  found.insert(found.end(), right.begin(), right.end());
  std::sort(found.begin(), found.end());
  return found;
}

}  // namespace breakiv
