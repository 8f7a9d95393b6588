#include "breakiv/estimators.hpp"

#include <cmath>

#include "breakiv/linalg.hpp"

namespace breakiv {

namespace {

constexpr double kTinyPartition = 1e-9;

Partition two_segment_partition(const Dataset& data, int break_idx) {
  const Eigen::Index T = data.T();
  const Eigen::Index min_len = std::max(data.p(), data.q()) + 1;
  if (break_idx < min_len || T - break_idx < min_len)
    fail(ErrorCode::SegmentTooShort,
         "break at " + std::to_string(break_idx) + " leaves a segment shorter than " +
             std::to_string(min_len));
  Partition part;
  part.break_indices = {break_idx};
  part.trimming = kTinyPartition;
  return part;
}

bool residuals_negligible(const VectorXd& resid, double data_scale) {
  const double tol = 1e-13 * (1.0 + data_scale);
  return resid.lpNorm<Eigen::Infinity>() <= tol;
}

struct SegmentFit {
  MatrixXd Zs, Ws;
  VectorXd ys;
  MatrixXd pi_ols;     // per-segment OLS first stage, q x p2
  VectorXd theta_2sls;
  VectorXd u_hat;      // y - W theta_2sls
};

SegmentFit fit_segment_2sls(const DatasetView& view) {
  SegmentFit f;
  f.Zs = view.Z();
  f.Ws = view.W();
  f.ys = view.y();
  const MatrixXd zz = f.Zs.transpose() * f.Zs;
  const MatrixXd pia = solve_spd(zz, f.Zs.transpose() * f.Ws);  // q x p
  f.pi_ols = pia.rightCols(view.parent().p2());
  const MatrixXd w_hat = f.Zs * pia;
  f.theta_2sls = solve_spd(w_hat.transpose() * w_hat, w_hat.transpose() * f.ys);
  f.u_hat = f.ys - f.Ws * f.theta_2sls;
  return f;
}

// Efficient GMM on the segment's structural moments given the weighting
// block Su (already share-scaled). T is the full-sample size used for the
// moment normalization. Returns theta and the plug-in variance avar/T.
struct GmmStep {
  VectorXd theta;
  MatrixXd avar;     // p x p, divided by T
  double objective;  // T * g' Su^-1 g at the optimum
  double cond;
};

GmmStep gmm_second_step(const SegmentFit& f, const MatrixXd& Su, double T,
                        bool degenerate) {
  GmmStep out;
  const MatrixXd G = f.Zs.transpose() * f.Ws / T;  // q x p
  const VectorXd m = f.Zs.transpose() * f.ys / T;
  if (degenerate) {
    // Exact fit: the moment system is consistent, any weighting returns the
    // same point and the sampling variance is zero.
    out.theta = solve_spd(G.transpose() * G, G.transpose() * m);
    out.avar = MatrixXd::Zero(G.cols(), G.cols());
    out.objective = 0.0;
    out.cond = condition_number(G.transpose() * G);
    return out;
  }
  const MatrixXd Su_inv_G = solve_spd(Su, G, ErrorCode::SingularWeighting);
  const MatrixXd K = G.transpose() * Su_inv_G;  // p x p
  out.theta = solve_spd(K, Su_inv_G.transpose() * m);
  out.avar = inverse_spd(K) / T;
  const VectorXd g = m - G * out.theta;
  out.objective = T * g.dot(VectorXd(solve_spd(Su, g, ErrorCode::SingularWeighting)));
  out.cond = condition_number(K);
  return out;
}

MatrixXd kron_identity_right(Eigen::Index p2, const MatrixXd& Q) {
  // I_p2 (x) Q.
  const Eigen::Index q = Q.rows();
  MatrixXd out = MatrixXd::Zero(p2 * q, p2 * Q.cols());
  for (Eigen::Index j = 0; j < p2; ++j)
    out.block(j * q, j * Q.cols(), q, Q.cols()) = Q;
  return out;
}

VectorXd stderrs_from_avar(const MatrixXd& avar) {
  return avar.diagonal().cwiseMax(0.0).cwiseSqrt();
}

EstimateResult finalize(EstimatorKind kind, ParamSet params, MatrixXd avar_theta,
                        std::optional<MatrixXd> avar_pi, Diagnostics diag) {
  EstimateResult r;
  r.kind = kind;
  r.params = std::move(params);
  r.avar_theta = symmetrize(avar_theta);
  r.avar_pi = std::move(avar_pi);
  r.std_errors = stderrs_from_avar(r.avar_theta);
  r.diagnostics = std::move(diag);
  return r;
}

}  // namespace

FirstStageFit ols_first_stage(const Dataset& data, const std::optional<Partition>& part) {
  FirstStageFit fit;
  fit.v_hat.resize(data.T(), data.p2());
  if (!part) {
    const MatrixXd zz = data.Z().transpose() * data.Z();
    MatrixXd pi = solve_spd(zz, data.Z().transpose() * data.X());
    fit.v_hat = data.X() - data.Z() * pi;
    fit.params.pi_per_segment.push_back(std::move(pi));
    return fit;
  }
  fit.params.regime_boundaries = *part;
  for (const auto& view : split(data, *part)) {
    const MatrixXd Zs = view.Z();
    const MatrixXd zz = Zs.transpose() * Zs;
    MatrixXd pi = solve_spd(zz, Zs.transpose() * view.X());
    fit.v_hat.middleRows(view.begin(), view.T()) = view.X() - Zs * pi;
    fit.params.pi_per_segment.push_back(std::move(pi));
  }
  return fit;
}

EstimateResult split_sample_gmm(const Dataset& data, int break_idx, const HacConfig& cfg) {
  const Partition part = two_segment_partition(data, break_idx);
  const auto views = split(data, part);
  const double T = static_cast<double>(data.T());
  const double y_scale = data.y().lpNorm<Eigen::Infinity>();
  const Eigen::Index p = data.p();

  ParamSet params;
  params.regime_boundaries = part;
  MatrixXd avar = MatrixXd::Zero(2 * p, 2 * p);
  Diagnostics diag;

  for (int i = 0; i < 2; ++i) {
    SegmentFit f = fit_segment_2sls(views[static_cast<std::size_t>(i)]);
    const bool degenerate = residuals_negligible(f.u_hat, y_scale);
    MatrixXd Su;
    if (!degenerate) {
      MatrixXd h(f.u_hat.size(), data.q());
      for (Eigen::Index t = 0; t < f.u_hat.size(); ++t)
        h.row(t) = f.Zs.row(t) * f.u_hat(t);
      const double share = static_cast<double>(f.u_hat.size()) / T;
      Su = clip_to_psd(share * hac_lrv(h, cfg));
    }
    GmmStep step = gmm_second_step(f, Su, T, degenerate);
    params.theta_per_regime.push_back(step.theta);
    params.pi_per_segment.push_back(f.pi_ols);
    avar.block(i * p, i * p, p, p) = step.avar;
    diag.objective_value += step.objective;
    diag.condition_numbers.push_back(step.cond);
  }
  return finalize(EstimatorKind::SplitGMM, std::move(params), std::move(avar),
                  std::nullopt, std::move(diag));
}

TheoreticalInputs sample_theoretical_inputs(const Dataset& data, int break_idx,
                                            const ParamSet& params, const HacConfig& cfg) {
  const Partition part = two_segment_partition(data, break_idx);
  const MomentCovariance mc = moment_blocks(data, params, part, cfg);

  TheoreticalInputs inp;
  inp.Q1 = mc.Q[0];
  inp.Q2 = mc.Q[1];
  inp.Su1 = mc.per_segment[0].Su;
  inp.Su2 = mc.per_segment[1].Su;
  inp.Suv1 = mc.per_segment[0].Suv;
  inp.Suv2 = mc.per_segment[1].Suv;
  inp.Sv1 = mc.per_segment[0].Sv;
  inp.Sv2 = mc.per_segment[1].Sv;
  // Augmented first stage fitted jointly: OLS of [Z1, X] on Z, so the
  // exogenous block is exact when Z1 sits in the first columns of Z and
  // transforms correctly under instrument re-mixing.
  const MatrixXd zz = data.Z().transpose() * data.Z();
  inp.PiA = solve_spd(zz, data.Z().transpose() * data.W());
  inp.theta_x1 = params.theta_per_regime[0].tail(data.p2());
  inp.theta_x2 = params.theta_per_regime[1].tail(data.p2());
  inp.lambda0 = static_cast<double>(break_idx) / static_cast<double>(data.T());
  return inp;
}

EstimateResult ts2sls(const Dataset& data, int break_idx, const HacConfig& cfg) {
  const Partition part = two_segment_partition(data, break_idx);
  const auto views = split(data, part);
  const double T = static_cast<double>(data.T());

  const MatrixXd zz = data.Z().transpose() * data.Z();
  const MatrixXd pia = solve_spd(zz, data.Z().transpose() * data.W());
  const MatrixXd pi = pia.rightCols(data.p2());
  const MatrixXd w_hat_full = data.Z() * pia;

  ParamSet params;
  params.regime_boundaries = part;
  params.pi_per_segment.push_back(pi);
  Diagnostics diag;

  for (const auto& view : views) {
    const MatrixXd wh = w_hat_full.middleRows(view.begin(), view.T());
    const MatrixXd a = wh.transpose() * wh;
    const VectorXd theta = solve_spd(a, wh.transpose() * view.y().matrix());
    diag.objective_value += (view.y().matrix() - wh * theta).squaredNorm();
    diag.condition_numbers.push_back(condition_number(a));
    params.theta_per_regime.push_back(theta);
  }

  const TheoreticalInputs inp = sample_theoretical_inputs(data, break_idx, params, cfg);
  MatrixXd avar = avar_ts2sls(inp) / T;
  avar = clip_to_psd(avar, 1e-8);

  return finalize(EstimatorKind::TS2SLS, std::move(params), std::move(avar),
                  std::nullopt, std::move(diag));
}

EstimateResult tsgmm_with_weights(const Dataset& data, int break_idx,
                                  const MomentCovariance& weights) {
  const Partition part = two_segment_partition(data, break_idx);
  const auto views = split(data, part);
  const double T = static_cast<double>(data.T());
  const Eigen::Index p = data.p();
  const Eigen::Index p2 = data.p2();
  const Eigen::Index q = data.q();
  const Eigen::Index n_mom = 2 * q + 2 * p2 * q;
  const Eigen::Index n_par = 2 * p + p2 * q;

  // Stacked Jacobian (sample analog of -Gamma) and data moments, all T^-1
  // normalized per the stacked-moment convention.
  MatrixXd G = MatrixXd::Zero(n_mom, n_par);
  VectorXd m = VectorXd::Zero(n_mom);
  for (int i = 0; i < 2; ++i) {
    const auto& view = views[static_cast<std::size_t>(i)];
    const MatrixXd Zs = view.Z();
    G.block(i * q, i * p, q, p) = Zs.transpose() * view.W() / T;
    m.segment(i * q, q) = Zs.transpose() * view.y().matrix() / T;
    const MatrixXd Qi = Zs.transpose() * Zs / T;
    G.block(2 * q + i * p2 * q, 2 * p, p2 * q, p2 * q) = kron_identity_right(p2, Qi);
    const MatrixXd zx = Zs.transpose() * view.X() / T;  // q x p2
    for (Eigen::Index j = 0; j < p2; ++j)
      m.segment(2 * q + i * p2 * q + j * q, q) = zx.col(j);
  }

  // Weighting matrix in moment order (u1, u2, v1, v2), assembled from the
  // per-segment psd-projected covariances.
  MatrixXd S = MatrixXd::Zero(n_mom, n_mom);
  for (int i = 0; i < 2; ++i) {
    const MatrixXd seg = weights.per_segment[static_cast<std::size_t>(i)].assemble();
    const Eigen::Index ou = i * q;
    const Eigen::Index ov = 2 * q + i * p2 * q;
    S.block(ou, ou, q, q) = seg.topLeftCorner(q, q);
    S.block(ou, ov, q, p2 * q) = seg.topRightCorner(q, p2 * q);
    S.block(ov, ou, p2 * q, q) = seg.bottomLeftCorner(p2 * q, q);
    S.block(ov, ov, p2 * q, p2 * q) = seg.bottomRightCorner(p2 * q, p2 * q);
  }

  Diagnostics diag;
  VectorXd beta;
  MatrixXd v_full;
  const double moment_scale = m.lpNorm<Eigen::Infinity>() + G.lpNorm<Eigen::Infinity>();
  if (S.lpNorm<Eigen::Infinity>() <= 1e-26 * (1.0 + moment_scale * moment_scale)) {
    // Exact fit in both stages: consistent linear system, zero variance.
    beta = solve_spd(G.transpose() * G, G.transpose() * m);
    v_full = MatrixXd::Zero(n_par, n_par);
    diag.objective_value = 0.0;
    diag.condition_numbers.push_back(condition_number(G.transpose() * G));
  } else {
    const MatrixXd S_inv_G = solve_spd(S, G, ErrorCode::SingularWeighting);
    const MatrixXd K = G.transpose() * S_inv_G;
    beta = solve_spd(K, S_inv_G.transpose() * m);
    v_full = inverse_spd(K) / T;
    const VectorXd g = m - G * beta;
    diag.objective_value = T * g.dot(VectorXd(solve_spd(S, g, ErrorCode::SingularWeighting)));
    diag.condition_numbers.push_back(condition_number(K));
  }

  ParamSet params;
  params.regime_boundaries = part;
  params.theta_per_regime.push_back(beta.head(p));
  params.theta_per_regime.push_back(beta.segment(p, p));
  MatrixXd pi_common(q, p2);
  for (Eigen::Index j = 0; j < p2; ++j) pi_common.col(j) = beta.segment(2 * p + j * q, q);
  params.pi_per_segment.push_back(std::move(pi_common));

  MatrixXd avar_theta = v_full.topLeftCorner(2 * p, 2 * p);
  MatrixXd avar_pi = v_full.bottomRightCorner(p2 * q, p2 * q);
  return finalize(EstimatorKind::TSGMM, std::move(params), std::move(avar_theta),
                  std::move(avar_pi), std::move(diag));
}

EstimateResult tsgmm(const Dataset& data, int break_idx, const HacConfig& cfg) {
  const Partition part = two_segment_partition(data, break_idx);
  const auto views = split(data, part);

  // First step: per-segment 2SLS for the structural moments, per-segment
  // OLS for the first-stage moments.
  ParamSet first_step;
  first_step.regime_boundaries = part;
  for (const auto& view : views) {
    SegmentFit f = fit_segment_2sls(view);
    first_step.theta_per_regime.push_back(f.theta_2sls);
    first_step.pi_per_segment.push_back(f.pi_ols);
  }
  const MomentCovariance weights = moment_blocks(data, first_step, part, cfg);
  return tsgmm_with_weights(data, break_idx, weights);
}

namespace {

EstimateResult one_regime(EstimatorKind kind, const Dataset& data, const HacConfig& cfg) {
  const double T = static_cast<double>(data.T());
  const double y_scale = data.y().lpNorm<Eigen::Infinity>();
  const Eigen::Index p = data.p();
  const Eigen::Index q = data.q();
  const Eigen::Index p2 = data.p2();

  DatasetView whole(data, 0, data.T());
  SegmentFit f = fit_segment_2sls(whole);
  const bool u_degenerate = residuals_negligible(f.u_hat, y_scale);

  ParamSet params;
  params.regime_boundaries.trimming = kTinyPartition;
  Diagnostics diag;

  if (kind == EstimatorKind::TS2SLS) {
    // Full-sample 2SLS; the first-stage estimation error cancels from the
    // structural moment, leaving the plain robust sandwich.
    MatrixXd avar;
    if (u_degenerate) {
      avar = MatrixXd::Zero(p, p);
    } else {
      MatrixXd h(data.T(), q);
      for (Eigen::Index t = 0; t < data.T(); ++t) h.row(t) = f.Zs.row(t) * f.u_hat(t);
      const MatrixXd Su = clip_to_psd(hac_lrv(h, cfg));
      const MatrixXd zz = f.Zs.transpose() * f.Zs;
      const MatrixXd pia = solve_spd(zz, f.Zs.transpose() * f.Ws);
      const MatrixXd A = pia.transpose() * (zz / T) * pia;
      const MatrixXd A_inv = inverse_spd(A);
      avar = A_inv * (pia.transpose() * Su * pia) * A_inv / T;
    }
    params.theta_per_regime.push_back(f.theta_2sls);
    params.pi_per_segment.push_back(f.pi_ols);
    diag.objective_value = f.u_hat.squaredNorm();
    return finalize(kind, std::move(params), std::move(avar), std::nullopt, std::move(diag));
  }

  if (kind == EstimatorKind::SplitGMM) {
    MatrixXd Su;
    if (!u_degenerate) {
      MatrixXd h(data.T(), q);
      for (Eigen::Index t = 0; t < data.T(); ++t) h.row(t) = f.Zs.row(t) * f.u_hat(t);
      Su = clip_to_psd(hac_lrv(h, cfg));
    }
    GmmStep step = gmm_second_step(f, Su, T, u_degenerate);
    params.theta_per_regime.push_back(step.theta);
    params.pi_per_segment.push_back(f.pi_ols);
    diag.objective_value = step.objective;
    diag.condition_numbers.push_back(step.cond);
    return finalize(kind, std::move(params), step.avar, std::nullopt, std::move(diag));
  }

  // Single-regime TSGMM: q + p2 q moments for p + p2 q parameters.
  const MatrixXd v_hat = data.X() - data.Z() * f.pi_ols;
  MatrixXd h(data.T(), q + p2 * q);
  for (Eigen::Index t = 0; t < data.T(); ++t) {
    h.row(t).head(q) = f.Zs.row(t) * f.u_hat(t);
    for (Eigen::Index j = 0; j < p2; ++j)
      h.row(t).segment(q + j * q, q) = f.Zs.row(t) * v_hat(t, j);
  }
  const bool degenerate =
      u_degenerate && residuals_negligible(VectorXd(v_hat.reshaped()),
                                           data.X().lpNorm<Eigen::Infinity>());
  const Eigen::Index n_par = p + p2 * q;
  MatrixXd G = MatrixXd::Zero(q + p2 * q, n_par);
  VectorXd m = VectorXd::Zero(q + p2 * q);
  G.topLeftCorner(q, p) = f.Zs.transpose() * f.Ws / T;
  m.head(q) = f.Zs.transpose() * f.ys / T;
  const MatrixXd Qhat = f.Zs.transpose() * f.Zs / T;
  G.bottomRightCorner(p2 * q, p2 * q) = kron_identity_right(p2, Qhat);
  const MatrixXd zx = f.Zs.transpose() * data.X() / T;
  for (Eigen::Index j = 0; j < p2; ++j) m.segment(q + j * q, q) = zx.col(j);

  VectorXd beta;
  MatrixXd v_full;
  if (degenerate) {
    beta = solve_spd(G.transpose() * G, G.transpose() * m);
    v_full = MatrixXd::Zero(n_par, n_par);
  } else {
    const MatrixXd S = clip_to_psd(hac_lrv(h, cfg));
    const MatrixXd S_inv_G = solve_spd(S, G, ErrorCode::SingularWeighting);
    const MatrixXd K = G.transpose() * S_inv_G;
    beta = solve_spd(K, S_inv_G.transpose() * m);
    v_full = inverse_spd(K) / T;
    const VectorXd g = m - G * beta;
    diag.objective_value = T * g.dot(VectorXd(solve_spd(S, g, ErrorCode::SingularWeighting)));
    diag.condition_numbers.push_back(condition_number(K));
  }
  params.theta_per_regime.push_back(beta.head(p));
  MatrixXd pi(q, p2);
  for (Eigen::Index j = 0; j < p2; ++j) pi.col(j) = beta.segment(p + j * q, q);
  params.pi_per_segment.push_back(std::move(pi));
  MatrixXd avar_theta = v_full.topLeftCorner(p, p);
  MatrixXd avar_pi = v_full.bottomRightCorner(p2 * q, p2 * q);
  return finalize(kind, std::move(params), std::move(avar_theta), std::move(avar_pi),
                  std::move(diag));
}

}  // namespace

EstimateResult full_sample_gmm(const Dataset& data, const HacConfig& cfg) {
  return one_regime(EstimatorKind::SplitGMM, data, cfg);
}
EstimateResult full_sample_ts2sls(const Dataset& data, const HacConfig& cfg) {
  return one_regime(EstimatorKind::TS2SLS, data, cfg);
}
EstimateResult full_sample_tsgmm(const Dataset& data, const HacConfig& cfg) {
  return one_regime(EstimatorKind::TSGMM, data, cfg);
}

}  // namespace breakiv
