#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "breakiv/dataset.hpp"
#include "breakiv/hac.hpp"

namespace breakiv {

enum class EstimatorKind { SplitGMM, TS2SLS, TSGMM };

inline const char* estimator_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::SplitGMM: return "GMM";
    case EstimatorKind::TS2SLS: return "TS2SLS";
    case EstimatorKind::TSGMM: return "TSGMM";
  }
  return "?";
}

struct Diagnostics {
  double objective_value = 0.0;
  std::vector<double> condition_numbers;
};

// All reported covariances are unnormalized plug-ins: the asymptotic
// variance already divided by T, so std_errors are directly usable.
struct EstimateResult {
  EstimatorKind kind = EstimatorKind::SplitGMM;
  ParamSet params;
  MatrixXd avar_theta;                // (R p) x (R p), R = number of regimes
  std::optional<MatrixXd> avar_pi;    // (p2 q) x (p2 q), TSGMM only
  VectorXd std_errors;                // sqrt(diag(avar_theta))
  Diagnostics diagnostics;

  Eigen::Index num_regimes() const {
    return static_cast<Eigen::Index>(params.theta_per_regime.size());
  }
};

struct FirstStageFit {
  ParamSet params;   // pi_per_segment filled; thetas empty
  MatrixXd v_hat;    // T x p2 stacked residuals
};

// OLS of X on Z over the full sample (part absent) or per segment.
FirstStageFit ols_first_stage(const Dataset& data,
                              const std::optional<Partition>& part = std::nullopt);

// Split-sample two-step GMM: per-segment 2SLS first step, then efficient
// GMM with the heteroskedasticity/autocorrelation-robust weighting from
// first-step residuals. avar_theta is block diagonal across regimes.
EstimateResult split_sample_gmm(const Dataset& data, int break_idx,
                                const HacConfig& cfg = {});

// Two-sample 2SLS: full-sample OLS first stage plugged into per-regime
// OLS on the projected regressors. avar_theta carries the cross-regime
// block induced by the shared first stage.
EstimateResult ts2sls(const Dataset& data, int break_idx, const HacConfig& cfg = {});

// Two-sample GMM: joint linear GMM on the per-regime structural moments
// stacked with per-segment first-stage OLS moments constrained to a common
// Pi. Moments are linear in (theta_vec, Pi_vec), so the solution is a
// closed-form weighted least-squares solve.
EstimateResult tsgmm(const Dataset& data, int break_idx, const HacConfig& cfg = {});

// TSGMM with an externally supplied weighting covariance (e.g. with the
// cross blocks zeroed, under which the objective separates and the theta
// part reproduces split_sample_gmm).
EstimateResult tsgmm_with_weights(const Dataset& data, int break_idx,
                                  const MomentCovariance& weights);

// Single-regime analogues used when no break is present.
EstimateResult full_sample_gmm(const Dataset& data, const HacConfig& cfg = {});
EstimateResult full_sample_ts2sls(const Dataset& data, const HacConfig& cfg = {});
EstimateResult full_sample_tsgmm(const Dataset& data, const HacConfig& cfg = {});

// ---------------------------------------------------------------------------
// Population-level variance assemblies. Inputs follow the segment-share
// normalization: Q_i and the S blocks are the probability limits of
// T^-1 sum_i Z_t Z_t' and AVar(T^-1/2 sum_i h_t).

struct TheoreticalInputs {
  MatrixXd Q1, Q2;      // q x q
  MatrixXd Su1, Su2;    // q x q
  MatrixXd Suv1, Suv2;  // (p2 q) x q
  MatrixXd Sv1, Sv2;    // (p2 q) x (p2 q)
  MatrixXd PiA;         // q x p augmented first stage [Pi_z, Pi]
  VectorXd theta_x1, theta_x2;
  double lambda0 = 0.5;

  Eigen::Index q() const { return Q1.rows(); }
  Eigen::Index p() const { return PiA.cols(); }
  Eigen::Index p2() const { return theta_x1.size(); }
};

// V_TS2SLS,vec: the 2x2 block matrix [D_i' Omega_i D_i] with the
// off-diagonal D_1' Omega_12 D_2 induced by the full-sample first stage.
MatrixXd avar_ts2sls(const TheoreticalInputs& inp);

struct TsgmmAvar {
  MatrixXd Vgmm;        // 2p x 2p, block diag [PiA' Q_i Su_i^-1 Q_i PiA]^-1
  MatrixXd G;           // the efficiency-gain factor, Vtsgmm = (Vgmm^-1 + G'G)^-1
  MatrixXd Vtsgmm;      // 2p x 2p decomposition form
  MatrixXd VtsgmmFull;  // (2p + p2 q) square, direct [Gamma' S^-1 Gamma]^-1
};

// Both the decomposition form and the direct partitioned form; their theta
// blocks agree to numerical precision on valid inputs.
TsgmmAvar avar_tsgmm(const TheoreticalInputs& inp);

enum class Ordering { Better, Equal, Worse };

struct EfficiencyReport {
  double lhs;    // 2 Phi_uv' theta_x + theta_x' Phi_v theta_x
  double delta;  // Phi_u^-2 Phi_uv' (Phi_v - Phi_uv Phi_u^-1 Phi_uv')^-1 Phi_uv
  double rhs6;   // -delta Phi_u^2 / (1 + delta Phi_u)
  Ordering ts2sls_vs_gmm;    // Better iff lhs < 0
  Ordering tsgmm_vs_ts2sls;  // Better iff lhs > rhs6
};

EfficiencyReport efficiency_conditions(double phi_u, const VectorXd& phi_uv,
                                       const MatrixXd& phi_v, const VectorXd& theta_x);

struct FirstStageVariances {
  MatrixXd Vols, Vgmm, Vtsgmm;  // q x q each
};

// Asymptotic variances of the full-sample OLS, sub-sample GMM, and TSGMM
// estimators of a stable first stage with a single endogenous regressor
// (all blocks q x q). `pi` is the q x 1 first-stage coefficient entering
// the structural-moment Jacobian.
FirstStageVariances first_stage_variances(const MatrixXd& Q1, const MatrixXd& Q2,
                                          const MatrixXd& Su1, const MatrixXd& Su2,
                                          const MatrixXd& Suv1, const MatrixXd& Suv2,
                                          const MatrixXd& Sv1, const MatrixXd& Sv2,
                                          const VectorXd& pi);

// Sample analogue of TheoreticalInputs for a two-segment split, built from
// the given residual-generating parameters. Shared by ts2sls and tests.
TheoreticalInputs sample_theoretical_inputs(const Dataset& data, int break_idx,
                                            const ParamSet& params, const HacConfig& cfg);

}  // namespace breakiv
