#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "breakiv/estimators.hpp"
#include "breakiv/linalg.hpp"
#include "breakiv/pipeline.hpp"
#include "helpers.hpp"

using namespace breakiv;

namespace {

// Two endogenous regressors, two exogenous columns (intercept + control),
// four external instruments: the layout of an applied second-stage
// regression with lagged-instrument first stages.
struct WideSpec {
  int T = 500;
  int brk = 200;
  double noise = 1.0;
  double rf_shift = 0.0;  // added to Pi(5,1) after rf_break when nonzero
  int rf_break = 0;
  std::uint64_t seed = 7;
};

Dataset make_wide(const WideSpec& s) {
  RngStream rng(mix64(s.seed));
  const int q = 6, p2 = 2, p1 = 2;
  MatrixXd pi(q, p2);
  pi << 1.0, 0.5, 0.2, -0.3, 0.8, 0.4, -0.5, 0.9, 0.3, 0.7, 0.6, -0.2;

  const VectorXd theta1 = (VectorXd(4) << 0.2, -0.1, 0.5, -0.4).finished();
  const VectorXd theta2 = (VectorXd(4) << 1.0, 0.6, 1.3, 0.4).finished();

  VectorXd y(s.T);
  MatrixXd X(s.T, p2), Z1(s.T, p1), Z(s.T, q);
  for (int t = 0; t < s.T; ++t) {
    Z1(t, 0) = 1.0;
    Z1(t, 1) = rng.normal();
    Z(t, 0) = Z1(t, 0);
    Z(t, 1) = Z1(t, 1);
    for (int j = 2; j < q; ++j) Z(t, j) = rng.normal();

    MatrixXd pi_t = pi;
    if (s.rf_break > 0 && t + 1 > s.rf_break) pi_t(4, 0) += s.rf_shift;

    const double u = s.noise * rng.normal();
    const double e1 = rng.normal(), e2 = rng.normal();
    // v correlated with u through a shared factor.
    const double v1 = s.noise * (-0.4 * u + 0.8 * e1);
    const double v2 = s.noise * (0.3 * u + 0.7 * e2);
    X(t, 0) = Z.row(t).dot(pi_t.col(0)) + v1;
    X(t, 1) = Z.row(t).dot(pi_t.col(1)) + v2;

    const VectorXd& th = (t + 1 <= s.brk) ? theta1 : theta2;
    y(t) = Z1.row(t).dot(th.head(2)) + X.row(t).dot(th.tail(2)) + u;
  }
  return Dataset(std::move(y), std::move(X), std::move(Z1), std::move(Z));
}

const VectorXd kTheta1 = (VectorXd(4) << 0.2, -0.1, 0.5, -0.4).finished();
const VectorXd kTheta2 = (VectorXd(4) << 1.0, 0.6, 1.3, 0.4).finished();

}  // namespace

TEST_CASE("two endogenous regressors: noiseless exact recovery") {
  WideSpec s;
  s.noise = 0.0;
  const Dataset d = make_wide(s);
  for (auto* fn : {&split_sample_gmm, &ts2sls, &tsgmm}) {
    const EstimateResult res = (*fn)(d, s.brk, HacConfig{});
    CHECK((res.params.theta_per_regime[0] - kTheta1).lpNorm<Eigen::Infinity>() < 1e-8);
    CHECK((res.params.theta_per_regime[1] - kTheta2).lpNorm<Eigen::Infinity>() < 1e-8);
  }
}

TEST_CASE("two endogenous regressors: shapes and orderings") {
  WideSpec s;
  const Dataset d = make_wide(s);
  REQUIRE(d.p2() == 2);
  REQUIRE(d.q() == 6);

  const EstimateResult gmm = split_sample_gmm(d, s.brk, HacConfig{});
  const EstimateResult t2 = ts2sls(d, s.brk, HacConfig{});
  const EstimateResult tg = tsgmm(d, s.brk, HacConfig{});

  CHECK(gmm.avar_theta.rows() == 8);
  CHECK(t2.avar_theta.rows() == 8);
  CHECK(tg.avar_theta.rows() == 8);
  REQUIRE(tg.avar_pi.has_value());
  CHECK(tg.avar_pi->rows() == 12);  // p2 q = 12
  CHECK(tg.params.pi_per_segment.size() == 1);
  CHECK(tg.params.pi_per_segment[0].rows() == 6);
  CHECK(tg.params.pi_per_segment[0].cols() == 2);

  // p2 q = 12 >= 2p = 8 with correlated errors: the gain is strict.
  const MatrixXd diff = gmm.avar_theta - tg.avar_theta;
  CHECK(min_eigenvalue(diff) >= -1e-8 * std::abs(diff.trace()));
  for (Eigen::Index i = 0; i < 8; ++i)
    CHECK(tg.std_errors(i) <= gmm.std_errors(i) + 1e-12);

  // All three estimators are consistent for the same parameters.
  for (int r = 0; r < 2; ++r) {
    const VectorXd& truth = r == 0 ? kTheta1 : kTheta2;
    CHECK((gmm.params.theta_per_regime[r] - truth).lpNorm<Eigen::Infinity>() < 0.5);
    CHECK((t2.params.theta_per_regime[r] - truth).lpNorm<Eigen::Infinity>() < 0.5);
    CHECK((tg.params.theta_per_regime[r] - truth).lpNorm<Eigen::Infinity>() < 0.5);
  }
}

TEST_CASE("two endogenous regressors: instrument re-mixing invariance") {
  WideSpec s;
  const Dataset d = make_wide(s);
  RngStream rng(41);
  MatrixXd C = MatrixXd::Identity(6, 6) + 0.2 * testutil::rand_matrix(rng, 6, 6);
  REQUIRE(std::abs(C.determinant()) > 1e-3);
  const Dataset mixed = Dataset::from_parts_unchecked(d.y(), d.X(), d.Z1(), d.Z() * C);
  for (auto* fn : {&split_sample_gmm, &ts2sls, &tsgmm}) {
    const EstimateResult a = (*fn)(d, s.brk, HacConfig{});
    const EstimateResult b = (*fn)(mixed, s.brk, HacConfig{});
    for (int r = 0; r < 2; ++r)
      CHECK((a.params.theta_per_regime[r] - b.params.theta_per_regime[r])
                .lpNorm<Eigen::Infinity>() < 1e-7);
    CHECK((a.std_errors - b.std_errors).lpNorm<Eigen::Infinity>() <
          1e-7 * (1.0 + a.std_errors.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("two endogenous regressors: avar assembly matches the sample inputs") {
  WideSpec s;
  const Dataset d = make_wide(s);
  const EstimateResult t2 = ts2sls(d, s.brk, HacConfig{});
  const TheoreticalInputs inp =
      sample_theoretical_inputs(d, s.brk, t2.params, HacConfig{});
  CHECK(inp.Suv1.rows() == 12);
  CHECK(inp.Suv1.cols() == 6);
  const MatrixXd v = avar_ts2sls(inp) / static_cast<double>(d.T());
  CHECK((v - t2.avar_theta).lpNorm<Eigen::Infinity>() <
        1e-8 * (1.0 + t2.avar_theta.lpNorm<Eigen::Infinity>()));
}

TEST_CASE("no exogenous regressors: estimators and scan run with p1 = 0") {
  RngStream rng(mix64(51));
  const int T = 300, brk = 120, q = 2;
  VectorXd y(T);
  MatrixXd X(T, 1), Z1(T, 0), Z(T, q);
  for (int t = 0; t < T; ++t) {
    Z(t, 0) = rng.normal();
    Z(t, 1) = rng.normal();
    const double u = rng.normal();
    const double v = -0.5 * u + std::sqrt(0.75) * rng.normal();
    X(t, 0) = Z(t, 0) + Z(t, 1) + v;
    y(t) = X(t, 0) * (t < brk ? 0.5 : 1.5) + u;
  }
  const Dataset d(y, X, Z1, Z);
  REQUIRE(d.p1() == 0);
  REQUIRE(d.p() == 1);

  for (auto* fn : {&split_sample_gmm, &ts2sls, &tsgmm}) {
    const EstimateResult res = (*fn)(d, brk, HacConfig{});
    CHECK(std::fabs(res.params.theta_per_regime[0](0) - 0.5) < 0.2);
    CHECK(std::fabs(res.params.theta_per_regime[1](0) - 1.5) < 0.2);
    CHECK(res.std_errors.minCoeff() > 0.0);
  }

  const EstimateResult gmm = split_sample_gmm(d, brk, HacConfig{});
  const EstimateResult tg = tsgmm(d, brk, HacConfig{});
  // q = 2 >= 2p = 2 with correlated stages: a strict efficiency gain.
  CHECK(tg.std_errors(0) < gmm.std_errors(0));

  const WaldScan scan = sup_wald_scan(d, 0.15, HacConfig{});
  CHECK(scan.sup_stat > 0.0);
  const BreakScan loc = estimate_break_2sls(d, 0.15);
  CHECK(std::abs(loc.break_index - brk) < 30);
}

TEST_CASE("pipeline detects a break confined to the second first-stage equation") {
  // Pi shifts only in column 1; the per-equation detection loop must find it.
  WideSpec s;
  s.T = 600;
  s.noise = 0.0;
  s.brk = 0;
  s.rf_break = 300;
  s.rf_shift = 2.0;
  Dataset d = make_wide(s);

  PipelineConfig cfg;
  cfg.critval_sim.n_paths = 5000;
  cfg.critval_sim.grid_size = 200;
  cfg.bonferroni = false;
  const PipelineReport rep = run_four_stage(d, cfg);
  REQUIRE(rep.first_stage_breaks.size() == 1);
  CHECK(rep.first_stage_breaks[0] == 300);
  CHECK(rep.second_stage_breaks.empty());
}
