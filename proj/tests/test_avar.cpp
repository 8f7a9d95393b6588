#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "breakiv/estimators.hpp"
#include "breakiv/linalg.hpp"
#include "helpers.hpp"

using namespace breakiv;

namespace {

MatrixXd kron_vec_identity(const VectorXd& v, Eigen::Index q) {
  MatrixXd a = MatrixXd::Zero(v.size() * q, q);
  for (Eigen::Index j = 0; j < v.size(); ++j)
    a.middleRows(j * q, q) = v(j) * MatrixXd::Identity(q, q);
  return a;
}

// Independent re-derivation of V_TS2SLS from the CLT representation: the
// regime errors are linear maps of the joint vector
// (Psi_1^u, Psi_2^u, a_1-weighted and a_2-weighted first-stage sums), so
// the variance is L Sigma L' with Sigma assembled directly from the blocks.
MatrixXd ts2sls_oracle(const TheoreticalInputs& inp) {
  const Eigen::Index q = inp.q();
  const Eigen::Index p = inp.p();
  const Eigen::Index vq = inp.p2() * q;
  const MatrixXd Q_inv = inverse_spd(inp.Q1 + inp.Q2);

  // Joint stack: (Psi_1^u, Psi_2^u, Psi_1^v_vec, Psi_2^v_vec).
  const Eigen::Index dim = 2 * q + 2 * vq;
  MatrixXd Sigma = MatrixXd::Zero(dim, dim);
  Sigma.block(0, 0, q, q) = inp.Su1;
  Sigma.block(q, q, q, q) = inp.Su2;
  Sigma.block(2 * q, 2 * q, vq, vq) = inp.Sv1;
  Sigma.block(2 * q + vq, 2 * q + vq, vq, vq) = inp.Sv2;
  Sigma.block(2 * q, 0, vq, q) = inp.Suv1;
  Sigma.block(0, 2 * q, q, vq) = inp.Suv1.transpose();
  Sigma.block(2 * q + vq, q, vq, q) = inp.Suv2;
  Sigma.block(q, 2 * q + vq, q, vq) = inp.Suv2.transpose();

  const MatrixXd a1 = kron_vec_identity(inp.theta_x1, q);
  const MatrixXd a2 = kron_vec_identity(inp.theta_x2, q);

  // Lambda_T (theta_i - theta_i^0) -> A_i^-1 PiA' [ Psi_i^u
  //   + (I - Q_i Q^-1) a_i' Psi_i^v - Q_i Q^-1 a_i' Psi_j^v ].
  MatrixXd L = MatrixXd::Zero(2 * p, dim);
  const MatrixXd A1_inv = inverse_spd(inp.PiA.transpose() * inp.Q1 * inp.PiA);
  const MatrixXd A2_inv = inverse_spd(inp.PiA.transpose() * inp.Q2 * inp.PiA);
  const MatrixXd head1 = A1_inv * inp.PiA.transpose();
  const MatrixXd head2 = A2_inv * inp.PiA.transpose();
  const MatrixXd I_q = MatrixXd::Identity(q, q);

  L.block(0, 0, p, q) = head1;
  L.block(0, 2 * q, p, vq) = head1 * (I_q - inp.Q1 * Q_inv) * a1.transpose();
  L.block(0, 2 * q + vq, p, vq) = -head1 * inp.Q1 * Q_inv * a1.transpose();

  L.block(p, q, p, q) = head2;
  L.block(p, 2 * q + vq, p, vq) = head2 * (I_q - inp.Q2 * Q_inv) * a2.transpose();
  L.block(p, 2 * q, p, vq) = -head2 * inp.Q2 * Q_inv * a2.transpose();

  return L * Sigma * L.transpose();
}

}  // namespace

TEST_CASE("avar_ts2sls collapses to the Su sandwich when the v channel is off") {
  RngStream rng(21);
  TheoreticalInputs inp = testutil::rand_inputs(rng, 1, 1, 3);
  inp.Suv1.setZero();
  inp.Suv2.setZero();
  inp.theta_x1.setZero();
  inp.theta_x2.setZero();
  const MatrixXd v = avar_ts2sls(inp);

  const Eigen::Index p = inp.p();
  const MatrixXd A1_inv = inverse_spd(inp.PiA.transpose() * inp.Q1 * inp.PiA);
  const MatrixXd A2_inv = inverse_spd(inp.PiA.transpose() * inp.Q2 * inp.PiA);
  const MatrixXd v1 = A1_inv * inp.PiA.transpose() * inp.Su1 * inp.PiA * A1_inv;
  const MatrixXd v2 = A2_inv * inp.PiA.transpose() * inp.Su2 * inp.PiA * A2_inv;
  CHECK((v.topLeftCorner(p, p) - v1).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK((v.bottomRightCorner(p, p) - v2).lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK(v.topRightCorner(p, p).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("avar_ts2sls matches the independent CLT-map oracle on random inputs") {
  RngStream rng(22);
  for (int rep = 0; rep < 25; ++rep) {
    const TheoreticalInputs inp = testutil::rand_inputs(rng, 1, 2, 4);
    const MatrixXd v = avar_ts2sls(inp);
    const MatrixXd ref = ts2sls_oracle(inp);
    CHECK((v - ref).lpNorm<Eigen::Infinity>() <
          1e-9 * (1.0 + ref.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("equality boundary: diagonal blocks equal V_GMM under the design inputs") {
  // Homogeneous Kronecker second moments with 2 Phi_uv th_x + th_x^2 Phi_v = 0
  // in both regimes (th_x1 = 0, th_x2 = 1, Phi_uv = -0.5, Phi_u = Phi_v = 1).
  const TheoreticalInputs inp = testutil::design_inputs(0.4, 1, 1.0, -0.5, 1.0, 0.0, 1.0);
  const MatrixXd v = avar_ts2sls(inp);
  const TsgmmAvar tg = avar_tsgmm(inp);
  const Eigen::Index p = inp.p();
  const double scale = tg.Vgmm.lpNorm<Eigen::Infinity>();
  CHECK((v.topLeftCorner(p, p) - tg.Vgmm.topLeftCorner(p, p)).lpNorm<Eigen::Infinity>() <
        1e-8 * scale);
  CHECK((v.bottomRightCorner(p, p) - tg.Vgmm.bottomRightCorner(p, p))
            .lpNorm<Eigen::Infinity>() < 1e-8 * scale);
}

TEST_CASE("avar_tsgmm: no endogeneity channel means no gain") {
  RngStream rng(23);
  TheoreticalInputs inp = testutil::rand_inputs(rng, 1, 1, 3);
  inp.Suv1.setZero();
  inp.Suv2.setZero();
  const TsgmmAvar tg = avar_tsgmm(inp);
  CHECK(tg.G.lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK((tg.Vtsgmm - tg.Vgmm).lpNorm<Eigen::Infinity>() <
        1e-10 * (1.0 + tg.Vgmm.lpNorm<Eigen::Infinity>()));
}

TEST_CASE("strict efficiency gain when Suv has full rank and p2 q >= 2p") {
  RngStream rng(24);
  for (int rep = 0; rep < 10; ++rep) {
    // p1 = 1, p2 = 2, q = 4: p2 q = 8 >= 2p = 6.
    const TheoreticalInputs inp = testutil::rand_inputs(rng, 1, 2, 4);
    const TsgmmAvar tg = avar_tsgmm(inp);
    const MatrixXd diff = tg.Vgmm - tg.Vtsgmm;
    CHECK(min_eigenvalue(diff) > 0.0);
  }
}

TEST_CASE("decomposition form equals the direct partitioned form") {
  RngStream rng(25);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const TheoreticalInputs inp = testutil::rand_inputs(rng, 1, 1, 3);
    const TsgmmAvar tg = avar_tsgmm(inp);
    const Eigen::Index tp = 2 * inp.p();
    const MatrixXd direct = tg.VtsgmmFull.topLeftCorner(tp, tp);
    const double dev = (direct - tg.Vtsgmm).lpNorm<Eigen::Infinity>() /
                       (1.0 + tg.Vtsgmm.lpNorm<Eigen::Infinity>());
    worst = std::max(worst, dev);
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("efficiency_conditions trichotomy") {
  SUBCASE("no endogeneity: both comparisons are ties") {
    const VectorXd zero = VectorXd::Zero(1);
    const MatrixXd phi_v = MatrixXd::Identity(1, 1);
    const EfficiencyReport rep = efficiency_conditions(1.0, zero, phi_v, zero);
    CHECK(rep.lhs == 0.0);
    CHECK(rep.ts2sls_vs_gmm == Ordering::Equal);
    CHECK(rep.tsgmm_vs_ts2sls == Ordering::Equal);
  }

  SUBCASE("simulation design: lhs = 0, delta = 1/3, rhs = -1/4") {
    const VectorXd phi_uv = VectorXd::Constant(1, -0.5);
    const MatrixXd phi_v = MatrixXd::Identity(1, 1);
    const VectorXd theta_x = VectorXd::Constant(1, 1.0);
    const EfficiencyReport rep = efficiency_conditions(1.0, phi_uv, phi_v, theta_x);
    CHECK(rep.lhs == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(rep.delta == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(rep.rhs6 == doctest::Approx(-0.25).epsilon(1e-12));
    CHECK(rep.ts2sls_vs_gmm == Ordering::Equal);
    CHECK(rep.tsgmm_vs_ts2sls == Ordering::Better);
  }

  SUBCASE("negative lhs favors TS2SLS over split GMM") {
    const VectorXd phi_uv = VectorXd::Constant(1, -0.5);
    const MatrixXd phi_v = MatrixXd::Identity(1, 1);
    const VectorXd theta_x = VectorXd::Constant(1, 0.5);  // lhs = -0.25
    const EfficiencyReport rep = efficiency_conditions(1.0, phi_uv, phi_v, theta_x);
    CHECK(rep.ts2sls_vs_gmm == Ordering::Better);
  }

  SUBCASE("degenerate Phi matrix rejected") {
    const VectorXd phi_uv = VectorXd::Constant(1, 1.0);
    const MatrixXd phi_v = MatrixXd::Identity(1, 1);  // schur = 0
    CHECK_THROWS_AS(efficiency_conditions(1.0, phi_uv, phi_v, phi_uv), Error);
  }
}

TEST_CASE("first_stage_variances orderings and equalities") {
  RngStream rng(26);
  const Eigen::Index q = 3;

  SUBCASE("homogeneous Kronecker blocks: Vgmm equals Vols") {
    const MatrixXd Q = testutil::rand_spd(rng, q);
    const double l = 0.4, phi_v = 1.7;
    const MatrixXd hdim = testutil::rand_spd(rng, 2 * q);  // only for Suv draw
    const FirstStageVariances fs = first_stage_variances(
        l * Q, (1 - l) * Q, l * Q, (1 - l) * Q, 0.2 * l * Q, 0.2 * (1 - l) * Q,
        phi_v * l * Q, phi_v * (1 - l) * Q, VectorXd::Ones(q));
    CHECK((fs.Vgmm - fs.Vols).lpNorm<Eigen::Infinity>() <
          1e-10 * (1.0 + fs.Vols.lpNorm<Eigen::Infinity>()));
    CHECK(min_eigenvalue(fs.Vgmm - fs.Vtsgmm) >= -1e-10 * fs.Vgmm.trace());
    (void)hdim;
  }

  SUBCASE("zero cross blocks: Vtsgmm equals Vgmm") {
    const MatrixXd Q1 = testutil::rand_spd(rng, q), Q2 = testutil::rand_spd(rng, q);
    const MatrixXd Su1 = testutil::rand_spd(rng, q), Su2 = testutil::rand_spd(rng, q);
    const MatrixXd Sv1 = testutil::rand_spd(rng, q), Sv2 = testutil::rand_spd(rng, q);
    const MatrixXd zero = MatrixXd::Zero(q, q);
    const FirstStageVariances fs =
        first_stage_variances(Q1, Q2, Su1, Su2, zero, zero, Sv1, Sv2, VectorXd::Ones(q));
    CHECK((fs.Vtsgmm - fs.Vgmm).lpNorm<Eigen::Infinity>() <
          1e-10 * (1.0 + fs.Vgmm.lpNorm<Eigen::Infinity>()));
  }

  SUBCASE("random heterogeneous inputs keep the psd ordering") {
    for (int rep = 0; rep < 20; ++rep) {
      const TheoreticalInputs inp = testutil::rand_inputs(rng, 0, 1, q);
      const FirstStageVariances fs =
          first_stage_variances(inp.Q1, inp.Q2, inp.Su1, inp.Su2, inp.Suv1, inp.Suv2,
                                inp.Sv1, inp.Sv2, VectorXd::Ones(q));
      CHECK(min_eigenvalue(fs.Vols - fs.Vgmm) >= -1e-10 * fs.Vols.trace());
      CHECK(min_eigenvalue(fs.Vgmm - fs.Vtsgmm) >= -1e-10 * fs.Vgmm.trace());
    }
  }

  SUBCASE("Vtsgmm agrees with the Pi block of the joint system") {
    // Oracle: assemble the joint TSGMM system for p1=0, p2=1 and take the
    // first-stage block of [Gamma' S^-1 Gamma]^-1.
    for (int rep = 0; rep < 10; ++rep) {
      TheoreticalInputs inp = testutil::rand_inputs(rng, 0, 1, q);
      const VectorXd pi = testutil::rand_vector(rng, q);
      inp.PiA = pi;
      const FirstStageVariances fs = first_stage_variances(
          inp.Q1, inp.Q2, inp.Su1, inp.Su2, inp.Suv1, inp.Suv2, inp.Sv1, inp.Sv2, pi);
      const TsgmmAvar tg = avar_tsgmm(inp);
      const MatrixXd pi_block = tg.VtsgmmFull.bottomRightCorner(q, q);
      CHECK((fs.Vtsgmm - pi_block).lpNorm<Eigen::Infinity>() <
            1e-8 * (1.0 + pi_block.lpNorm<Eigen::Infinity>()));
    }
  }
}

TEST_CASE("sample-based theoretical inputs feed the assemblies coherently") {
  testutil::SynthSpec spec;
  spec.T = 500;
  spec.n_iv = 3;
  const Dataset d = testutil::make_synthetic(spec);
  const EstimateResult res = ts2sls(d, spec.brk, HacConfig{});
  const TheoreticalInputs inp =
      sample_theoretical_inputs(d, spec.brk, res.params, HacConfig{});
  const MatrixXd v = avar_ts2sls(inp) / static_cast<double>(d.T());
  CHECK((v - res.avar_theta).lpNorm<Eigen::Infinity>() <
        1e-8 * (1.0 + res.avar_theta.lpNorm<Eigen::Infinity>()));
}
