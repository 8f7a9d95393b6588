#include <Eigen/Dense>

#include "breakiv/estimators.hpp"
#include "breakiv/linalg.hpp"

namespace breakiv {

namespace {

// theta_x (x) I_q, shape (p2 q) x q.
MatrixXd a_of(const VectorXd& theta_x, Eigen::Index q) {
  MatrixXd a = MatrixXd::Zero(theta_x.size() * q, q);
  for (Eigen::Index j = 0; j < theta_x.size(); ++j)
    a.middleRows(j * q, q) = theta_x(j) * MatrixXd::Identity(q, q);
  return a;
}

MatrixXd ikron(Eigen::Index p2, const MatrixXd& Q) {
  const Eigen::Index r = Q.rows(), c = Q.cols();
  MatrixXd out = MatrixXd::Zero(p2 * r, p2 * c);
  for (Eigen::Index j = 0; j < p2; ++j) out.block(j * r, j * c, r, c) = Q;
  return out;
}

MatrixXd blkdiag(const MatrixXd& A, const MatrixXd& B) {
  MatrixXd out = MatrixXd::Zero(A.rows() + B.rows(), A.cols() + B.cols());
  out.topLeftCorner(A.rows(), A.cols()) = A;
  out.bottomRightCorner(B.rows(), B.cols()) = B;
  return out;
}

}  // namespace

MatrixXd avar_ts2sls(const TheoreticalInputs& inp) {
  const Eigen::Index q = inp.q();
  const Eigen::Index p = inp.p();
  const MatrixXd Q = inp.Q1 + inp.Q2;
  const MatrixXd Q_inv = inverse_spd(Q);
  const MatrixXd Sv = inp.Sv1 + inp.Sv2;

  const MatrixXd a1 = a_of(inp.theta_x1, q);
  const MatrixXd a2 = a_of(inp.theta_x2, q);

  // M_i stacks the loadings of (Psi_i^u, Psi_i^v theta_i, Psi_j^v theta_i)
  // in the linear representation of the regime-i structural moments.
  auto make_m = [&](const MatrixXd& Q_own, const MatrixXd& Q_other) {
    MatrixXd m(3 * q, q);
    m.topRows(q) = MatrixXd::Identity(q, q);
    m.middleRows(q, q) = Q_inv * Q_other;
    m.bottomRows(q) = -(Q_inv * Q_own);
    return m;
  };
  const MatrixXd M1 = make_m(inp.Q1, inp.Q2);
  const MatrixXd M2 = make_m(inp.Q2, inp.Q1);

  auto make_omega = [&](const MatrixXd& Su, const MatrixXd& Suv, const MatrixXd& Sv_own,
                        const MatrixXd& a) {
    MatrixXd o = MatrixXd::Zero(3 * q, 3 * q);
    o.block(0, 0, q, q) = Su;
    o.block(0, q, q, q) = Suv.transpose() * a;
    o.block(q, 0, q, q) = a.transpose() * Suv;
    o.block(q, q, q, q) = a.transpose() * Sv_own * a;
    o.block(2 * q, 2 * q, q, q) = a.transpose() * (Sv - Sv_own) * a;
    return o;
  };
  const MatrixXd O1 = make_omega(inp.Su1, inp.Suv1, inp.Sv1, a1);
  const MatrixXd O2 = make_omega(inp.Su2, inp.Suv2, inp.Sv2, a2);

  MatrixXd O12 = MatrixXd::Zero(3 * q, 3 * q);
  O12.block(0, 2 * q, q, q) = inp.Suv1.transpose() * a2;
  O12.block(q, 2 * q, q, q) = a1.transpose() * inp.Sv1 * a2;
  O12.block(2 * q, 0, q, q) = a1.transpose() * inp.Suv2;
  O12.block(2 * q, q, q, q) = a1.transpose() * inp.Sv2 * a2;

  const MatrixXd A1_inv = inverse_spd(inp.PiA.transpose() * inp.Q1 * inp.PiA);
  const MatrixXd A2_inv = inverse_spd(inp.PiA.transpose() * inp.Q2 * inp.PiA);
  const MatrixXd D1 = M1 * inp.PiA * A1_inv;  // 3q x p
  const MatrixXd D2 = M2 * inp.PiA * A2_inv;

  MatrixXd v(2 * p, 2 * p);
  v.topLeftCorner(p, p) = D1.transpose() * O1 * D1;
  v.bottomRightCorner(p, p) = D2.transpose() * O2 * D2;
  v.topRightCorner(p, p) = D1.transpose() * O12 * D2;
  v.bottomLeftCorner(p, p) = v.topRightCorner(p, p).transpose();
  return symmetrize(v);
}

TsgmmAvar avar_tsgmm(const TheoreticalInputs& inp) {
  const Eigen::Index q = inp.q();
  const Eigen::Index p2 = inp.p2();
  const Eigen::Index vq = p2 * q;

  const MatrixXd G1 = blkdiag(inp.Q1 * inp.PiA, inp.Q2 * inp.PiA);  // 2q x 2p
  MatrixXd G2(2 * vq, vq);                                          // [I (x) Q1; I (x) Q2]
  G2.topRows(vq) = ikron(p2, inp.Q1);
  G2.bottomRows(vq) = ikron(p2, inp.Q2);

  const MatrixXd Su1_inv = inverse_spd(inp.Su1, ErrorCode::SingularWeighting);
  const MatrixXd Su2_inv = inverse_spd(inp.Su2, ErrorCode::SingularWeighting);

  // Schur complements of the per-segment moment covariances.
  const MatrixXd E = blkdiag(inp.Sv1 - inp.Suv1 * Su1_inv * inp.Suv1.transpose(),
                             inp.Sv2 - inp.Suv2 * Su2_inv * inp.Suv2.transpose());
  const MatrixXd E_half_inv = inv_sqrt_spd(E, ErrorCode::NotPsd);

  const MatrixXd J = E_half_inv * G2;
  const MatrixXd MJ = MatrixXd::Identity(2 * vq, 2 * vq) -
                      J * solve_spd(J.transpose() * J, J.transpose(),
                                    ErrorCode::SingularWeighting);
  const MatrixXd H = blkdiag(inp.Suv1 * Su1_inv, inp.Suv2 * Su2_inv) * G1;

  TsgmmAvar out;
  out.G = MJ * E_half_inv * H;  // 2 p2 q x 2p
  const MatrixXd vgmm_inv = blkdiag(inp.PiA.transpose() * inp.Q1 * Su1_inv * inp.Q1 * inp.PiA,
                                    inp.PiA.transpose() * inp.Q2 * Su2_inv * inp.Q2 * inp.PiA);
  out.Vgmm = inverse_spd(vgmm_inv);
  out.Vtsgmm = inverse_spd(symmetrize(vgmm_inv + out.G.transpose() * out.G));

  // Direct form: joint Jacobian against the full stacked moment covariance
  // in (u1, u2, v1, v2) order.
  MatrixXd S = MatrixXd::Zero(2 * q + 2 * vq, 2 * q + 2 * vq);
  S.block(0, 0, q, q) = inp.Su1;
  S.block(q, q, q, q) = inp.Su2;
  S.block(2 * q, 2 * q, vq, vq) = inp.Sv1;
  S.block(2 * q + vq, 2 * q + vq, vq, vq) = inp.Sv2;
  S.block(2 * q, 0, vq, q) = inp.Suv1;
  S.block(0, 2 * q, q, vq) = inp.Suv1.transpose();
  S.block(2 * q + vq, q, vq, q) = inp.Suv2;
  S.block(q, 2 * q + vq, q, vq) = inp.Suv2.transpose();

  const MatrixXd Gamma = blkdiag(G1, G2);
  const MatrixXd S_inv_Gamma = solve_spd(S, Gamma, ErrorCode::SingularWeighting);
  out.VtsgmmFull = inverse_spd(symmetrize(Gamma.transpose() * S_inv_Gamma));
  return out;
}

EfficiencyReport efficiency_conditions(double phi_u, const VectorXd& phi_uv,
                                       const MatrixXd& phi_v, const VectorXd& theta_x) {
  if (phi_u <= 0.0) fail(ErrorCode::NotPd, "Phi_u must be positive");
  const MatrixXd schur = phi_v - (phi_uv * phi_uv.transpose()) / phi_u;
  if (min_eigenvalue(schur) <= 0.0)
    fail(ErrorCode::NotPd, "Phi_v - Phi_uv Phi_u^-1 Phi_uv' must be positive definite");

  EfficiencyReport rep;
  rep.lhs = 2.0 * phi_uv.dot(theta_x) + theta_x.dot(phi_v * theta_x);
  rep.delta = phi_uv.dot(VectorXd(solve_spd(schur, phi_uv, ErrorCode::NotPd))) / (phi_u * phi_u);
  rep.rhs6 = -rep.delta * phi_u * phi_u / (1.0 + rep.delta * phi_u);

  const double scale = 1.0 + std::abs(theta_x.dot(phi_v * theta_x)) +
                       2.0 * std::abs(phi_uv.dot(theta_x));
  const double tol = 1e-12 * scale;
  rep.ts2sls_vs_gmm = rep.lhs < -tol   ? Ordering::Better
                      : rep.lhs > tol ? Ordering::Worse
                                      : Ordering::Equal;
  const double gap = rep.lhs - rep.rhs6;
  rep.tsgmm_vs_ts2sls = gap > tol    ? Ordering::Better
                        : gap < -tol ? Ordering::Worse
                                     : Ordering::Equal;
  return rep;
}

FirstStageVariances first_stage_variances(const MatrixXd& Q1, const MatrixXd& Q2,
                                          const MatrixXd& Su1, const MatrixXd& Su2,
                                          const MatrixXd& Suv1, const MatrixXd& Suv2,
                                          const MatrixXd& Sv1, const MatrixXd& Sv2,
                                          const VectorXd& pi) {
  const Eigen::Index q = Q1.rows();
  if (Suv1.rows() != q || Sv1.rows() != q || pi.size() != q)
    fail(ErrorCode::DimensionMismatch,
         "first_stage_variances covers the single-endogenous-regressor case");
  for (const MatrixXd* m : {&Q1, &Q2, &Su1, &Su2, &Sv1, &Sv2})
    if (min_eigenvalue(*m) <= 0.0)
      fail(ErrorCode::NotPd, "Q and S blocks must be positive definite");

  FirstStageVariances out;
  const MatrixXd Q = Q1 + Q2;
  const MatrixXd Q_inv = inverse_spd(Q);
  out.Vols = Q_inv * (Sv1 + Sv2) * Q_inv;

  const MatrixXd Sv1_inv = inverse_spd(Sv1, ErrorCode::NotPd);
  const MatrixXd Sv2_inv = inverse_spd(Sv2, ErrorCode::NotPd);
  const MatrixXd vgmm_inv = Q1 * Sv1_inv * Q1 + Q2 * Sv2_inv * Q2;
  out.Vgmm = inverse_spd(vgmm_inv);

  // Roles of the structural and first-stage moments swap relative to
  // avar_tsgmm: theta is the nuisance, Pi the target.
  const MatrixXd E = blkdiag(Su1 - Suv1.transpose() * Sv1_inv * Suv1,
                             Su2 - Suv2.transpose() * Sv2_inv * Suv2);
  const MatrixXd E_half_inv = inv_sqrt_spd(E, ErrorCode::NotPd);
  const MatrixXd G1 = blkdiag(Q1 * pi, Q2 * pi);  // 2q x 2
  const MatrixXd J = E_half_inv * G1;
  const MatrixXd MJ = MatrixXd::Identity(2 * q, 2 * q) -
                      J * solve_spd(J.transpose() * J, J.transpose(), ErrorCode::NotPd);
  MatrixXd H(2 * q, q);
  H.topRows(q) = Suv1.transpose() * Sv1_inv * Q1;
  H.bottomRows(q) = Suv2.transpose() * Sv2_inv * Q2;

  const MatrixXd gain = H.transpose() * E_half_inv * MJ * E_half_inv * H;
  out.Vtsgmm = inverse_spd(symmetrize(vgmm_inv + gain));
  return out;
}

}  // namespace breakiv
