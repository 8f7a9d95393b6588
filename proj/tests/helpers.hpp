#pragma once

#include <Eigen/Dense>

#include "breakiv/dataset.hpp"
#include "breakiv/estimators.hpp"
#include "breakiv/rng.hpp"

namespace testutil {

using breakiv::Dataset;
using breakiv::MatrixXd;
using breakiv::RngStream;
using breakiv::TheoreticalInputs;
using breakiv::VectorXd;

inline MatrixXd rand_matrix(RngStream& rng, Eigen::Index r, Eigen::Index c) {
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

inline VectorXd rand_vector(RngStream& rng, Eigen::Index n) {
  VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

inline MatrixXd rand_spd(RngStream& rng, Eigen::Index n, double ridge = 0.5) {
  const MatrixXd a = rand_matrix(rng, n, n);
  return a * a.transpose() + ridge * MatrixXd::Identity(n, n);
}

// Random inputs with jointly positive definite per-segment moment
// covariances, so Schur complements exist and Suv blocks have full rank
// generically.
inline TheoreticalInputs rand_inputs(RngStream& rng, Eigen::Index p1, Eigen::Index p2,
                                     Eigen::Index q) {
  TheoreticalInputs inp;
  const Eigen::Index hdim = q + p2 * q;
  inp.Q1 = rand_spd(rng, q);
  inp.Q2 = rand_spd(rng, q);
  const MatrixXd S1 = rand_spd(rng, hdim);
  const MatrixXd S2 = rand_spd(rng, hdim);
  inp.Su1 = S1.topLeftCorner(q, q);
  inp.Suv1 = S1.bottomLeftCorner(p2 * q, q);
  inp.Sv1 = S1.bottomRightCorner(p2 * q, p2 * q);
  inp.Su2 = S2.topLeftCorner(q, q);
  inp.Suv2 = S2.bottomLeftCorner(p2 * q, q);
  inp.Sv2 = S2.bottomRightCorner(p2 * q, p2 * q);
  inp.PiA = rand_matrix(rng, q, p1 + p2);
  inp.theta_x1 = rand_vector(rng, p2);
  inp.theta_x2 = rand_vector(rng, p2);
  inp.lambda0 = 0.4;
  return inp;
}

// Population inputs for the simulation design: intercept + n_iv standard
// normal instruments, conditionally homoskedastic errors with the
// covariance blocks in Kronecker form.
inline TheoreticalInputs design_inputs(double lambda0, int n_iv, double phi_u,
                                       double phi_uv, double phi_v,
                                       double theta_x1, double theta_x2) {
  const Eigen::Index q = 1 + n_iv;
  TheoreticalInputs inp;
  const MatrixXd Q = MatrixXd::Identity(q, q);  // E[z]=0, E[z^2]=1, intercept
  inp.Q1 = lambda0 * Q;
  inp.Q2 = (1.0 - lambda0) * Q;
  inp.Su1 = lambda0 * phi_u * Q;
  inp.Su2 = (1.0 - lambda0) * phi_u * Q;
  inp.Suv1 = lambda0 * phi_uv * Q;
  inp.Suv2 = (1.0 - lambda0) * phi_uv * Q;
  inp.Sv1 = lambda0 * phi_v * Q;
  inp.Sv2 = (1.0 - lambda0) * phi_v * Q;
  inp.PiA = MatrixXd(q, 2);
  inp.PiA.col(0) = VectorXd::Unit(q, 0);  // intercept column of Z
  inp.PiA.col(1) = VectorXd::Ones(q);     // Pi = (1,...,1)'
  inp.theta_x1 = VectorXd::Constant(1, theta_x1);
  inp.theta_x2 = VectorXd::Constant(1, theta_x2);
  inp.lambda0 = lambda0;
  return inp;
}

// Synthetic dataset y = Z1 th_z + X th_x + u, X = Z Pi + v with iid normal
// errors; u, v correlation rho; break after row `brk` (1-based).
struct SynthSpec {
  int T = 400;
  int n_iv = 1;
  int brk = 160;
  double rho = -0.5;
  double noise = 1.0;
  VectorXd theta1 = (VectorXd(2) << 0.0, 0.0).finished();
  VectorXd theta2 = (VectorXd(2) << 1.0, 1.0).finished();
  std::uint64_t seed = 42;
};

inline Dataset make_synthetic(const SynthSpec& s) {
  RngStream rng(breakiv::mix64(s.seed));
  const Eigen::Index q = 1 + s.n_iv;
  VectorXd y(s.T);
  MatrixXd X(s.T, 1), Z1(s.T, 1), Z(s.T, q);
  const double b = std::sqrt(1.0 - s.rho * s.rho);
  for (int t = 0; t < s.T; ++t) {
    const double eu = rng.normal();
    const double ev = rng.normal();
    const double u = s.noise * eu;
    const double v = s.noise * (s.rho * eu + b * ev);
    Z1(t, 0) = 1.0;
    Z(t, 0) = 1.0;
    for (Eigen::Index j = 1; j < q; ++j) Z(t, j) = rng.normal();
    X(t, 0) = Z.row(t).sum() + v;
    const VectorXd& th = (t + 1 <= s.brk) ? s.theta1 : s.theta2;
    y(t) = th(0) + X(t, 0) * th(1) + u;
  }
  return Dataset(std::move(y), std::move(X), std::move(Z1), std::move(Z));
}

}  // namespace testutil
