#pragma once

#include <Eigen/Dense>

#include "breakiv/errors.hpp"

namespace breakiv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kConditionLimit = 1e12;
constexpr double kSvdRelativeCutoff = 1e-12;

// Solve A x = b for symmetric positive definite A via Cholesky; falls back
// to an SVD pseudo-inverse with relative cutoff 1e-12. Throws `code` when
// the (SVD-estimated) condition number exceeds 1e12.
MatrixXd solve_spd(const MatrixXd& A, const MatrixXd& b,
                   ErrorCode code = ErrorCode::SingularDesign);

// Inverse of a symmetric positive definite matrix, same policy as solve_spd.
MatrixXd inverse_spd(const MatrixXd& A, ErrorCode code = ErrorCode::SingularDesign);

// SVD-based condition number (largest/smallest singular value).
double condition_number(const MatrixXd& A);

// Symmetric part (A + A') / 2.
inline MatrixXd symmetrize(const MatrixXd& A) { return 0.5 * (A + A.transpose()); }

double min_eigenvalue(const MatrixXd& sym);

// Symmetric inverse square root via eigendecomposition; requires pd input.
MatrixXd inv_sqrt_spd(const MatrixXd& A, ErrorCode code = ErrorCode::NotPd);

// Clips tiny negative eigenvalues (in (-tol_scale*||S||, 0)) to zero; throws
// NotPsd for anything more negative. Returns a symmetric psd matrix.
MatrixXd clip_to_psd(const MatrixXd& S, double tol_scale = 1e-10);

}  // namespace breakiv
