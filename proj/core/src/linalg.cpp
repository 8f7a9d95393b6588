#include "breakiv/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace breakiv {

namespace {

MatrixXd svd_solve(const MatrixXd& A, const MatrixXd& b, ErrorCode code) {
  Eigen::JacobiSVD<MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  const double smax = sv.size() > 0 ? sv(0) : 0.0;
  if (smax <= 0.0) fail(code, "zero matrix in linear solve");
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0) || smax / smin > kConditionLimit)
    fail(code, "condition number exceeds 1e12");
  const double cutoff = kSvdRelativeCutoff * smax;
  VectorXd inv = sv;
  for (Eigen::Index i = 0; i < inv.size(); ++i)
    inv(i) = sv(i) > cutoff ? 1.0 / sv(i) : 0.0;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * b;
}

}  // namespace

MatrixXd solve_spd(const MatrixXd& A, const MatrixXd& b, ErrorCode code) {
  if (A.rows() != A.cols() || A.rows() != b.rows())
    fail(ErrorCode::DimensionMismatch, "solve_spd shape mismatch");
  Eigen::LLT<MatrixXd> llt(symmetrize(A));
  if (llt.info() == Eigen::Success) {
    // Cheap reciprocal-condition screen on the Cholesky factor diagonal.
    const VectorXd d = llt.matrixL().toDenseMatrix().diagonal();
    const double dmax = d.maxCoeff(), dmin = d.minCoeff();
    if (dmin > 0.0 && (dmax / dmin) * (dmax / dmin) <= kConditionLimit)
      return llt.solve(b);
  }
  return svd_solve(A, b, code);
}

MatrixXd inverse_spd(const MatrixXd& A, ErrorCode code) {
  return solve_spd(A, MatrixXd::Identity(A.rows(), A.cols()), code);
}

double condition_number(const MatrixXd& A) {
  Eigen::JacobiSVD<MatrixXd> svd(A);
  const VectorXd& sv = svd.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) <= 0.0)
    return std::numeric_limits<double>::infinity();
  return sv(0) / sv(sv.size() - 1);
}

double min_eigenvalue(const MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(sym),
                                             Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

MatrixXd inv_sqrt_spd(const MatrixXd& A, ErrorCode code) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(symmetrize(A));
  const VectorXd& ev = es.eigenvalues();
  if (ev.minCoeff() <= 0.0) fail(code, "matrix is not positive definite");
  const VectorXd inv_sqrt = ev.array().rsqrt();
  return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose();
}

MatrixXd clip_to_psd(const MatrixXd& S, double tol_scale) {
  const MatrixXd sym = symmetrize(S);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym);
  const VectorXd& ev = es.eigenvalues();
  const double scale = ev.cwiseAbs().maxCoeff();
  const double tol = tol_scale * (scale > 0.0 ? scale : 1.0);
  if (ev.minCoeff() >= 0.0) return sym;
  if (ev.minCoeff() < -tol)
    fail(ErrorCode::NotPsd, "covariance matrix has a significantly negative eigenvalue");
  VectorXd clipped = ev.cwiseMax(0.0);
  return es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace breakiv
