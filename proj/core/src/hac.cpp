#include "breakiv/hac.hpp"

#include <cmath>

#include "breakiv/linalg.hpp"

namespace breakiv {

int Bandwidth::resolve(Eigen::Index n) const {
  if (automatic)
    return static_cast<int>(std::floor(4.0 * std::pow(static_cast<double>(n) / 100.0, 2.0 / 9.0)));
  return fixed;
}

MatrixXd hac_lrv(const MatrixXd& moments, const HacConfig& cfg) {
  const Eigen::Index n = moments.rows();
  const Eigen::Index d = moments.cols();
  if (n < 2) fail(ErrorCode::EmptyInput, "hac_lrv needs at least two periods");
  const int m = cfg.bandwidth.resolve(n);
  if (m < 0 || m >= n) fail(ErrorCode::BandwidthTooLarge, "bandwidth m=" + std::to_string(m) +
                                                              " for n=" + std::to_string(n));

  MatrixXd lrv = (moments.transpose() * moments) / static_cast<double>(n);
  for (int j = 1; j <= m; ++j) {
    const double w = cfg.kernel == Kernel::Bartlett
                         ? 1.0 - static_cast<double>(j) / (static_cast<double>(m) + 1.0)
                         : 1.0;
    // Gamma_j = n^-1 sum_{t=j+1..n} m_t m_{t-j}'
    const MatrixXd gj = (moments.bottomRows(n - j).transpose() * moments.topRows(n - j)) /
                        static_cast<double>(n);
    lrv.noalias() += w * (gj + gj.transpose());
  }
  (void)d;
  return symmetrize(lrv);
}

MatrixXd SegmentBlocks::assemble() const {
  const Eigen::Index q = Su.rows();
  const Eigen::Index pv = Sv.rows();
  MatrixXd s(q + pv, q + pv);
  s.topLeftCorner(q, q) = Su;
  s.topRightCorner(q, pv) = Suv.transpose();
  s.bottomLeftCorner(pv, q) = Suv;
  s.bottomRightCorner(pv, pv) = Sv;
  return clip_to_psd(s);
}

MomentCovariance moment_blocks(const Dataset& data, const ParamSet& params,
                               const Partition& part, const HacConfig& cfg) {
  part.validate(data.T(), data.p());
  const auto views = split(data, part);
  const std::size_t n_seg = views.size();
  if (params.theta_per_regime.size() != n_seg)
    fail(ErrorCode::DimensionMismatch, "one theta per regime required");
  if (params.pi_per_segment.empty())
    fail(ErrorCode::DimensionMismatch, "at least one first-stage matrix required");

  const Eigen::Index q = data.q();
  const Eigen::Index p2 = data.p2();
  const double T = static_cast<double>(data.T());

  MomentCovariance out;
  out.per_segment.reserve(n_seg);
  out.Q.reserve(n_seg);

  for (std::size_t s = 0; s < n_seg; ++s) {
    const auto& view = views[s];
    const MatrixXd pi = params.pi_per_segment.size() == 1
                            ? params.pi_per_segment.front()
                            : params.pi_per_segment[s];
    if (pi.rows() != q || pi.cols() != p2)
      fail(ErrorCode::DimensionMismatch, "first-stage matrix must be q x p2");
    const VectorXd& theta = params.theta_per_regime[s];
    if (theta.size() != data.p())
      fail(ErrorCode::DimensionMismatch, "theta must have length p");

    const Eigen::Index n = view.T();
    const MatrixXd w = view.W();
    const VectorXd u_hat = view.y() - w * theta;
    const MatrixXd v_hat = view.X() - view.Z() * pi;  // n x p2

    // h_t = [Z_t u_t ; vec(Z_t v_t')], vec stacking columns of Z_t v_t'.
    MatrixXd h(n, q + p2 * q);
    for (Eigen::Index t = 0; t < n; ++t) {
      h.row(t).head(q) = view.Z().row(t) * u_hat(t);
      for (Eigen::Index j = 0; j < p2; ++j)
        h.row(t).segment(q + j * q, q) = view.Z().row(t) * v_hat(t, j);
    }

    const double share = static_cast<double>(n) / T;
    const MatrixXd lrv = share * hac_lrv(h, cfg);

    SegmentBlocks blocks;
    blocks.Su = lrv.topLeftCorner(q, q);
    blocks.Suv = lrv.bottomLeftCorner(p2 * q, q);
    blocks.Sv = lrv.bottomRightCorner(p2 * q, p2 * q);
    out.per_segment.push_back(std::move(blocks));

    out.Q.push_back((view.Z().transpose() * view.Z()) / T);
  }
  return out;
}

}  // namespace breakiv
