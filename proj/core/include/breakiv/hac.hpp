#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "breakiv/dataset.hpp"

namespace breakiv {

enum class Kernel { Truncated, Bartlett };

// Bandwidth choice: a fixed lag order, or the Newey-West automatic rule
// m = floor(4 * (n/100)^(2/9)).
struct Bandwidth {
  bool automatic = false;
  int fixed = 0;

  static Bandwidth Fixed(int m) { return Bandwidth{false, m}; }
  static Bandwidth NeweyWestAuto() { return Bandwidth{true, 0}; }

  int resolve(Eigen::Index n) const;
};

// Default {Truncated, Fixed(0)} is the plain outer-product
// (heteroskedasticity-robust) estimator.
struct HacConfig {
  Kernel kernel = Kernel::Truncated;
  Bandwidth bandwidth = Bandwidth::Fixed(0);
};

// Long-run variance of a per-period moment series (rows = periods):
//   Gamma_0 + sum_{j=1..m} w_j (Gamma_j + Gamma_j'),
// Gamma_j = n^-1 sum_t m_t m_{t-j}', Bartlett weights w_j = 1 - j/(m+1)
// (w_j = 1 for Truncated). Output is symmetrized to machine precision.
MatrixXd hac_lrv(const MatrixXd& moments, const HacConfig& cfg);

// Segment-wise long-run variance blocks of h_t = [Z_t u_t ; vec(Z_t v_t')],
// each scaled by segment share so the blocks estimate S_i(lambda0), plus
// the instrument second-moment matrices Q_i = T^-1 sum_i Z_t Z_t'.
struct SegmentBlocks {
  MatrixXd Su;   // q x q
  MatrixXd Suv;  // (p2 q) x q
  MatrixXd Sv;   // (p2 q) x (p2 q)

  MatrixXd assemble() const;  // [[Su, Suv'], [Suv, Sv]], psd-clipped
};

struct MomentCovariance {
  std::vector<SegmentBlocks> per_segment;
  std::vector<MatrixXd> Q;  // q x q per segment
};

// Residuals are generated from `params`: u_t = y_t - W_t' theta(regime of t)
// and v_t' = X_t' - Z_t' Pi(segment of t); pi_per_segment may hold a single
// matrix, reused for every segment.
MomentCovariance moment_blocks(const Dataset& data, const ParamSet& params,
                               const Partition& part, const HacConfig& cfg);

}  // namespace breakiv
