#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "breakiv/errors.hpp"

namespace breakiv {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Observed series for the linear IV model with a possible parameter change:
//   y_t = Z1_t' theta_z + X_t' theta_x + u_t,   X_t' = Z_t' Pi + v_t'.
// Z holds all q instruments; its first p1 columns are exactly Z1.
// Immutable after construction; safe to share across threads.
class Dataset {
 public:
  // Validates the order condition (q >= p1 + p2), the Z1-prefix layout,
  // T >= 2*max(p, q) + 2, and finiteness of every entry.
  Dataset(VectorXd y, MatrixXd X, MatrixXd Z1, MatrixXd Z);

  // Skips the Z1-prefix check only. Used when instruments have been
  // re-mixed by an invertible transformation, which preserves the
  // instrument span but not the column layout.
  static Dataset from_parts_unchecked(VectorXd y, MatrixXd X, MatrixXd Z1,
                                      MatrixXd Z);

  Eigen::Index T() const { return y_.size(); }
  Eigen::Index p1() const { return Z1_.cols(); }
  Eigen::Index p2() const { return X_.cols(); }
  Eigen::Index p() const { return p1() + p2(); }
  Eigen::Index q() const { return Z_.cols(); }

  const VectorXd& y() const { return y_; }
  const MatrixXd& X() const { return X_; }
  const MatrixXd& Z1() const { return Z1_; }
  const MatrixXd& Z() const { return Z_; }

  // Regressor row W_t = (Z1_t', X_t')' as a T x p matrix.
  MatrixXd W() const;

 private:
  Dataset() = default;
  VectorXd y_;
  MatrixXd X_, Z1_, Z_;
};

// Contiguous row-range view into a Dataset. [begin, begin+len) with
// 0-based begin. Carries no ownership and no interior mutability.
class DatasetView {
 public:
  DatasetView(const Dataset& data, Eigen::Index begin, Eigen::Index len);

  Eigen::Index T() const { return len_; }
  Eigen::Index begin() const { return begin_; }
  const Dataset& parent() const { return *data_; }

  auto y() const { return data_->y().segment(begin_, len_); }
  auto X() const { return data_->X().middleRows(begin_, len_); }
  auto Z1() const { return data_->Z1().middleRows(begin_, len_); }
  auto Z() const { return data_->Z().middleRows(begin_, len_); }
  MatrixXd W() const;

  // Copies the rows into a standalone Dataset (validation relaxed to the
  // view's length: sub-segments may be shorter than a full dataset).
  Dataset materialize() const;

 private:
  const Dataset* data_;
  Eigen::Index begin_, len_;
};

// Sample partition: sorted 1-based break indices, each the last index of
// the regime it closes, matching floor(T * lambda).
struct Partition {
  std::vector<int> break_indices;
  double trimming = 0.15;

  // Throws SegmentTooShort / InvalidConfig when a segment is shorter than
  // max(p, ceil(trimming*T)) or the indices are not strictly increasing.
  void validate(Eigen::Index T, Eigen::Index p) const;

  int num_segments() const { return static_cast<int>(break_indices.size()) + 1; }
};

// Parameters attached to a partition: one theta per regime (ordered
// theta_z then theta_x) and one first-stage matrix per segment (a single
// entry when the first stage is common).
struct ParamSet {
  std::vector<VectorXd> theta_per_regime;
  std::vector<MatrixXd> pi_per_segment;  // each q x p2
  Partition regime_boundaries;
};

std::vector<DatasetView> split(const Dataset& data, const Partition& part);

// Column-role map for CSV ingestion. Roles may come from header prefixes
// (y, x1.., z1_.., ziv_..) or from a JSON sidecar schema.
struct CsvSchema {
  std::string y;
  std::vector<std::string> x;
  std::vector<std::string> z1;
  std::vector<std::string> ziv;
  bool empty() const { return y.empty() && x.empty() && z1.empty() && ziv.empty(); }
};

// Loads a comma-separated UTF-8 file with one header row. When `schema` is
// empty, roles are inferred from header prefixes. Z is assembled as
// [Z1 | external instruments] in declared order. Set add_intercept to
// prepend a column of ones to Z1 (and Z); the library never injects one
// silently.
Dataset load_csv(const std::string& path, const CsvSchema& schema = {},
                 bool add_intercept = false);

CsvSchema load_schema_json(const std::string& path);

// Writes a Dataset using the prefix naming convention; numeric content
// round-trips bit-exactly for finite doubles.
void write_csv(const std::string& path, const Dataset& data);

}  // namespace breakiv
