#include "breakiv/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace breakiv {

namespace {

void check_common(const VectorXd& y, const MatrixXd& X, const MatrixXd& Z1,
                  const MatrixXd& Z, bool full_length_rule) {
  const Eigen::Index T = y.size();
  if (X.rows() != T || Z1.rows() != T || Z.rows() != T)
    fail(ErrorCode::DimensionMismatch, "y, X, Z1, Z row counts differ");
  const Eigen::Index p1 = Z1.cols(), p2 = X.cols(), q = Z.cols();
  if (p2 < 1) fail(ErrorCode::DimensionMismatch, "need at least one endogenous regressor");
  if (q < p1 + p2)
    fail(ErrorCode::DimensionMismatch,
         "order condition violated: q=" + std::to_string(q) + " < p1+p2=" +
             std::to_string(p1 + p2));
  const Eigen::Index need =
      full_length_rule ? 2 * std::max(p1 + p2, q) + 2 : std::max(p1 + p2, q);
  if (T < need)
    fail(ErrorCode::TooFewRows, "T=" + std::to_string(T) + " < required " +
                                    std::to_string(need));
  if (!y.allFinite() || !X.allFinite() || !Z1.allFinite() || !Z.allFinite())
    fail(ErrorCode::NonNumericCell, "non-finite entry in dataset");
}

}  // namespace

Dataset::Dataset(VectorXd y, MatrixXd X, MatrixXd Z1, MatrixXd Z) {
  check_common(y, X, Z1, Z, true);
  if (Z1.cols() > 0 && Z.leftCols(Z1.cols()) != Z1)
    fail(ErrorCode::DimensionMismatch, "first p1 columns of Z must equal Z1");
  y_ = std::move(y);
  X_ = std::move(X);
  Z1_ = std::move(Z1);
  Z_ = std::move(Z);
}

Dataset Dataset::from_parts_unchecked(VectorXd y, MatrixXd X, MatrixXd Z1,
                                      MatrixXd Z) {
  check_common(y, X, Z1, Z, false);
  Dataset d;
  d.y_ = std::move(y);
  d.X_ = std::move(X);
  d.Z1_ = std::move(Z1);
  d.Z_ = std::move(Z);
  return d;
}

MatrixXd Dataset::W() const {
  MatrixXd w(T(), p());
  if (p1() > 0) w.leftCols(p1()) = Z1_;
  w.rightCols(p2()) = X_;
  return w;
}

DatasetView::DatasetView(const Dataset& data, Eigen::Index begin, Eigen::Index len)
    : data_(&data), begin_(begin), len_(len) {
  if (begin < 0 || len < 1 || begin + len > data.T())
    fail(ErrorCode::SegmentTooShort, "view range out of bounds");
}

MatrixXd DatasetView::W() const {
  MatrixXd w(len_, data_->p());
  if (data_->p1() > 0) w.leftCols(data_->p1()) = Z1();
  w.rightCols(data_->p2()) = X();
  return w;
}

Dataset DatasetView::materialize() const {
  return Dataset::from_parts_unchecked(y(), X(), Z1(), Z());
}

void Partition::validate(Eigen::Index T, Eigen::Index p) const {
  if (!(trimming > 0.0 && trimming < 0.5))
    fail(ErrorCode::InvalidConfig, "trimming must lie in (0, 0.5)");
  const Eigen::Index min_len =
      std::max<Eigen::Index>(p, static_cast<Eigen::Index>(std::ceil(trimming * static_cast<double>(T))));
  Eigen::Index prev = 0;
  for (int b : break_indices) {
    if (b <= prev)
      fail(ErrorCode::InvalidConfig, "break indices must be strictly increasing in (0, T)");
    if (b >= T) fail(ErrorCode::InvalidConfig, "break index beyond sample");
    if (b - prev < min_len)
      fail(ErrorCode::SegmentTooShort, "segment ending at " + std::to_string(b) +
                                           " shorter than " + std::to_string(min_len));
    prev = b;
  }
  if (T - prev < min_len)
    fail(ErrorCode::SegmentTooShort, "last segment shorter than " + std::to_string(min_len));
}

std::vector<DatasetView> split(const Dataset& data, const Partition& part) {
  part.validate(data.T(), data.p());
  std::vector<DatasetView> views;
  Eigen::Index prev = 0;
  for (int b : part.break_indices) {
    views.emplace_back(data, prev, b - prev);
    prev = b;
  }
  views.emplace_back(data, prev, data.T() - prev);
  return views;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool parse_double(const std::string& cell, double& out) {
  const std::string t = trim(cell);
  if (t.empty()) return false;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

int find_column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  fail(ErrorCode::MissingColumn, "column '" + name + "' not found in header");
}

bool has_prefix(const std::string& s, const std::string& prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

CsvSchema infer_schema(const std::vector<std::string>& header) {
  CsvSchema schema;
  for (const auto& raw : header) {
    const std::string name = trim(raw);
    if (name == "y") {
      schema.y = name;
    } else if (has_prefix(name, "ziv_")) {
      schema.ziv.push_back(name);
    } else if (has_prefix(name, "z1_")) {
      schema.z1.push_back(name);
    } else if (name.size() >= 2 && name[0] == 'x' &&
               std::isdigit(static_cast<unsigned char>(name[1]))) {
      schema.x.push_back(name);
    }
    // Unrecognized columns are ignored.
  }
  return schema;
}

}  // namespace

CsvSchema load_schema_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MissingColumn, "cannot open schema file " + path);
  nlohmann::json j;
  in >> j;
  CsvSchema s;
  if (j.contains("y")) s.y = j.at("y").get<std::string>();
  if (j.contains("x")) s.x = j.at("x").get<std::vector<std::string>>();
  if (j.contains("z1")) s.z1 = j.at("z1").get<std::vector<std::string>>();
  if (j.contains("ziv")) s.ziv = j.at("ziv").get<std::vector<std::string>>();
  return s;
}

Dataset load_csv(const std::string& path, const CsvSchema& schema_in,
                 bool add_intercept) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MissingColumn, "cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::TooFewRows, "empty file " + path);
  std::vector<std::string> header = split_line(line);
  for (auto& h : header) h = trim(h);

  CsvSchema schema = schema_in.empty() ? infer_schema(header) : schema_in;
  if (schema.y.empty()) fail(ErrorCode::MissingColumn, "no outcome column (role y)");
  if (schema.x.empty()) fail(ErrorCode::MissingColumn, "no endogenous column (role x)");

  const int y_col = find_column(header, schema.y);
  std::vector<int> x_cols, z1_cols, ziv_cols;
  for (const auto& n : schema.x) x_cols.push_back(find_column(header, n));
  for (const auto& n : schema.z1) z1_cols.push_back(find_column(header, n));
  for (const auto& n : schema.ziv) ziv_cols.push_back(find_column(header, n));

  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size())
      fail(ErrorCode::DimensionMismatch,
           "row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
               " cells, header has " + std::to_string(header.size()));
    std::vector<double> parsed(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!parse_double(cells[c], parsed[c]))
        fail(ErrorCode::NonNumericCell, "row " + std::to_string(line_no) +
                                            ", column '" + header[c] + "'");
    }
    rows.push_back(std::move(parsed));
  }

  const Eigen::Index T = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index p2 = static_cast<Eigen::Index>(x_cols.size());
  const Eigen::Index p1_file = static_cast<Eigen::Index>(z1_cols.size());
  const Eigen::Index p1 = p1_file + (add_intercept ? 1 : 0);
  const Eigen::Index q = p1 + static_cast<Eigen::Index>(ziv_cols.size());

  VectorXd y(T);
  MatrixXd X(T, p2), Z1(T, p1), Z(T, q);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto& r = rows[static_cast<std::size_t>(t)];
    y(t) = r[static_cast<std::size_t>(y_col)];
    for (Eigen::Index j = 0; j < p2; ++j)
      X(t, j) = r[static_cast<std::size_t>(x_cols[static_cast<std::size_t>(j)])];
    Eigen::Index col = 0;
    if (add_intercept) Z1(t, col++) = 1.0;
    for (int zc : z1_cols) Z1(t, col++) = r[static_cast<std::size_t>(zc)];
    Z.row(t).head(p1) = Z1.row(t);
    col = p1;
    for (int zc : ziv_cols) Z(t, col++) = r[static_cast<std::size_t>(zc)];
  }
  return Dataset(std::move(y), std::move(X), std::move(Z1), std::move(Z));
}

void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::MissingColumn, "cannot write " + path);
  out << "y";
  for (Eigen::Index j = 0; j < data.p2(); ++j) out << ",x" << (j + 1);
  for (Eigen::Index j = 0; j < data.p1(); ++j) out << ",z1_" << (j + 1);
  for (Eigen::Index j = data.p1(); j < data.q(); ++j)
    out << ",ziv_" << (j - data.p1() + 1);
  out << "\n";

  char buf[64];
  auto emit = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };
  for (Eigen::Index t = 0; t < data.T(); ++t) {
    emit(data.y()(t));
    for (Eigen::Index j = 0; j < data.p2(); ++j) { out << ','; emit(data.X()(t, j)); }
    for (Eigen::Index j = 0; j < data.p1(); ++j) { out << ','; emit(data.Z1()(t, j)); }
    for (Eigen::Index j = data.p1(); j < data.q(); ++j) { out << ','; emit(data.Z()(t, j)); }
    out << "\n";
  }
}

}  // namespace breakiv
