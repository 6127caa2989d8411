#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "elmi/common.hpp"
#include "elmi/kernel_spec.hpp"

namespace elmi {

enum class ColumnRole { X, Y };
enum class ColumnKind { Continuous, Binary };

struct ColumnSpec {
  ColumnRole role = ColumnRole::X;
  ColumnKind kind = ColumnKind::Continuous;
};

// Column-role map: one entry per CSV column, "<name>=<role>[,<kind>]".
struct ColumnConfig {
  std::map<std::string, ColumnSpec> columns;

  const ColumnSpec& at(const std::string& name) const {
    auto it = columns.find(name);
    if (it == columns.end()) throw SchemaError("column '" + name + "' not present in column config");
    return it->second;
  }
};

inline ColumnConfig parse_column_config_text(std::istream& in, const std::string& origin) {
  ColumnConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected <column>=<role>[,<kind>]");
    std::string name = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      s = (b == std::string::npos) ? std::string{} : s.substr(b, e - b + 1);
    };
    trim(name);
    ColumnSpec spec;
    std::string role = value, kind;
    if (const auto comma = value.find(','); comma != std::string::npos) {
      role = value.substr(0, comma);
      kind = value.substr(comma + 1);
    }
    trim(role);
    trim(kind);
    if (role == "x")
      spec.role = ColumnRole::X;
    else if (role == "y")
      spec.role = ColumnRole::Y;
    else
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": role must be 'x' or 'y', got '" + role + "'");
    if (kind.empty() || kind == "continuous")
      spec.kind = ColumnKind::Continuous;
    else if (kind == "binary")
      spec.kind = ColumnKind::Binary;
    else
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": kind must be 'continuous' or 'binary'");
    if (name.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty column name");
    if (!cfg.columns.emplace(name, spec).second)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate column '" + name + "'");
  }
  if (cfg.columns.empty()) throw ConfigError(origin + ": empty column config");
  return cfg;
}

inline ColumnConfig load_column_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open column config '" + path + "'");
  return parse_column_config_text(in, path);
}

// ---------------------------------------------------------------------------
// Dataset: always-observed X block, possibly missing Y block, missingness
// indicator delta. Immutable after construction; safe to share across
// threads.
// ---------------------------------------------------------------------------

class Dataset {
 public:
  Dataset(Matrix x, Matrix y, Eigen::VectorXi delta, std::vector<std::string> x_names,
          std::vector<std::string> y_names, std::vector<int> binary_x_cols)
      : x_(std::move(x)),
        y_(std::move(y)),
        delta_(std::move(delta)),
        x_names_(std::move(x_names)),
        y_names_(std::move(y_names)),
        binary_x_cols_(std::move(binary_x_cols)) {
    validate();
    finalize();
  }

  static Dataset from_arrays(Matrix x, Matrix y, Eigen::VectorXi delta,
                             std::vector<int> binary_x_cols = {}) {
    std::vector<std::string> xn, yn;
    for (Eigen::Index j = 0; j < x.cols(); ++j) xn.push_back("x" + std::to_string(j + 1));
    for (Eigen::Index j = 0; j < y.cols(); ++j) yn.push_back("y" + std::to_string(j + 1));
    return Dataset(std::move(x), std::move(y), std::move(delta), std::move(xn), std::move(yn),
                   std::move(binary_x_cols));
  }

  int n() const { return static_cast<int>(x_.rows()); }
  int dx() const { return static_cast<int>(x_.cols()); }
  int dy() const { return static_cast<int>(y_.cols()); }
  const Matrix& x() const { return x_; }
  const Matrix& y() const { return y_; }
  const Eigen::VectorXi& delta() const { return delta_; }
  const std::vector<std::string>& x_names() const { return x_names_; }
  const std::vector<std::string>& y_names() const { return y_names_; }
  const std::vector<int>& binary_x_cols() const { return binary_x_cols_; }
  const std::vector<int>& continuous_x_cols() const { return continuous_x_cols_; }
  const std::vector<int>& complete_rows() const { return complete_rows_; }
  const std::vector<int>& missing_rows() const { return missing_rows_; }
  int n_complete() const { return static_cast<int>(complete_rows_.size()); }

  // Per-column sd of X over all rows (denominator n); continuous columns
  // only. Zero-variance columns get scale 1 so kernel arguments stay finite.
  const Vector& x_scales() const { return x_scales_; }

  bool is_binary_x_col(int c) const {
    for (int b : binary_x_cols_)
      if (b == c) return true;
    return false;
  }

  // Values of the binary X columns in row i, in binary_x_cols_ order.
  std::vector<int> stratum_of_row(int i) const {
    std::vector<int> key;
    key.reserve(binary_x_cols_.size());
    for (int c : binary_x_cols_) key.push_back(static_cast<int>(x_(i, c)));
    return key;
  }
  std::vector<int> stratum_of_point(const Eigen::Ref<const Vector>& xpt) const {
    std::vector<int> key;
    key.reserve(binary_x_cols_.size());
    for (int c : binary_x_cols_) key.push_back(static_cast<int>(std::lround(xpt[c])));
    return key;
  }

  Dataset subset(const std::vector<int>& rows) const {
    const int m = static_cast<int>(rows.size());
    Matrix sx(m, dx()), sy(m, dy());
    Eigen::VectorXi sd(m);
    for (int i = 0; i < m; ++i) {
      sx.row(i) = x_.row(rows[i]);
      sy.row(i) = y_.row(rows[i]);
      sd[i] = delta_[rows[i]];
    }
    return Dataset(std::move(sx), std::move(sy), std::move(sd), x_names_, y_names_, binary_x_cols_);
  }

 private:
  void validate() const {
    const auto n = x_.rows();
    if (n < 1) throw ValidationError("Dataset: n must be >= 1");
    if (x_.cols() < 1) throw ValidationError("Dataset: d_x must be >= 1");
    if (y_.cols() < 1) throw ValidationError("Dataset: d_y must be >= 1");
    if (y_.rows() != n || delta_.size() != n)
      throw ValidationError("Dataset: row count mismatch between x, y and delta");
    if (static_cast<Eigen::Index>(x_names_.size()) != x_.cols() ||
        static_cast<Eigen::Index>(y_names_.size()) != y_.cols())
      throw ValidationError("Dataset: column name count mismatch");
    if (!x_.allFinite()) throw ValidationError("Dataset: x contains non-finite entries");
    bool any_complete = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (delta_[i] != 0 && delta_[i] != 1) throw ValidationError("Dataset: delta must be 0/1");
      if (delta_[i] == 1) {
        any_complete = true;
        if (!y_.row(i).allFinite())
          throw ValidationError("Dataset: non-finite y in complete row " + std::to_string(i));
      }
    }
    if (!any_complete) throw ValidationError("Dataset: no complete rows (no donors exist)");
    for (int c : binary_x_cols_) {
      if (c < 0 || c >= x_.cols()) throw ValidationError("Dataset: binary column index out of range");
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = x_(i, c);
        if (v != 0.0 && v != 1.0)
          throw ValidationError("Dataset: binary x column " + x_names_[static_cast<size_t>(c)] +
                                " has value outside {0,1} at row " + std::to_string(i));
      }
    }
  }

  void finalize() {
    for (int c = 0; c < dx(); ++c)
      if (!is_binary_x_col(c)) continuous_x_cols_.push_back(c);
    for (int i = 0; i < n(); ++i) {
      if (delta_[i] == 1)
        complete_rows_.push_back(i);
      else
        missing_rows_.push_back(i);
    }
    x_scales_ = Vector::Ones(dx());
    for (int c : continuous_x_cols_) {
      const double mean = x_.col(c).mean();
      const double var = (x_.col(c).array() - mean).square().mean();
      const double sd = std::sqrt(var);
      x_scales_[c] = sd > 0.0 ? sd : 1.0;
    }
  }

  Matrix x_;
  Matrix y_;
  Eigen::VectorXi delta_;
  std::vector<std::string> x_names_, y_names_;
  std::vector<int> binary_x_cols_;
  std::vector<int> continuous_x_cols_;
  std::vector<int> complete_rows_, missing_rows_;
  Vector x_scales_;
};

// ---------------------------------------------------------------------------
// CSV ingestion. UTF-8, header row required, comma separated, decimal point,
// no quoting or thousands separators. Missing Y cells carry the literal
// token "NA" (case-sensitive).
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = (b == std::string::npos) ? std::string{} : f.substr(b, e - b + 1);
  }
  return out;
}

inline double parse_number(const std::string& tok, int row, const std::string& col) {
  double v = 0.0;
  const char* begin = tok.data();
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end)
    throw ParseError("malformed numeric cell '" + tok + "' at data row " + std::to_string(row) +
                     ", column '" + col + "'");
  return v;
}

}  // namespace detail

inline Dataset load_csv(const std::string& path, const ColumnConfig& config,
                        WarningLog* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open data file '" + path + "'");

  std::string header;
  if (!std::getline(in, header)) throw SchemaError(path + ": missing header row");
  const auto names = detail::split_csv_line(header);
  const int ncol = static_cast<int>(names.size());

  std::vector<int> x_cols, y_cols;
  for (int c = 0; c < ncol; ++c) {
    const ColumnSpec& spec = config.at(names[static_cast<size_t>(c)]);
    if (spec.role == ColumnRole::X)
      x_cols.push_back(c);
    else
      y_cols.push_back(c);
  }
  if (static_cast<size_t>(ncol) != config.columns.size())
    throw SchemaError(path + ": header has " + std::to_string(ncol) + " columns but config declares " +
                      std::to_string(config.columns.size()));
  if (x_cols.empty()) throw SchemaError(path + ": no columns with role x");
  if (y_cols.empty()) throw SchemaError(path + ": no columns with role y");

  std::vector<std::vector<double>> xrows, yrows;
  std::vector<int> delta;
  std::string line;
  int rowno = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rowno;
    const auto fields = detail::split_csv_line(line);
    if (static_cast<int>(fields.size()) != ncol)
      throw ParseError(path + ": data row " + std::to_string(rowno) + " has " +
                       std::to_string(fields.size()) + " fields, expected " + std::to_string(ncol));
    std::vector<double> xr, yr;
    xr.reserve(x_cols.size());
    yr.reserve(y_cols.size());
    int na_count = 0;
    for (int c : x_cols) {
      const std::string& tok = fields[static_cast<size_t>(c)];
      if (tok == "NA")
        throw SchemaError(path + ": 'NA' in x column '" + names[static_cast<size_t>(c)] +
                          "' at data row " + std::to_string(rowno) + "; x must be fully observed");
      xr.push_back(detail::parse_number(tok, rowno, names[static_cast<size_t>(c)]));
    }
    for (int c : y_cols) {
      const std::string& tok = fields[static_cast<size_t>(c)];
      if (tok == "NA") {
        ++na_count;
        yr.push_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        yr.push_back(detail::parse_number(tok, rowno, names[static_cast<size_t>(c)]));
      }
    }
    // Block missingness: a partially missing Y row is demoted to fully
    // missing and counted.
    if (na_count > 0 && na_count < static_cast<int>(y_cols.size()))
      warn(warnings, "partial_missing_row_demoted", "data row " + std::to_string(rowno));
    delta.push_back(na_count == 0 ? 1 : 0);
    xrows.push_back(std::move(xr));
    yrows.push_back(std::move(yr));
  }
  if (rowno == 0) throw ValidationError(path + ": no data rows");

  const int n = rowno;
  Matrix x(n, static_cast<int>(x_cols.size()));
  Matrix y(n, static_cast<int>(y_cols.size()));
  Eigen::VectorXi dl(n);
  for (int i = 0; i < n; ++i) {
    for (size_t j = 0; j < x_cols.size(); ++j) x(i, static_cast<int>(j)) = xrows[static_cast<size_t>(i)][j];
    for (size_t j = 0; j < y_cols.size(); ++j) y(i, static_cast<int>(j)) = yrows[static_cast<size_t>(i)][j];
    dl[i] = delta[static_cast<size_t>(i)];
  }
  if ((dl.array() == 1).count() == 0)
    throw ValidationError(path + ": zero complete rows after applying missingness rules");

  std::vector<std::string> xn, yn;
  std::vector<int> binary_cols;
  for (size_t j = 0; j < x_cols.size(); ++j) {
    const std::string& nm = names[static_cast<size_t>(x_cols[j])];
    xn.push_back(nm);
    if (config.at(nm).kind == ColumnKind::Binary) binary_cols.push_back(static_cast<int>(j));
  }
  for (int c : y_cols) yn.push_back(names[static_cast<size_t>(c)]);

  return Dataset(std::move(x), std::move(y), std::move(dl), std::move(xn), std::move(yn),
                 std::move(binary_cols));
}

inline void save_csv(const std::string& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  for (int c = 0; c < d.dx(); ++c) out << (c ? "," : "") << d.x_names()[static_cast<size_t>(c)];
  for (int c = 0; c < d.dy(); ++c) out << "," << d.y_names()[static_cast<size_t>(c)];
  out << "\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };
  for (int i = 0; i < d.n(); ++i) {
    for (int c = 0; c < d.dx(); ++c) {
      if (c) out << ",";
      put(d.x()(i, c));
    }
    for (int c = 0; c < d.dy(); ++c) {
      out << ",";
      if (d.delta()[i] == 1)
        put(d.y()(i, c));
      else
        out << "NA";
    }
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Runtime diagnostics against the smoothing regularity conditions. All
// findings are non-fatal warnings.
// ---------------------------------------------------------------------------

struct ConditionsReport {
  std::vector<std::string> warnings;
  bool ok() const { return warnings.empty(); }
};

inline ConditionsReport validate_conditions(const Dataset& d, const KernelSpec& k) {
  k.validate();
  ConditionsReport rep;
  const double frac = static_cast<double>(d.n_complete()) / d.n();
  if (frac < 0.05)
    rep.warnings.push_back("complete-case fraction " + std::to_string(frac) +
                           " below 0.05; propensity may not be bounded away from zero");
  const int d_cont = static_cast<int>(d.continuous_x_cols().size());
  if (d_cont >= 4 && k.order == 2)
    rep.warnings.push_back("d_x = " + std::to_string(d_cont) +
                           " with a second-order kernel; bias control requires a higher-order kernel "
                           "(order q with 2q > d_x)");
  const double nh = d.n() * std::pow(k.bandwidth, d_cont);
  if (nh < 1.0)
    rep.warnings.push_back("n*h^d_x = " + std::to_string(nh) +
                           " < 1; bandwidth too small for consistent smoothing");
  return rep;
}

}  // namespace elmi
