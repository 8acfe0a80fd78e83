#pragma once

#include <Eigen/Dense>

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "knnres/core.hpp"
#include "knnres/errors.hpp"

namespace knnres {

struct CsvOptions {
  char delimiter = ',';
  std::optional<bool> has_header;       // unset: header iff the first row is not all numeric
  std::vector<std::string> columns;     // subset by header name, in this order
};

struct Table {
  PointSet points;
  std::vector<std::string> names;  // empty when the file had no header
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_row(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
    } else if (ch == delim && !quoted) {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

inline std::optional<double> parse_double(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size() || (errno == ERANGE && std::isinf(v))) return std::nullopt;
  return v;
}

}  // namespace detail

/// Reads a rectangular numeric CSV. Blank lines are skipped. Errors name the
/// 1-based line and column of the offending cell.
inline Table parse_csv(std::istream& in, const CsvOptions& opt = {}, const std::string& source = "<stream>") {
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_no;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (detail::trim(line).empty()) continue;
    rows.push_back(detail::split_row(line, opt.delimiter));
    line_no.push_back(ln);
  }
  if (rows.empty()) throw InvalidData(source + ": empty file");

  bool header = false;
  if (opt.has_header) {
    header = *opt.has_header;
  } else {
    for (const auto& c : rows.front())
      if (!detail::parse_double(c)) header = true;
  }
  std::vector<std::string> names;
  if (header) {
    names = rows.front();
    rows.erase(rows.begin());
    line_no.erase(line_no.begin());
  }
  if (rows.empty()) throw InvalidData(source + ": no data rows");

  const std::size_t width = header ? names.size() : rows.front().size();
  std::vector<std::size_t> pick;
  if (!opt.columns.empty()) {
    if (!header) throw InvalidArgument(source + ": column subset requires a header row");
    for (const auto& want : opt.columns) {
      std::size_t idx = names.size();
      for (std::size_t c = 0; c < names.size(); ++c)
        if (names[c] == want) idx = c;
      if (idx == names.size()) throw InvalidData(source + ": no column named '" + want + "'");
      pick.push_back(idx);
    }
  } else {
    for (std::size_t c = 0; c < width; ++c) pick.push_back(c);
  }

  Matrix data(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(pick.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != width)
      throw InvalidData(source + ": line " + std::to_string(line_no[r]) + " has " + std::to_string(rows[r].size()) +
                        " fields, expected " + std::to_string(width));
    for (std::size_t c = 0; c < pick.size(); ++c) {
      const auto v = detail::parse_double(rows[r][pick[c]]);
      if (!v || !std::isfinite(*v))
        throw InvalidData(source + ": line " + std::to_string(line_no[r]) + ", column " + std::to_string(pick[c] + 1) +
                          ": '" + rows[r][pick[c]] + "' is not a finite number");
      data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = *v;
    }
  }
  std::vector<std::string> kept;
  if (header)
    for (auto c : pick) kept.push_back(names[c]);
  return {PointSet(std::move(data)), std::move(kept)};
}

inline Table load_pointset(const std::string& path, const CsvOptions& opt = {}) {
  std::ifstream in(path);
  if (!in) throw InvalidData("cannot open '" + path + "'");
  return parse_csv(in, opt, path);
}

/// 17 significant digits, so a save/load round trip is value-exact.
inline void write_csv(std::ostream& out, const Matrix& data, const std::vector<std::string>& names = {},
                      char delim = ',') {
  if (!names.empty()) {
    for (std::size_t c = 0; c < names.size(); ++c) out << (c ? std::string(1, delim) : "") << names[c];
    out << '\n';
  }
  char buf[40];
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", data(r, c));
      if (c) out << delim;
      out << buf;
    }
    out << '\n';
  }
}

inline void save_pointset(const std::string& path, const PointSet& ps, const std::vector<std::string>& names = {},
                          char delim = ',') {
  std::ofstream out(path);
  if (!out) throw InvalidData("cannot write '" + path + "'");
  write_csv(out, ps.matrix(), names, delim);
  if (!out) throw InvalidData("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Preprocessing

enum class PrepKind { Log1p, Standardize, Minmax, DropZeroRows };

struct PrepStep {
  PrepKind kind = PrepKind::Log1p;
  double threshold = 0.4;  // DropZeroRows: drop rows whose zero fraction >= threshold
};

/// Parameters fitted by one step, reusable on another set.
struct FittedStep {
  PrepStep step;
  RowVector shift;  // Standardize: mean, Minmax: min
  RowVector scale;  // Standardize: std, Minmax: max - min
  std::vector<Eigen::Index> dropped_rows;
};

struct Preprocessed {
  PointSet points;
  std::vector<FittedStep> fitted;
  std::vector<std::string> warnings;
};

/// Parses "log1p", "standardize", "minmax", "drop_zero_rows[:threshold]".
inline PrepStep parse_prep_step(const std::string& text) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  PrepStep s;
  if (name == "log1p") {
    s.kind = PrepKind::Log1p;
  } else if (name == "standardize") {
    s.kind = PrepKind::Standardize;
  } else if (name == "minmax") {
    s.kind = PrepKind::Minmax;
  } else if (name == "drop_zero_rows") {
    s.kind = PrepKind::DropZeroRows;
    if (colon != std::string::npos) {
      const auto v = detail::parse_double(text.substr(colon + 1));
      if (!v || *v < 0 || *v > 1) throw InvalidArgument("drop_zero_rows threshold must be in [0, 1]");
      s.threshold = *v;
    }
  } else {
    throw InvalidArgument("unknown preprocessing step '" + text + "'");
  }
  return s;
}

inline const char* prep_name(PrepKind k) {
  switch (k) {
    case PrepKind::Log1p: return "log1p";
    case PrepKind::Standardize: return "standardize";
    case PrepKind::Minmax: return "minmax";
    case PrepKind::DropZeroRows: return "drop_zero_rows";
  }
  return "?";
}

namespace detail {

inline Matrix apply_fitted(const Matrix& x, const FittedStep& f) {
  switch (f.step.kind) {
    case PrepKind::Log1p:
      return x.array().log1p().matrix();
    case PrepKind::Standardize:
    case PrepKind::Minmax:
      return ((x.rowwise() - f.shift).array().rowwise() / f.scale.array()).matrix();
    case PrepKind::DropZeroRows: {
      std::vector<Eigen::Index> keep;
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double zeros = static_cast<double>((x.row(r).array() == 0.0).count());
        if (zeros / static_cast<double>(x.cols()) < f.step.threshold) keep.push_back(r);
      }
      if (keep.empty()) throw InvalidData("drop_zero_rows removed every row");
      Matrix out(static_cast<Eigen::Index>(keep.size()), x.cols());
      for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(keep[i]);
      return out;
    }
  }
  return x;
}

inline FittedStep fit_step(const Matrix& x, const PrepStep& step, std::vector<std::string>& warnings) {
  FittedStep f{step, {}, {}, {}};
  if (step.kind == PrepKind::Standardize) {
    f.shift = x.colwise().mean();
    const double n = static_cast<double>(x.rows());
    f.scale = ((x.rowwise() - f.shift).colwise().squaredNorm() / n).cwiseSqrt();
    for (Eigen::Index c = 0; c < f.scale.size(); ++c)
      if (!(f.scale(c) > 0)) {
        f.scale(c) = 1.0;
        warnings.push_back("standardize: column " + std::to_string(c) + " is constant; left centred only");
      }
  } else if (step.kind == PrepKind::Minmax) {
    f.shift = x.colwise().minCoeff();
    f.scale = x.colwise().maxCoeff() - f.shift;
    for (Eigen::Index c = 0; c < f.scale.size(); ++c)
      if (!(f.scale(c) > 0)) {
        f.scale(c) = 1.0;
        warnings.push_back("minmax: column " + std::to_string(c) + " is constant");
      }
  } else if (step.kind == PrepKind::Log1p) {
    if ((x.array() <= -1.0).any()) throw InvalidData("log1p: input has values <= -1");
  } else if (step.kind == PrepKind::DropZeroRows) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double zeros = static_cast<double>((x.row(r).array() == 0.0).count());
      if (zeros / static_cast<double>(x.cols()) >= step.threshold) f.dropped_rows.push_back(r);
    }
  }
  return f;
}

inline std::vector<std::string> order_warnings(const std::vector<PrepStep>& steps) {
  std::vector<std::string> w;
  bool scaled = false;
  for (const auto& s : steps) {
    if (s.kind == PrepKind::Standardize || s.kind == PrepKind::Minmax) scaled = true;
    if (s.kind == PrepKind::Log1p && scaled) w.push_back("log1p applied after a rescaling step");
    if (s.kind == PrepKind::DropZeroRows && scaled) w.push_back("drop_zero_rows applied after a rescaling step");
  }
  return w;
}

}  // namespace detail

/// Fits and applies the steps in order.
inline Preprocessed preprocess(const PointSet& ps, const std::vector<PrepStep>& steps) {
  Preprocessed out{ps, {}, detail::order_warnings(steps)};
  Matrix x = ps.matrix();
  for (const auto& s : steps) {
    auto f = detail::fit_step(x, s, out.warnings);
    x = detail::apply_fitted(x, f);
    out.fitted.push_back(std::move(f));
  }
  out.points = PointSet(std::move(x));
  return out;
}

/// Applies previously fitted steps (e.g. reference statistics) to another set.
inline PointSet apply_preprocess(const PointSet& ps, const std::vector<FittedStep>& fitted) {
  Matrix x = ps.matrix();
  for (const auto& f : fitted) {
    detail::require(f.shift.size() == 0 || f.shift.size() == x.cols(), "apply_preprocess: dimension mismatch");
    x = detail::apply_fitted(x, f);
  }
  return PointSet(std::move(x));
}

/// Preprocesses a reference/target pair. By default each set is fitted on
/// its own statistics; with shared_stats the reference fits are reused for
/// the target.
inline std::pair<Preprocessed, Preprocessed> preprocess_pair(const PointSet& reference, const PointSet& target,
                                                             const std::vector<PrepStep>& steps, bool shared_stats) {
  Preprocessed ref = preprocess(reference, steps);
  if (!shared_stats) return {std::move(ref), preprocess(target, steps)};
  Preprocessed tgt{apply_preprocess(target, ref.fitted), ref.fitted, {}};
  return {std::move(ref), std::move(tgt)};
}

}  // namespace knnres
