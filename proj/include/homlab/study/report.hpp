#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

namespace homlab::study {

struct RateFit {
  std::string column;
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  /// Pairs that entered the fit.
  int used = 0;
  /// Fewer than 3 positive pairs, or all y equal.
  bool skipped = false;
  std::vector<std::string> warnings;
};

/// Ordinary least squares of log y against log x. Nonpositive pairs are
/// excluded with a warning; fewer than 3 remaining pairs skips the fit.
RateFit fit_rate(const std::vector<double>& xs, const std::vector<double>& ys, const std::string& column = {});

using TableCell = std::variant<double, std::int64_t, std::string>;

/// Rows of one study in schedule order.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<TableCell>> rows;
  /// Free-form result lines (written as `# ` comments after the config echo).
  std::vector<std::string> notes;
  std::string x_column;
  /// Columns fitted and plotted against x_column.
  std::vector<std::string> series;
  bool log_x = true;

  int column_index(const std::string& name) const;
  /// Numeric values of a column; strings become NaN.
  std::vector<double> column(const std::string& name) const;
  void add_row(std::vector<TableCell> row);
};

std::vector<RateFit> fit_series(const Table& table);

/// `#`-prefixed header lines, the column row, then one line per row with
/// %.16e floats (17 significant digits).
void write_csv(std::ostream& out, const Table& table, const std::vector<std::string>& header);
void write_csv_file(const std::string& path, const Table& table, const std::vector<std::string>& header);

/// Reads a file produced by write_csv; numeric-looking cells become doubles
/// and the `#` lines are returned in `header`.
Table read_csv_file(const std::string& path, std::vector<std::string>* header = nullptr);

/// Self-contained SVG: log-log axes (linear x when !log_x), one polyline per
/// series and dashed guides of slope 1/2 and 1 anchored at the first point
/// of the first series.
std::string render_svg(const Table& table, const std::string& title);
void emit_plot(const Table& table, const std::string& path, const std::string& title);

}  // namespace homlab::study
