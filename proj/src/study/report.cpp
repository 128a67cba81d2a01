#include "homlab/study/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "homlab/study/config.hpp"

namespace homlab::study {

RateFit fit_rate(const std::vector<double>& xs, const std::vector<double>& ys, const std::string& column) {
  if (xs.size() != ys.size()) throw InvalidArgument("fit_rate: xs and ys differ in length");
  RateFit fit;
  fit.column = column;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] > 0.0 && ys[i] > 0.0 && std::isfinite(xs[i]) && std::isfinite(ys[i])) {
      lx.push_back(std::log(xs[i]));
      ly.push_back(std::log(ys[i]));
    } else {
      fit.warnings.push_back(fmt::format("{}: row {} excluded (x = {}, y = {})", column.empty() ? "fit" : column, i,
                                         xs[i], ys[i]));
    }
  }
  fit.used = static_cast<int>(lx.size());
  if (lx.size() < 3) {
    fit.skipped = true;
    fit.slope = fit.intercept = fit.r2 = std::numeric_limits<double>::quiet_NaN();
    return fit;
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (sxx == 0.0) {
    fit.skipped = true;
    fit.warnings.push_back("fit: all x equal");
    fit.slope = fit.intercept = fit.r2 = std::numeric_limits<double>::quiet_NaN();
    return fit;
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

int Table::column_index(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw InvalidArgument("table has no column '" + name + "'");
  return static_cast<int>(it - columns.begin());
}

std::vector<double> Table::column(const std::string& name) const {
  const int j = column_index(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    const TableCell& c = r[j];
    if (const double* d = std::get_if<double>(&c)) {
      out.push_back(*d);
    } else if (const auto* i = std::get_if<std::int64_t>(&c)) {
      out.push_back(static_cast<double>(*i));
    } else {
      out.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return out;
}

void Table::add_row(std::vector<TableCell> row) {
  if (row.size() != columns.size()) {
    throw InvalidArgument(fmt::format("row has {} cells for {} columns", row.size(), columns.size()));
  }
  rows.push_back(std::move(row));
}

std::vector<RateFit> fit_series(const Table& table) {
  std::vector<RateFit> fits;
  if (table.x_column.empty() || !table.log_x) return fits;
  const std::vector<double> xs = table.column(table.x_column);
  for (const auto& s : table.series) fits.push_back(fit_rate(xs, table.column(s), s));
  return fits;
}

namespace {

std::string format_cell(const TableCell& c) {
  if (const double* d = std::get_if<double>(&c)) return fmt::format("{:.16e}", *d);
  if (const auto* i = std::get_if<std::int64_t>(&c)) return fmt::format("{}", *i);
  const std::string& s = std::get<std::string>(c);
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

TableCell parse_cell(const std::string& s) {
  if (s.empty()) return s;
  std::int64_t i = 0;
  auto [p1, e1] = std::from_chars(s.data(), s.data() + s.size(), i);
  if (e1 == std::errc() && p1 == s.data() + s.size()) return i;
  double d = 0.0;
  auto [p2, e2] = std::from_chars(s.data(), s.data() + s.size(), d);
  if (e2 == std::errc() && p2 == s.data() + s.size()) return d;
  return s;
}

}  // namespace

void write_csv(std::ostream& out, const Table& table, const std::vector<std::string>& header) {
  for (const auto& h : header) out << "# " << h << "\n";
  for (const auto& n : table.notes) out << "# " << n << "\n";
  for (std::size_t j = 0; j < table.columns.size(); ++j) out << (j ? "," : "") << table.columns[j];
  out << "\n";
  for (const auto& r : table.rows) {
    for (std::size_t j = 0; j < r.size(); ++j) out << (j ? "," : "") << format_cell(r[j]);
    out << "\n";
  }
}

void write_csv_file(const std::string& path, const Table& table, const std::vector<std::string>& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  write_csv(out, table, header);
  if (!out) throw InvalidArgument("write to '" + path + "' failed");
}

Table read_csv_file(const std::string& path, std::vector<std::string>* header) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  Table t;
  std::string line;
  bool have_columns = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (header) header->push_back(line.size() > 2 ? line.substr(2) : std::string());
      continue;
    }
    if (!have_columns) {
      t.columns = split_csv_line(line);
      have_columns = true;
      continue;
    }
    std::vector<TableCell> row;
    for (const auto& cell : split_csv_line(line)) row.push_back(parse_cell(cell));
    if (row.size() != t.columns.size()) throw InvalidArgument(fmt::format("'{}': ragged row '{}'", path, line));
    t.rows.push_back(std::move(row));
  }
  if (!have_columns) throw InvalidArgument("'" + path + "' has no column row");
  return t;
}

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 170.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  bool log = true;

  double t(double v) const {
    const double a = log ? std::log10(v) : v;
    return (a - lo) / (hi - lo);
  }
};

// Range in plot units (decades when logarithmic), padded to whole decades.
Axis make_axis(const std::vector<double>& values, bool log) {
  Axis ax;
  ax.log = log;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : values) {
    if (!std::isfinite(v) || (log && v <= 0.0)) continue;
    const double a = log ? std::log10(v) : v;
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  if (!std::isfinite(lo)) {
    lo = log ? -3.0 : 0.0;
    hi = log ? 0.0 : 1.0;
  }
  if (log) {
    lo = std::floor(lo);
    hi = std::ceil(hi);
    if (hi <= lo) hi = lo + 1.0;
  } else {
    if (hi <= lo) hi = lo + 1.0;
  }
  ax.lo = lo;
  ax.hi = hi;
  return ax;
}

}  // namespace

std::string render_svg(const Table& table, const std::string& title) {
  const bool have_x = !table.x_column.empty() && !table.rows.empty();
  const std::vector<double> xs = have_x ? table.column(table.x_column) : std::vector<double>{};
  std::vector<std::vector<double>> ys;
  std::vector<double> all_y;
  for (const auto& s : table.series) {
    ys.push_back(table.column(s));
    all_y.insert(all_y.end(), ys.back().begin(), ys.back().end());
  }
  const Axis ax = make_axis(xs, table.log_x);
  const Axis ay = make_axis(all_y, true);
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + pw * ax.t(x); };
  auto py = [&](double y) { return kTop + ph * (1.0 - ay.t(y)); };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"24\" font-size=\"14\">{3}</text>\n",
      kWidth, kHeight, kLeft, escape(title));
  svg += "<defs><clipPath id=\"plot\">";
  svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\"/>", kLeft, kTop, pw, ph);
  svg += "</clipPath></defs>\n";
  svg += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n", kLeft,
                     kTop, pw, ph);

  // Ticks: decades on log axes, five intervals on a linear one.
  auto tick_label = [](double a, bool log) { return log ? fmt::format("1e{}", static_cast<int>(a)) : fmt::format("{:g}", a); };
  const int xticks = ax.log ? static_cast<int>(ax.hi - ax.lo) : 5;
  for (int k = 0; k <= xticks; ++k) {
    const double a = ax.lo + (ax.hi - ax.lo) * k / xticks;
    const double x = kLeft + pw * (a - ax.lo) / (ax.hi - ax.lo);
    svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\" stroke=\"#ddd\"/>\n", x, kTop, kTop + ph);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", x, kTop + ph + 18,
                       tick_label(a, ax.log));
  }
  const int yticks = static_cast<int>(ay.hi - ay.lo);
  for (int k = 0; k <= yticks; ++k) {
    const double a = ay.lo + k;
    const double y = kTop + ph * (1.0 - (a - ay.lo) / (ay.hi - ay.lo));
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"#ddd\"/>\n", kLeft, y, kLeft + pw);
    svg += fmt::format("<text x=\"{}\" y=\"{:.2f}\" text-anchor=\"end\">{}</text>\n", kLeft - 6, y + 4,
                       tick_label(a, true));
  }
  svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", kLeft + pw / 2, kHeight - 16,
                     escape(table.x_column.empty() ? "x" : table.x_column));

  // Reference slopes through the first point of the first series.
  double x0 = std::numeric_limits<double>::quiet_NaN(), y0 = x0;
  for (std::size_t s = 0; s < ys.size() && !std::isfinite(x0); ++s) {
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i] > 0.0 && ys[s][i] > 0.0) {
        x0 = xs[i];
        y0 = ys[s][i];
        break;
      }
    }
  }
  int legend = 0;
  auto legend_entry = [&](const std::string& label, const char* color, bool dashed) {
    const double y = kTop + 10 + 18 * legend++;
    const double x = kLeft + pw + 12;
    svg += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"{}/>\n", x, y,
                       x + 24, y, color, dashed ? " stroke-dasharray=\"6,4\"" : "");
    svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", x + 30, y + 4, escape(label));
  };
  if (ax.log && std::isfinite(x0)) {
    const double xlo = std::pow(10.0, ax.lo), xhi = std::pow(10.0, ax.hi);
    for (double slope : {0.5, 1.0}) {
      const double ya = y0 * std::pow(xlo / x0, slope), yb = y0 * std::pow(xhi / x0, slope);
      svg += fmt::format(
          "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#888\" stroke-dasharray=\"6,4\" "
          "clip-path=\"url(#plot)\"/>\n",
          px(xlo), py(ya), px(xhi), py(yb));
      legend_entry(fmt::format("slope {}", slope == 0.5 ? "1/2" : "1"), "#888", true);
    }
  }
  for (std::size_t s = 0; s < ys.size(); ++s) {
    const char* color = kColors[s % std::size(kColors)];
    std::string pts;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!(ys[s][i] > 0.0) || !std::isfinite(ys[s][i]) || (ax.log && !(xs[i] > 0.0))) continue;
      pts += fmt::format("{:.2f},{:.2f} ", px(xs[i]), py(ys[s][i]));
      svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", px(xs[i]), py(ys[s][i]), color);
    }
    if (!pts.empty()) {
      pts.pop_back();
      svg += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", pts, color);
    }
    legend_entry(table.series[s], color, false);
  }
  svg += "</svg>\n";
  return svg;
}

void emit_plot(const Table& table, const std::string& path, const std::string& title) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << render_svg(table, title);
  if (!out) throw InvalidArgument("write to '" + path + "' failed");
}

}  // namespace homlab::study
