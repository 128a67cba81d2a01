#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "homlab/resolvent.hpp"
#include "homlab/study/config.hpp"
#include "homlab/study/report.hpp"

namespace homlab::study {

/// Subcommands; each maps to one group of library operations.
const std::vector<std::string>& subcommands();

struct RunOptions {
  /// Output directory for the CSV and SVG; empty writes nothing.
  std::string out_dir;
  /// Overrides `study.seed` when set.
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  /// Progress log (verbose) and warnings; null discards them.
  std::ostream* log = nullptr;
};

struct StudyReport {
  std::string subcommand;
  std::string name;
  Table table;
  std::vector<RateFit> fits;
  std::vector<std::string> warnings;
  std::string csv_path;
  std::string plot_path;
};

/// Geometric eps schedule from `schedule.start/factor/count` or the explicit
/// list `schedule.values`; strictly decreasing with at least 3 entries.
std::vector<double> read_schedule(const Config& cfg);

/// Setup shared by the operator studies (operator, mesh, lambda, iteration
/// and criterion keys).
StudySetup read_setup(const Config& cfg, const PerturbationFamily& family, std::uint64_t seed);

/// Runs `subcommand` on the config. Rows are buffered and written in
/// schedule order; the CSV header echoes the config. Throws ConfigError on
/// bad input (including unknown keys) and NumericalError, prefixed with the
/// offending eps, on numerical failures.
StudyReport run_study(const std::string& subcommand, Config cfg, const RunOptions& options = {});

}  // namespace homlab::study
