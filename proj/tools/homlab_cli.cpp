// Command-line front end for the homogenization studies.
//
//   homlab <subcommand> --config study.cfg [--out dir] [--threads k] [--seed s] [--verbose]
//
// Exit codes: 0 success, 2 configuration error, 3 numerical invariant breach.

#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "homlab/parallel.hpp"
#include "homlab/study/registry.hpp"
#include "homlab/study/runner.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

struct Flags {
  std::string config;
  std::string out = "results";
  int threads = 1;
  std::uint64_t seed = 0;
  bool verbose = false;
};

void add_flags(CLI::App* cmd, Flags& f, bool needs_config) {
  auto* c = cmd->add_option("--config", f.config, "study config file");
  if (needs_config) c->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "output directory")->capture_default_str();
  cmd->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--seed", f.seed, "override study.seed");
  cmd->add_flag("--verbose", f.verbose, "progress on stderr");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace homlab::study;
  CLI::App app{"homlab: norm-resolvent homogenization studies"};
  app.require_subcommand(1);
  Flags flags;

  const std::vector<std::pair<std::string, std::string>> help{
      {"families", "list the coefficient families and their config keys"},
      {"criterion", "cell statistics rho1 / rho3 along the eps schedule"},
      {"homogenize", "extract the limit from local window means"},
      {"norm", "multiplier norms of the deviation and ||L||"},
      {"resolvent", "norm-resolvent convergence study kappa(eps)"},
      {"neumann", "Neumann-series truncation errors at one eps"},
      {"report", "rate fits and plot from an existing CSV"},
  };
  for (const auto& [name, text] : help) add_flags(app.add_subcommand(name, text), flags, name != "families");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }
  const std::string sub = app.get_subcommands().front()->get_name();
  const bool seed_given = app.get_subcommands().front()->count("--seed") > 0;

  try {
    if (sub == "families" && flags.config.empty()) {
      std::cout << describe_families();
      return 0;
    }
    homlab::set_thread_count(flags.threads);
    Config cfg = Config::load(flags.config);
    RunOptions opt;
    opt.out_dir = flags.out;
    if (seed_given) opt.seed = flags.seed;
    opt.verbose = flags.verbose;
    opt.log = &std::cerr;
    const StudyReport report = run_study(sub, std::move(cfg), opt);

    std::cout << fmt::format("{} '{}': {} rows\n", sub, report.name, report.table.rows.size());
    for (const auto& f : report.fits) {
      if (f.skipped) {
        std::cout << fmt::format("  fit {:<12} skipped\n", f.column);
      } else {
        std::cout << fmt::format("  fit {:<12} slope {:8.4f}  r2 {:.4f}\n", f.column, f.slope, f.r2);
      }
    }
    for (const auto& n : report.table.notes) {
      if (n.rfind("fit ", 0) != 0) std::cout << "  " << n << "\n";
    }
    if (!report.csv_path.empty()) std::cout << "  csv:  " << report.csv_path << "\n";
    if (!report.plot_path.empty()) std::cout << "  plot: " << report.plot_path << "\n";
    return 0;
  } catch (const homlab::InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const homlab::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
