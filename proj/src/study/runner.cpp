#include "homlab/study/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "homlab/criteria.hpp"
#include "homlab/parallel.hpp"
#include "homlab/study/registry.hpp"

namespace homlab::study {

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"families", "criterion", "homogenize", "norm",
                                              "resolvent", "neumann", "report"};
  return names;
}

std::vector<double> read_schedule(const Config& cfg) {
  std::vector<double> s;
  if (cfg.has("schedule.values")) {
    if (cfg.has("schedule.start") || cfg.has("schedule.factor") || cfg.has("schedule.count")) {
      throw ConfigError("give either schedule.values or schedule.start/factor/count", "schedule.values");
    }
    s = cfg.numbers("schedule.values");
  } else {
    const double start = cfg.number("schedule.start");
    const double factor = cfg.number("schedule.factor", 0.5);
    const int count = cfg.integer("schedule.count", 5);
    if (!(factor > 0.0 && factor < 1.0)) throw ConfigError("schedule.factor must lie in (0, 1)", "schedule.factor");
    double e = start;
    for (int k = 0; k < count; ++k, e *= factor) s.push_back(e);
  }
  if (s.size() < 3) throw ConfigError("the eps schedule needs at least 3 entries", "schedule");
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (!(s[k] > 0.0)) throw ConfigError(fmt::format("schedule entry {} is not positive", s[k]), "schedule");
    if (k > 0 && !(s[k] < s[k - 1])) throw ConfigError("the eps schedule must be strictly decreasing", "schedule");
  }
  return s;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t read_seed(const Config& cfg, const RunOptions& options) {
  if (options.seed) {
    cfg.touch("study.seed");
    return *options.seed;
  }
  const double s = cfg.number("study.seed", 1.0);
  if (!(s >= 0.0) || s != std::floor(s) || s > 9007199254740992.0) {
    throw ConfigError("study.seed must be a nonnegative integer below 2^53", "study.seed");
  }
  return static_cast<std::uint64_t>(s);
}

IterationOptions read_iteration(const Config& cfg, std::uint64_t seed) {
  IterationOptions it;
  it.seed = seed;
  it.tol = cfg.number("iteration.tol", it.tol);
  it.max_iterations = cfg.integer("iteration.max_iterations", it.max_iterations);
  it.krylov_dim = cfg.integer("iteration.krylov_dim", it.krylov_dim);
  it.check_restart = cfg.boolean("iteration.check_restart", it.check_restart);
  it.restart_tolerance = cfg.number("iteration.restart_tolerance", it.restart_tolerance);
  const std::string method = cfg.string("iteration.method", "lanczos");
  if (method == "lanczos") {
    it.method = IterationMethod::Lanczos;
  } else if (method == "power") {
    it.method = IterationMethod::Power;
  } else {
    throw ConfigError("iteration.method must be lanczos or power", "iteration.method");
  }
  if (!(it.tol > 0.0) || it.max_iterations < 1 || it.krylov_dim < 2) {
    throw ConfigError("iteration.tol, max_iterations and krylov_dim must be positive", "iteration");
  }
  return it;
}

CriterionOptions read_criterion(const Config& cfg, const PerturbationFamily& family) {
  CriterionOptions c;
  c.lattice = Lattice::integer(family.dim());
  const std::string fallback = cfg.string("family.role", "V");
  c.role = parse_role(cfg.string("criterion.role", fallback));
  c.refine = cfg.integer("criterion.refine", 0);
  c.panels_per_scale = cfg.number("criterion.panels_per_scale", c.panels_per_scale);
  if (c.refine < 0 || !(c.panels_per_scale > 0.0)) {
    throw ConfigError("criterion.refine must be >= 0 and criterion.panels_per_scale positive", "criterion");
  }
  return c;
}

// eta.policy = optimize (grid eta.exponents, default 0.3..0.7) or fixed (eta.exponent).
struct EtaPolicy {
  bool fixed = false;
  double exponent = 0.5;
  std::vector<double> exponents;
  EtaObjective objective = EtaObjective::M1m1;
};

EtaPolicy read_eta(const Config& cfg) {
  EtaPolicy p;
  const std::string policy = cfg.string("eta.policy", "optimize");
  if (policy == "fixed") {
    p.fixed = true;
    p.exponent = cfg.number("eta.exponent", 0.5);
    if (!(p.exponent > 0.0 && p.exponent < 1.0)) throw ConfigError("eta.exponent must lie in (0, 1)", "eta.exponent");
    p.exponents = {p.exponent};
  } else if (policy == "optimize") {
    p.exponents = cfg.numbers("eta.exponents", {0.3, 0.4, 0.5, 0.6, 0.7});
    for (double a : p.exponents) {
      if (!(a > 0.0 && a < 1.0)) throw ConfigError("eta.exponents must lie in (0, 1)", "eta.exponents");
    }
  } else {
    throw ConfigError("eta.policy must be optimize or fixed", "eta.policy");
  }
  const std::string objective = cfg.string("eta.objective", "m1m1");
  if (objective == "m1m1") {
    p.objective = EtaObjective::M1m1;
  } else if (objective == "m10") {
    p.objective = EtaObjective::M10;
  } else {
    throw ConfigError("eta.objective must be m1m1 or m10", "eta.objective");
  }
  return p;
}

template <typename F>
void at_eps(double eps, F&& f) {
  try {
    f();
  } catch (const NumericalError& e) {
    const std::string what = e.what();
    if (what.rfind("eps = ", 0) == 0) throw;
    throw NumericalError(fmt::format("eps = {}: {}", eps, what));
  }
}

struct Context {
  const Config& cfg;
  const RunOptions& options;
  std::uint64_t seed = 1;
  StudyReport& report;
  std::string plot_name;

  void log(const std::string& line) const {
    if (options.verbose && options.log) *options.log << line << "\n";
  }
  void warn(const std::string& line) const {
    report.warnings.push_back(line);
    if (options.log) *options.log << "warning: " << line << "\n";
  }
};

std::string index_string(const LatticeIndex& k) {
  std::string s;
  for (Index i = 0; i < k.size(); ++i) s += (i ? " " : "") + std::to_string(k(i));
  return s;
}

// ---------------------------------------------------------------------------

void run_families(Context& ctx) {
  Table& t = ctx.report.table;
  t.columns = {"name", "one_dimensional", "keys"};
  for (const auto& f : family_registry()) {
    std::string keys;
    for (const auto& p : f.params) keys += (keys.empty() ? "" : " ") + p.key;
    t.add_row({f.name, std::int64_t{f.one_dimensional}, keys});
  }
  ctx.cfg.check_all_used();
}

void run_criterion(Context& ctx) {
  const Config& cfg = ctx.cfg;
  const PerturbationFamily family = build_family(cfg, ctx.seed);
  const std::vector<double> schedule = read_schedule(cfg);
  const CriterionOptions copt = read_criterion(cfg, family);
  const EtaPolicy eta = read_eta(cfg);
  cfg.check_all_used();

  std::vector<CriterionReport> reports(schedule.size());
  parallel_for(schedule.size(), [&](std::size_t k) {
    const double e = schedule[k];
    at_eps(e, [&] {
      std::vector<double> grid;
      for (double a : eta.exponents) grid.push_back(std::pow(e, a));
      reports[k] = eta.fixed ? evaluate_criteria(family, e, grid.front(), copt)
                             : optimize_eta(family, e, grid, eta.objective, copt);
    });
  });

  Table& t = ctx.report.table;
  t.columns = {"eps", "eta", "rho1", "rho3", "bound_m1m1", "bound_m10", "rho1_error", "rho3_error",
               "cells", "refine", "predicted", "argmax_rho1"};
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const CriterionReport& r = reports[k];
    const double predicted = family.rate ? family.rate_scalar(schedule[k]) : kNaN;
    t.add_row({schedule[k], r.eta, r.rho1, r.rho3, r.bound_m1m1, r.bound_m10, r.rho1_error, r.rho3_error,
               static_cast<std::int64_t>(r.cells), std::int64_t{r.refine}, predicted, index_string(r.argmax_rho1)});
    ctx.log(fmt::format("eps {:.4e}: eta {:.4e} rho1 {:.4e} rho3 {:.4e}", schedule[k], r.eta, r.rho1, r.rho3));
  }
  t.x_column = "eps";
  t.series = {"rho1", "rho3", "bound_m1m1"};
  t.notes.push_back(fmt::format("role = {}, eta policy = {}", role_name(copt.role), eta.fixed ? "fixed" : "optimize"));
}

void run_homogenize(Context& ctx) {
  const Config& cfg = ctx.cfg;
  const PerturbationFamily family = build_family(cfg, ctx.seed);
  const std::vector<double> schedule = read_schedule(cfg);
  const double mu_power = cfg.number("homogenize.mu_power", 0.5);
  const double mu_scale = cfg.number("homogenize.mu_scale", 1.0);
  const int points = cfg.integer("homogenize.points", 33);
  const double pps = cfg.number("criterion.panels_per_scale", 8.0);
  const FieldRole role = parse_role(cfg.string("criterion.role", cfg.string("family.role", "V")));
  if (!(mu_power > 0.0 && mu_power < 1.0)) throw ConfigError("homogenize.mu_power must lie in (0, 1)", "homogenize.mu_power");
  if (!(mu_scale > 0.0)) throw ConfigError("homogenize.mu_scale must be positive", "homogenize.mu_scale");
  if (points < 1) throw ConfigError("homogenize.points must be positive", "homogenize.points");
  cfg.check_all_used();

  const int d = family.dim();
  const auto mu = [=](double e) { return mu_scale * std::pow(e, mu_power); };
  const Box omega = Box::cube(d, -0.5, 0.5);
  const std::vector<Point> pts = interior_grid(family.domain, points);
  LocalMeanResult res;
  at_eps(schedule.back(), [&] { res = local_mean_limit(family, schedule, mu, omega, pts, role, pps); });

  const CoefficientField& limit = field_in_role(family.limit, role);
  Table& t = ctx.report.table;
  t.columns = {"eps", "mu", "rho2", "limit_deviation", "bound"};
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    double dev = 0.0;
    for (std::size_t p = 0; p < pts.size(); ++p) {
      if (!res.skipped[p]) dev = std::max(dev, entry_norm(res.means[k][p] - limit(pts[p])));
    }
    const double m = mu(schedule[k]);
    t.add_row({schedule[k], m, res.rho2_by_eps[k], dev, res.rho2_by_eps[k] + std::sqrt(m)});
  }
  std::size_t skipped = 0;
  for (bool s : res.skipped) skipped += s;
  double worst = 0.0;
  for (std::size_t p = 0; p < pts.size(); ++p) {
    if (!res.skipped[p]) worst = std::max(worst, entry_norm(res.candidate(pts[p]) - limit(pts[p])));
  }
  const double tolerance = res.rho2 + std::sqrt(res.mu);
  t.notes.push_back(fmt::format("sample points = {}, skipped (window leaves the domain) = {}", pts.size(), skipped));
  t.notes.push_back(fmt::format("candidate vs declared limit: max deviation {:.6e}, rho2 + mu^(1/2) = {:.6e}: {}", worst,
                                tolerance, worst <= tolerance ? "within" : "OUTSIDE"));
  if (skipped == pts.size()) ctx.warn("every sample point was skipped; shrink homogenize.mu_scale");
  t.x_column = "eps";
  t.series = {"rho2", "limit_deviation"};
}

struct OperatorStudy {
  PerturbationFamily family;
  std::vector<double> schedule;
  StudySetup setup;
};

StudySetup read_setup_impl(const Config& cfg, const PerturbationFamily& family, std::uint64_t seed) {
  StudySetup s;
  s.spec = build_operator(cfg, family);
  s.mesh.factor = cfg.number("mesh.factor", s.mesh.factor);
  s.mesh.min_elements = cfg.integer("mesh.min_elements", s.mesh.min_elements);
  s.mesh.max_dofs = cfg.integer("mesh.max_dofs", s.mesh.max_dofs);
  s.mesh.fixed_elements = cfg.integer("mesh.elements", 0);
  s.mesh.panels_per_scale = cfg.number("mesh.panels_per_scale", s.mesh.panels_per_scale);
  if (!(s.mesh.factor > 0.0) || s.mesh.min_elements < 2 || s.mesh.max_dofs < 4 || s.mesh.fixed_elements < 0 ||
      !(s.mesh.panels_per_scale > 0.0)) {
    throw ConfigError("mesh.* values out of range", "mesh");
  }
  const std::string policy = cfg.string("lambda.policy", "auto");
  if (policy == "auto") {
    s.lambda.automatic = true;
    s.lambda.margin = cfg.number("lambda.margin", 1.0);
    if (!(s.lambda.margin >= 0.0)) throw ConfigError("lambda.margin must be >= 0", "lambda.margin");
  } else if (policy == "fixed") {
    s.lambda.automatic = false;
    s.lambda.value = cfg.number("lambda.value");
  } else {
    throw ConfigError("lambda.policy must be auto or fixed", "lambda.policy");
  }
  s.iteration = read_iteration(cfg, seed);
  s.criterion = read_criterion(cfg, family);
  return s;
}

void describe_lambda(Context& ctx, double lambda, const std::optional<CoercivityReport>& c) {
  Table& t = ctx.report.table;
  if (c) {
    t.notes.push_back(fmt::format("lambda = {} (auto: lambda0 = {}, c4 = {:.6e}, sector slope = {:.6e})", lambda,
                                  c->lambda0, c->c4, c->sector_slope));
  } else {
    t.notes.push_back(fmt::format("lambda = {} (fixed)", lambda));
  }
}

void run_norm(Context& ctx) {
  const Config& cfg = ctx.cfg;
  const PerturbationFamily family = build_family(cfg, ctx.seed);
  const std::vector<double> schedule = read_schedule(cfg);
  const StudySetup setup = read_setup_impl(cfg, family, ctx.seed);
  cfg.check_all_used();

  struct Row {
    int elements = 0;
    double L = 0.0, m1m1 = 0.0, m10 = 0.0;
    bool agree = true;
  };
  std::vector<Row> rows(schedule.size());
  parallel_for(schedule.size(), [&](std::size_t k) {
    at_eps(schedule[k], [&] {
      const Discretization d = discretize(family, schedule[k], setup);
      const FieldTriple dev = family.at_scalar(d.eps) - family.limit;
      const CoefficientField& f = field_in_role(dev, setup.criterion.role);
      const NormReport L = norm_v_to_vstar(d.Xeps - d.X0, *d.op, setup.iteration);
      const NormReport a = norm_m1m1(f, *d.op, d.quad_refine, setup.iteration);
      const NormReport b = norm_m10(f, *d.op, d.quad_refine, setup.iteration);
      rows[k] = {d.op->mesh().elements(), L.value, a.value, b.value,
                 L.restarts_agree && a.restarts_agree && b.restarts_agree};
    });
  });
  Table& t = ctx.report.table;
  t.columns = {"eps", "elements", "L_norm", "dev_m1m1", "dev_m10", "predicted", "restarts_agree"};
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const Row& r = rows[k];
    t.add_row({schedule[k], std::int64_t{r.elements}, r.L, r.m1m1, r.m10,
               family.rate ? family.rate_scalar(schedule[k]) : kNaN, std::int64_t{r.agree}});
    if (!r.agree) ctx.warn(fmt::format("eps = {}: seeded restarts disagree", schedule[k]));
  }
  t.x_column = "eps";
  t.series = {"L_norm", "dev_m1m1", "dev_m10"};
}

void run_resolvent(Context& ctx) {
  const Config& cfg = ctx.cfg;
  const PerturbationFamily family = build_family(cfg, ctx.seed);
  const std::vector<double> schedule = read_schedule(cfg);
  StudySetup setup = read_setup_impl(cfg, family, ctx.seed);
  setup.eta_exponents = read_eta(cfg).exponents;
  const bool l2h1 = cfg.boolean("resolvent.l2_to_h1", false);
  cfg.check_all_used();

  ctx.log(fmt::format("resolvent study: {} entries", schedule.size()));
  const ConvergenceStudy st = convergence_study(family, schedule, setup);
  std::optional<L2H1Check> chk;
  if (l2h1) chk = l2_to_h1_check(family, schedule, setup);

  Table& t = ctx.report.table;
  t.columns = {"eps", "elements", "kappa", "L_norm", "contraction", "eta", "rho1", "rho3", "bound_m1m1",
               "predicted", "restarts_agree"};
  if (chk) {
    t.columns.push_back("l2h1_lhs");
    t.columns.push_back("l2h1_rhs");
  }
  for (std::size_t k = 0; k < st.rows.size(); ++k) {
    const ConvergenceRow& r = st.rows[k];
    std::vector<TableCell> row{r.eps, std::int64_t{r.elements}, r.kappa, r.L_norm, r.contraction, r.eta,
                               r.rho1, r.rho3, r.bound_m1m1, r.predicted, std::int64_t{r.restarts_agree}};
    if (chk) {
      row.push_back(chk->rows[k].lhs);
      row.push_back(chk->rows[k].rhs);
    }
    t.add_row(std::move(row));
    if (!r.restarts_agree) ctx.warn(fmt::format("eps = {}: seeded restarts disagree", r.eps));
    if (r.contraction >= 1.0) ctx.warn(fmt::format("eps = {}: ||L R0|| = {} >= 1, Neumann series diverges", r.eps, r.contraction));
    ctx.log(fmt::format("eps {:.4e}: kappa {:.6e} contraction {:.6e}", r.eps, r.kappa, r.contraction));
  }
  describe_lambda(ctx, st.lambda, st.coercivity);
  if (chk) {
    t.notes.push_back(fmt::format("L2 -> H1 check: constant {:.6e} (calibrated at eps = {}), bound {}", chk->constant,
                                  schedule.front(), chk->bound_holds ? "holds" : "VIOLATED"));
  }
  t.x_column = "eps";
  t.series = {"kappa", "L_norm", "bound_m1m1"};
  if (chk) t.series.push_back("l2h1_lhs");
}

void run_neumann(Context& ctx) {
  const Config& cfg = ctx.cfg;
  const PerturbationFamily family = build_family(cfg, ctx.seed);
  const double eps = cfg.number("neumann.eps");
  const int n_max = cfg.integer("neumann.n_max", 4);
  const StudySetup setup = read_setup_impl(cfg, family, ctx.seed);
  if (!(eps > 0.0)) throw ConfigError("neumann.eps must be positive", "neumann.eps");
  if (n_max < 0) throw ConfigError("neumann.n_max must be >= 0", "neumann.n_max");
  cfg.check_all_used();

  TruncationStudy st;
  double lambda = 0.0;
  std::optional<CoercivityReport> coercivity;
  at_eps(eps, [&] {
    const Discretization d = discretize(family, eps, setup);
    lambda = study_lambda({d}, setup.lambda, &coercivity);
    const ResolventContext rc(d.op, d.base, d.X0, d.Xeps, Complex(lambda));
    st = truncation_study(rc, n_max, setup.iteration);
  });
  Table& t = ctx.report.table;
  t.columns = {"N", "error", "bound", "ratio"};
  for (const auto& r : st.rows) t.add_row({std::int64_t{r.N}, r.error, r.bound, r.ratio});
  describe_lambda(ctx, lambda, coercivity);
  t.notes.push_back(fmt::format("eps = {}, ||L||_(V->V*) = {:.10e}, ||L R0||_(V*->V*) = {:.10e}", eps, st.L_norm,
                                st.contraction));
  t.notes.push_back(fmt::format("||R0|| = {:.10e}, ||Reps|| = {:.10e}, c2 = max(1, ||R0||) = {:.10e}", st.R0_norm,
                                st.Reps_norm, st.c2));
  for (const auto& w : st.warnings) ctx.warn(w);
  t.x_column = "N";
  t.log_x = false;
  t.series = {"error", "bound"};
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',' || c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

void run_report(Context& ctx) {
  const Config& cfg = ctx.cfg;
  const std::string input = cfg.string("report.input");
  const std::string x = cfg.string("report.x", "eps");
  const std::string series = cfg.string("report.series", "");
  const bool log_x = cfg.boolean("report.log_x", true);
  cfg.check_all_used();

  Table in = read_csv_file(input);
  in.x_column = x;
  in.log_x = log_x;
  in.column_index(x);
  if (series.empty()) {
    for (const auto& c : in.columns) {
      if (c != x && !in.rows.empty() && std::holds_alternative<double>(in.rows.front()[in.column_index(c)])) {
        in.series.push_back(c);
      }
    }
  } else {
    in.series = split_names(series);
    for (const auto& s : in.series) in.column_index(s);
  }
  Table& t = ctx.report.table;
  t.columns = {"column", "slope", "intercept", "r2", "used"};
  ctx.report.fits = fit_series(in);
  for (const RateFit& f : ctx.report.fits) t.add_row({f.column, f.slope, f.intercept, f.r2, std::int64_t{f.used}});
  t.notes.push_back("input = " + input);
  // The CSV holds the fits; the plot shows the input series.
  if (!ctx.options.out_dir.empty()) {
    ctx.report.plot_path = (std::filesystem::path(ctx.options.out_dir) / ctx.plot_name).string();
    emit_plot(in, ctx.report.plot_path, "report: " + input);
  }
}

}  // namespace

StudySetup read_setup(const Config& cfg, const PerturbationFamily& family, std::uint64_t seed) {
  return read_setup_impl(cfg, family, seed);
}

StudyReport run_study(const std::string& subcommand, Config cfg, const RunOptions& options) {
  if (std::find(subcommands().begin(), subcommands().end(), subcommand) == subcommands().end()) {
    throw ConfigError("unknown subcommand '" + subcommand + "'");
  }
  StudyReport report;
  report.subcommand = subcommand;
  Context ctx{cfg, options, 1, report, {}};
  ctx.seed = read_seed(cfg, options);
  if (options.seed) cfg.set("study.seed", static_cast<double>(*options.seed));
  report.name = cfg.string("study.name", subcommand);
  const std::string csv = cfg.string("output.csv", report.name + ".csv");
  const std::string plot = cfg.string("output.plot", report.name + ".svg");
  ctx.plot_name = plot;
  const int precision = cfg.integer("output.precision", 17);
  if (precision != 17) throw ConfigError("output.precision is fixed at 17 significant digits", "output.precision");

  if (subcommand == "families") run_families(ctx);
  else if (subcommand == "criterion") run_criterion(ctx);
  else if (subcommand == "homogenize") run_homogenize(ctx);
  else if (subcommand == "norm") run_norm(ctx);
  else if (subcommand == "resolvent") run_resolvent(ctx);
  else if (subcommand == "neumann") run_neumann(ctx);
  else run_report(ctx);

  Table& t = report.table;
  if (subcommand != "report") report.fits = fit_series(t);
  for (const RateFit& f : report.fits) {
    if (f.skipped) {
      t.notes.push_back(fmt::format("fit {}: skipped ({} positive rows)", f.column, f.used));
    } else {
      t.notes.push_back(fmt::format("fit {}: slope {:.6f}, intercept {:.6f}, r2 {:.6f}", f.column, f.slope,
                                    f.intercept, f.r2));
    }
    for (const auto& w : f.warnings) ctx.warn(w);
  }
  for (const auto& w : report.warnings) t.notes.push_back("warning: " + w);

  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    std::vector<std::string> header{fmt::format("homlab {} study '{}'", subcommand, report.name)};
    for (const auto& line : cfg.echo()) header.push_back("config: " + line);
    report.csv_path = (std::filesystem::path(options.out_dir) / csv).string();
    write_csv_file(report.csv_path, t, header);
    if (!t.x_column.empty()) {
      report.plot_path = (std::filesystem::path(options.out_dir) / plot).string();
      emit_plot(t, report.plot_path, fmt::format("{}: {}", subcommand, report.name));
    }
  }
  return report;
}

}  // namespace homlab::study
