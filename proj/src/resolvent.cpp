#include "homlab/resolvent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "homlab/lattice.hpp"
#include "homlab/parallel.hpp"

namespace homlab {

ResolventContext::ResolventContext(std::shared_ptr<const DiscreteOperator> op, const CSparse& base,
                                   const CSparse& X0, const CSparse& Xeps, Complex lambda)
    : ResolventContext(op, lambda, [&] {
        Matrices m;
        m.g0 = base + X0 - lambda * op->gram_l2();
        m.geps = m.g0 + (Xeps - X0);
        return m;
      }()) {}

ResolventContext::ResolventContext(std::shared_ptr<const DiscreteOperator> op, Complex lambda, Matrices&& g)
    : op_(std::move(op)), lambda_(lambda), L_(g.geps - g.g0), Lh_(L_.adjoint()), R0_(g.g0), Reps_(g.geps) {}

CVector neumann_sum(const ResolventContext& ctx, int N, const CVector& f) {
  if (N < 0) throw InvalidArgument("Neumann truncation order must be >= 0");
  CVector term = ctx.solve(Which::Zero, f);
  CVector acc = term;
  for (int j = 1; j <= N; ++j) {
    term = ctx.solve(Which::Zero, CVector(-(ctx.L() * term)));
    acc += term;
  }
  return acc;
}

CVector neumann_sum_adjoint(const ResolventContext& ctx, int N, const CVector& f) {
  if (N < 0) throw InvalidArgument("Neumann truncation order must be >= 0");
  CVector term = ctx.solve_adjoint(Which::Zero, f);
  CVector acc = term;
  for (int j = 1; j <= N; ++j) {
    term = -ctx.solve_adjoint(Which::Zero, CVector(ctx.Lh_ * term));
    acc += term;
  }
  return acc;
}

CVector truncation_remainder(const ResolventContext& ctx, int N, const CVector& f) {
  if (N < 0) throw InvalidArgument("Neumann truncation order must be >= 0");
  CVector u = ctx.solve(Which::Eps, f);
  for (int j = 0; j <= N; ++j) u = ctx.solve(Which::Zero, CVector(-(ctx.L() * u)));
  return u;
}

CVector truncation_remainder_adjoint(const ResolventContext& ctx, int N, const CVector& f) {
  if (N < 0) throw InvalidArgument("Neumann truncation order must be >= 0");
  CVector u = f;
  for (int j = 0; j <= N; ++j) u = -(ctx.Lh_ * ctx.solve_adjoint(Which::Zero, u));
  return ctx.solve_adjoint(Which::Eps, u);
}

NormReport contraction_norm(const ResolventContext& ctx, const IterationOptions& options) {
  const CSparse Lh = ctx.L().adjoint();
  NormReport r = norm_dual_to_dual(
      [&](const CVector& f) -> CVector { return ctx.L() * ctx.solve(Which::Zero, f); },
      [&](const CVector& g) -> CVector { return ctx.solve_adjoint(Which::Zero, CVector(Lh * g)); }, ctx.op(),
      options);
  r.matrices = {"L", "G_0", "S"};
  return r;
}

TruncationStudy truncation_study(const ResolventContext& ctx, int N_max, const IterationOptions& options) {
  if (N_max < 0) throw InvalidArgument("N_max must be >= 0");
  TruncationStudy st;
  st.L_norm = norm_v_to_vstar(ctx.L(), ctx.op(), options).value;
  st.contraction = contraction_norm(ctx, options).value;
  st.R0_norm = resolvent_norm(ctx.resolvent(Which::Zero), ctx.op(), options).value;
  st.Reps_norm = resolvent_norm(ctx.resolvent(Which::Eps), ctx.op(), options).value;
  st.c2 = std::max(1.0, st.R0_norm);
  if (st.contraction >= 1.0) {
    st.warnings.push_back("||L R0|| = " + std::to_string(st.contraction) + " >= 1; the Neumann series need not converge");
  }
  for (int N = 0; N <= N_max; ++N) {
    const NormReport e = induced_norm(
        [&](const CVector& f) -> CVector { return truncation_remainder(ctx, N, f); },
        [&](const CVector& f) -> CVector { return truncation_remainder_adjoint(ctx, N, f); },
        dual_metric(ctx.op()), h1_metric(ctx.op()), options);
    TruncationRow row;
    row.N = N;
    row.error = e.value;
    row.bound = std::pow(st.c2, N + 2) * std::pow(st.L_norm, N + 1);
    row.ratio = N == 0 || st.rows.back().error == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                                                       : e.value / st.rows.back().error;
    if (!e.restarts_agree) st.warnings.push_back("restart disagreement at N = " + std::to_string(N));
    st.rows.push_back(row);
  }
  return st;
}

Discretization discretize(const PerturbationFamily& family, double eps, const StudySetup& setup) {
  const OperatorSpec& spec = setup.spec;
  if (family.dim() != 1) throw InvalidArgument("resolvent studies need a one-dimensional family");
  if (family.ncomp != spec.ncomp) throw InvalidArgument("family and operator component counts differ");
  const double tol = 1e-12 * std::max(1.0, spec.domain.diameter());
  if (std::abs(family.domain.lo(0) - spec.domain.lo(0)) > tol ||
      std::abs(family.domain.hi(0) - spec.domain.hi(0)) > tol) {
    throw InvalidArgument("family domain differs from the operator interval");
  }
  const MeshRule& rule = setup.mesh;
  const int N = rule.fixed_elements > 0
                    ? rule.fixed_elements
                    : mesh_elements_for(eps, rule.factor, rule.min_elements, rule.max_dofs, spec.ncomp);
  Discretization d;
  d.eps = eps;
  d.op = std::make_shared<const DiscreteOperator>(build_mesh(spec.domain.lo(0), spec.domain.hi(0), N), spec.ncomp,
                                                  spec.bc);
  d.quad_refine = std::max(2, default_refine(d.op->mesh().h(), family.finest_scalar(eps), rule.panels_per_scale));
  d.base = assemble_base(spec, *d.op, d.quad_refine);
  d.X0 = assemble_perturbation(family.limit, *d.op, d.quad_refine);
  d.Xeps = assemble_perturbation(family.at_scalar(eps), *d.op, d.quad_refine);
  return d;
}

double study_lambda(const std::vector<Discretization>& ds, const LambdaPolicy& policy,
                    std::optional<CoercivityReport>* report) {
  if (!policy.automatic) return policy.value;
  std::vector<CoercivityProblem> problems;
  for (const auto& d : ds) {
    problems.push_back({d.op.get(), d.base, d.X0});
    problems.push_back({d.op.get(), d.base, d.Xeps});
  }
  const CoercivityReport c = find_lambda(problems);
  if (report) *report = c;
  return c.lambda0 - policy.margin;
}

namespace {

// Runs f for one schedule entry, naming the entry in numerical failures.
template <typename F>
void at_eps(double eps, F&& f) {
  try {
    f();
  } catch (const NumericalError& e) {
    std::ostringstream msg;
    msg << "eps = " << eps << ": " << e.what();
    throw NumericalError(msg.str());
  }
}

std::vector<Discretization> discretize_all(const PerturbationFamily& family, const std::vector<double>& schedule,
                                           const StudySetup& setup) {
  if (schedule.empty()) throw InvalidArgument("eps schedule is empty");
  std::vector<Discretization> ds(schedule.size());
  parallel_for(schedule.size(),
               [&](std::size_t k) { at_eps(schedule[k], [&] { ds[k] = discretize(family, schedule[k], setup); }); });
  return ds;
}

std::vector<double> eta_grid(double eps, const std::vector<double>& exponents) {
  if (exponents.empty()) return default_eta_grid(eps);
  std::vector<double> g;
  for (double a : exponents) g.push_back(std::pow(eps, a));
  return g;
}

}  // namespace

ConvergenceStudy convergence_study(const PerturbationFamily& family, const std::vector<double>& eps_schedule,
                                   const StudySetup& setup) {
  ConvergenceStudy st;
  const std::vector<Discretization> ds = discretize_all(family, eps_schedule, setup);
  st.lambda = study_lambda(ds, setup.lambda, &st.coercivity);
  st.rows.resize(ds.size());
  parallel_for(ds.size(), [&](std::size_t k) { at_eps(ds[k].eps, [&] {
    const Discretization& d = ds[k];
    const ResolventContext ctx(d.op, d.base, d.X0, d.Xeps, Complex(st.lambda));
    ConvergenceRow row;
    row.eps = d.eps;
    row.elements = d.op->mesh().elements();
    const NormReport kap = kappa(ctx.resolvent(Which::Eps), ctx.resolvent(Which::Zero), *d.op, setup.iteration);
    const NormReport ln = norm_v_to_vstar(ctx.L(), *d.op, setup.iteration);
    const NormReport cn = contraction_norm(ctx, setup.iteration);
    row.kappa = kap.value;
    row.L_norm = ln.value;
    row.contraction = cn.value;
    row.restarts_agree = kap.restarts_agree && ln.restarts_agree && cn.restarts_agree;
    const CriterionReport cr =
        optimize_eta(family, d.eps, eta_grid(d.eps, setup.eta_exponents), EtaObjective::M1m1, setup.criterion);
    row.eta = cr.eta;
    row.rho1 = cr.rho1;
    row.rho3 = cr.rho3;
    row.bound_m1m1 = cr.bound_m1m1;
    row.predicted = family.rate ? family.rate_scalar(d.eps) : std::numeric_limits<double>::quiet_NaN();
    st.rows[k] = row;
  }); });
  return st;
}

L2H1Check l2_to_h1_check(const PerturbationFamily& family, const std::vector<double>& eps_schedule,
                         const StudySetup& setup, double slack) {
  L2H1Check chk;
  const std::vector<Discretization> ds = discretize_all(family, eps_schedule, setup);
  chk.lambda = study_lambda(ds, setup.lambda);
  chk.rows.resize(ds.size());
  parallel_for(ds.size(), [&](std::size_t k) { at_eps(ds[k].eps, [&] {
    const Discretization& d = ds[k];
    const ResolventContext ctx(d.op, d.base, d.X0, d.Xeps, Complex(chk.lambda));
    L2H1Row row;
    row.eps = d.eps;
    row.lhs = norm_l2_to_h1(ctx.resolvent(Which::Eps), ctx.resolvent(Which::Zero), *d.op, setup.iteration).value;
    const FieldTriple dev = family.at_scalar(d.eps) - family.limit;
    row.rhs = norm_m1m1(dev.V, *d.op, d.quad_refine, setup.iteration).value;
    if (!dev.Q.empty()) row.rhs += norm_m1m1(dev.Q[0], *d.op, d.quad_refine, setup.iteration).value;
    if (!dev.P.empty()) row.rhs += norm_m10(dev.P[0], *d.op, d.quad_refine, setup.iteration).value;
    row.ratio = row.rhs > 0.0 ? row.lhs / row.rhs : (row.lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    chk.rows[k] = row;
  }); });
  chk.constant = chk.rows.front().ratio;
  for (const auto& row : chk.rows) {
    if (row.lhs > slack * chk.constant * row.rhs + 1e-12) chk.bound_holds = false;
  }
  return chk;
}

}  // namespace homlab
