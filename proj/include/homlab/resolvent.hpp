#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "homlab/criteria.hpp"
#include "homlab/families.hpp"
#include "homlab/fem.hpp"
#include "homlab/spectral_norms.hpp"

namespace homlab {

enum class Which { Eps, Zero };

/// Discrete resolvents of the perturbed and limit operators at one shift:
/// G0 = base + X0 - lambda M, Geps = G0 + (Xeps - X0), and L is the
/// floating-point difference Geps - G0, so Geps - G0 = L holds exactly.
class ResolventContext {
 public:
  ResolventContext(std::shared_ptr<const DiscreteOperator> op, const CSparse& base, const CSparse& X0,
                   const CSparse& Xeps, Complex lambda);

  const DiscreteOperator& op() const { return *op_; }
  Complex lambda() const { return lambda_; }
  const CSparse& G0() const { return R0_.matrix(); }
  const CSparse& Geps() const { return Reps_.matrix(); }
  const CSparse& L() const { return L_; }
  const SparseSolver& resolvent(Which which) const { return which == Which::Eps ? Reps_ : R0_; }

  CVector solve(Which which, const CVector& f) const { return resolvent(which).solve(f); }
  CVector solve_adjoint(Which which, const CVector& f) const { return resolvent(which).solve_adjoint(f); }

 private:
  std::shared_ptr<const DiscreteOperator> op_;
  Complex lambda_;
  CSparse L_;
  CSparse Lh_;
  SparseSolver R0_;
  SparseSolver Reps_;

  struct Matrices {
    CSparse g0, geps;
  };
  ResolventContext(std::shared_ptr<const DiscreteOperator> op, Complex lambda, Matrices&& g);

  friend CVector neumann_sum_adjoint(const ResolventContext&, int, const CVector&);
  friend CVector truncation_remainder_adjoint(const ResolventContext&, int, const CVector&);
};

/// R0 sum_{j=0}^{N} (-L R0)^j f by repeated solve / multiply.
CVector neumann_sum(const ResolventContext& ctx, int N, const CVector& f);
/// The Euclidean adjoint of f -> neumann_sum(ctx, N, f).
CVector neumann_sum_adjoint(const ResolventContext& ctx, int N, const CVector& f);

/// (R^eps - R_N) f computed without cancellation as (-R0 L)^{N+1} R^eps f,
/// where R_N f = neumann_sum(ctx, N, f).
CVector truncation_remainder(const ResolventContext& ctx, int N, const CVector& f);
CVector truncation_remainder_adjoint(const ResolventContext& ctx, int N, const CVector& f);

/// ||L R0||_{V* -> V*}; the Neumann series converges when it is below 1.
NormReport contraction_norm(const ResolventContext& ctx, const IterationOptions& options = {});

struct TruncationRow {
  int N = 0;
  double error = 0.0;  // ||R^eps - R_N||_{V* -> V}
  double bound = 0.0;  // c2^{N+2} ||L||^{N+1}
  /// error_N / error_{N-1}; NaN for N = 0.
  double ratio = 0.0;
};

struct TruncationStudy {
  std::vector<TruncationRow> rows;
  double L_norm = 0.0;       // ||L||_{V -> V*}
  double contraction = 0.0;  // ||L R0||_{V* -> V*}
  double R0_norm = 0.0;
  double Reps_norm = 0.0;
  /// max(1, ||R0||), the measured stand-in for the resolvent bound constant.
  double c2 = 0.0;
  std::vector<std::string> warnings;
};

TruncationStudy truncation_study(const ResolventContext& ctx, int N_max, const IterationOptions& options = {});

/// How the study picks lambda: the coercive shift found over the whole
/// schedule minus a margin, or a fixed value.
struct LambdaPolicy {
  bool automatic = true;
  double value = -1.0;
  double margin = 1.0;
};

struct MeshRule {
  double factor = 16.0;
  int min_elements = 16;
  int max_dofs = 8192;
  /// Fixed element count overriding the rule when positive.
  int fixed_elements = 0;
  double panels_per_scale = 8.0;
};

struct StudySetup {
  OperatorSpec spec;
  MeshRule mesh;
  LambdaPolicy lambda;
  IterationOptions iteration;
  CriterionOptions criterion;
  /// Grid for optimize_eta; empty means default_eta_grid(eps).
  std::vector<double> eta_exponents;
};

/// One discretized schedule entry: mesh, quadrature and assembled matrices.
struct Discretization {
  double eps = 0.0;
  std::shared_ptr<const DiscreteOperator> op;
  int quad_refine = 1;
  CSparse base;
  CSparse X0;
  CSparse Xeps;
};

Discretization discretize(const PerturbationFamily& family, double eps, const StudySetup& setup);

/// Lambda for the schedule under the policy, with the coercivity data when automatic.
double study_lambda(const std::vector<Discretization>& ds, const LambdaPolicy& policy,
                    std::optional<CoercivityReport>* report = nullptr);

struct ConvergenceRow {
  double eps = 0.0;
  int elements = 0;
  double kappa = 0.0;
  double L_norm = 0.0;
  double contraction = 0.0;
  double eta = 0.0;
  double rho1 = 0.0;
  double rho3 = 0.0;
  double bound_m1m1 = 0.0;
  double predicted = 0.0;
  bool restarts_agree = true;
};

struct ConvergenceStudy {
  double lambda = 0.0;
  std::optional<CoercivityReport> coercivity;
  std::vector<ConvergenceRow> rows;
};

ConvergenceStudy convergence_study(const PerturbationFamily& family, const std::vector<double>& eps_schedule,
                                   const StudySetup& setup);

struct L2H1Row {
  double eps = 0.0;
  double lhs = 0.0;    // ||R^eps - R0||_{L2 -> H1}
  double rhs = 0.0;    // ||V dev||_{M1,-1} + ||Q dev||_{M1,-1} + ||P dev||_{M1,0}
  double ratio = 0.0;  // lhs / rhs
};

struct L2H1Check {
  double lambda = 0.0;
  /// lhs / rhs at the first (coarsest) eps; frozen for the later rows.
  double constant = 0.0;
  std::vector<L2H1Row> rows;
  bool bound_holds = true;
};

/// L2 -> H1 resolvent-difference norm against the multiplier-norm bound
/// (with the P term measured in the V -> L2 multiplier norm, which dominates
/// the H2 -> L2 one). The constant is calibrated at the first entry.
L2H1Check l2_to_h1_check(const PerturbationFamily& family, const std::vector<double>& eps_schedule,
                         const StudySetup& setup, double slack = 1.05);

}  // namespace homlab
