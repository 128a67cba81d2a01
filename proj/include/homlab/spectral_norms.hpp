#pragma once

#include <memory>
#include <vector>

#include <Eigen/SparseLU>

#include "homlab/eigen_iteration.hpp"
#include "homlab/fem.hpp"

namespace homlab {

/// Metric of the discrete V = H1 inner product (S) and of its dual (S^{-1}).
Metric h1_metric(const DiscreteOperator& op);
Metric dual_metric(const DiscreteOperator& op);
/// L2 metric (M), factored on construction.
Metric l2_metric(const DiscreteOperator& op);

/// Sparse LU of G and, separately, of G*, so both resolvent and adjoint
/// solves use a direct factorization. Immutable once built.
class SparseSolver {
 public:
  using LU = Eigen::SparseLU<CSparse, Eigen::COLAMDOrdering<int>>;

  explicit SparseSolver(CSparse g);

  const CSparse& matrix() const { return g_; }
  Index size() const { return g_.rows(); }
  /// G u = f, with two steps of iterative refinement on an extended-precision
  /// residual; throws NumericalError
  /// if ||G u - f|| exceeds 1e-10 (||G|| ||u|| + ||f||).
  CVector solve(const CVector& f) const;
  CVector solve_adjoint(const CVector& f) const;

 private:
  CSparse g_;
  CSparse gh_;
  double norm_ = 0.0;
  std::shared_ptr<LU> lu_;
  std::shared_ptr<LU> lu_adjoint_;
};

/// ||X||_{V -> V*}: the largest singular value of S^{-1/2} X S^{-1/2}.
NormReport norm_v_to_vstar(const CSparse& X, const DiscreteOperator& op, const IterationOptions& options = {});

/// Multiplier norm of a potential from V into V*.
NormReport norm_m1m1(const CoefficientField& v, const DiscreteOperator& op, int quad_refine,
                     const IterationOptions& options = {});
/// Multiplier norm from V into L2: sqrt of the top eigenvalue of the
/// weighted Gram of W against S.
NormReport norm_m10(const CoefficientField& w, const DiscreteOperator& op, int quad_refine,
                    const IterationOptions& options = {});

/// ||R_a - R_b||_{V* -> V} for two resolvents realized as solvers.
NormReport kappa(const SparseSolver& a, const SparseSolver& b, const DiscreteOperator& op,
                 const IterationOptions& options = {});

/// ||R||_{V* -> V} of one resolvent.
NormReport resolvent_norm(const SparseSolver& r, const DiscreteOperator& op, const IterationOptions& options = {});

/// ||T||_{V* -> V*} of an operator on dual vectors.
NormReport norm_dual_to_dual(const LinearMap& T, const LinearMap& adjoint, const DiscreteOperator& op,
                             const IterationOptions& options = {});

/// ||(R_a - R_b) f||_V / ||f||_{L2} over FE functions f (f enters as M f).
NormReport norm_l2_to_h1(const SparseSolver& a, const SparseSolver& b, const DiscreteOperator& op,
                         const IterationOptions& options = {});

/// One scheduled discretization: base form, perturbation and the mesh.
struct CoercivityProblem {
  const DiscreteOperator* op = nullptr;
  CSparse base;
  CSparse X;
};

/// Smallest eigenvalue of the Hermitian part of (base + X - lambda M) in the
/// S metric, by bisection on the success of a Cholesky factorization.
double coercivity_constant(const CoercivityProblem& p, double lambda, double rel_tol = 1e-10);

struct CoercivityReport {
  double lambda0 = 0.0;
  double c4 = 0.0;
  /// Largest |Im g(u,u)| / Re g(u,u) over the random sample: the numerical
  /// range lies in the sector |arg z| <= atan(sector_slope).
  double sector_slope = 0.0;
  /// Smallest Re g(u,u) / ||u||_V^2 over the random sample (>= c4).
  double sampled_min = 0.0;
  int samples = 0;
};

struct CoercivityOptions {
  double min_c4 = 1e-8;
  double lambda_floor = -1e6;
  int samples = 1000;
  std::uint64_t seed = 11;
};

/// Doubling descent lambda = -1, -2, -4, ... until every scheduled problem is
/// coercive with constant >= min_c4.
CoercivityReport find_lambda(const std::vector<CoercivityProblem>& problems, const CoercivityOptions& options = {});

}  // namespace homlab
