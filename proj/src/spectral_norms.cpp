#include "homlab/spectral_norms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "homlab/random.hpp"

namespace homlab {

Metric h1_metric(const DiscreteOperator& op) {
  return Metric{[&op](const CVector& x) -> CVector { return op.gram_h1() * x; },
                [&op](const CVector& x) -> CVector { return op.solve_gram(x); }, op.size()};
}

Metric dual_metric(const DiscreteOperator& op) { return h1_metric(op).inverse(); }

Metric l2_metric(const DiscreteOperator& op) {
  auto llt = std::make_shared<DiscreteOperator::GramFactor>(op.gram_l2());
  if (llt->info() != Eigen::Success) throw NumericalError("L2 Gram matrix factorization failed");
  return Metric{[&op](const CVector& x) -> CVector { return op.gram_l2() * x; },
                [llt](const CVector& x) -> CVector { return llt->solve(x); }, op.size()};
}

SparseSolver::SparseSolver(CSparse g) : g_(std::move(g)) {
  if (g_.rows() != g_.cols() || g_.rows() == 0) throw InvalidArgument("solver matrix must be square and nonempty");
  g_.makeCompressed();
  // Frobenius norm bounds the spectral norm.
  norm_ = g_.norm();
  gh_ = g_.adjoint();
  gh_.makeCompressed();
  lu_ = std::make_shared<LU>();
  lu_->compute(g_);
  if (lu_->info() != Eigen::Success) throw NumericalError("sparse LU factorization failed: " + lu_->lastErrorMessage());
  lu_adjoint_ = std::make_shared<LU>();
  lu_adjoint_->compute(gh_);
  if (lu_adjoint_->info() != Eigen::Success) throw NumericalError("sparse LU factorization of the adjoint failed");
}

namespace {

// f - G u with products accumulated in long double, so refinement steps
// recover accuracy lost to the conditioning of G rather than only the
// backward error.
CVector extended_residual(const CSparse& g, const CVector& u, const CVector& f) {
  using LC = std::complex<long double>;
  std::vector<LC> acc(static_cast<std::size_t>(g.rows()));
  for (Index i = 0; i < g.rows(); ++i) acc[static_cast<std::size_t>(i)] = LC(f[i].real(), f[i].imag());
  for (Index j = 0; j < g.outerSize(); ++j) {
    const LC uj(u[j].real(), u[j].imag());
    for (CSparse::InnerIterator it(g, j); it; ++it) {
      acc[static_cast<std::size_t>(it.row())] -= LC(it.value().real(), it.value().imag()) * uj;
    }
  }
  CVector r(g.rows());
  for (Index i = 0; i < g.rows(); ++i) {
    const LC& a = acc[static_cast<std::size_t>(i)];
    r[i] = Complex(static_cast<double>(a.real()), static_cast<double>(a.imag()));
  }
  return r;
}

CVector refined_solve(const SparseSolver::LU& lu, const CSparse& g, double g_norm, const CVector& f) {
  if (f.size() != g.rows()) throw InvalidArgument("right-hand side has the wrong size");
  CVector u = lu.solve(f);
  for (int step = 0; step < 2; ++step) u += lu.solve(extended_residual(g, u, f));
  const CVector r = f - g * u;
  // Normwise backward error; a plain ||r|| / ||f|| test would fail on
  // fine meshes purely from the conditioning of G.
  const double scale = g_norm * u.norm() + f.norm();
  if (!(r.norm() <= 1e-10 * scale) && scale > 0.0) throw NumericalError("direct solve backward error exceeds 1e-10");
  return u;
}

}  // namespace

CVector SparseSolver::solve(const CVector& f) const { return refined_solve(*lu_, g_, norm_, f); }
CVector SparseSolver::solve_adjoint(const CVector& f) const { return refined_solve(*lu_adjoint_, gh_, norm_, f); }

NormReport norm_v_to_vstar(const CSparse& X, const DiscreteOperator& op, const IterationOptions& options) {
  if (X.rows() != op.size() || X.cols() != op.size()) throw InvalidArgument("perturbation matrix size differs from S");
  const CSparse Xh = X.adjoint();
  NormReport r = induced_norm([&](const CVector& x) -> CVector { return X * x; },
                              [&](const CVector& x) -> CVector { return Xh * x; }, h1_metric(op), dual_metric(op),
                              options);
  r.matrices = {"X", "S"};
  return r;
}

NormReport norm_m1m1(const CoefficientField& v, const DiscreteOperator& op, int quad_refine,
                     const IterationOptions& options) {
  NormReport r = norm_v_to_vstar(assemble_perturbation(FieldTriple::potential(v), op, quad_refine), op, options);
  r.matrices = {"V-weighted mass", "S"};
  return r;
}

NormReport norm_m10(const CoefficientField& w, const DiscreteOperator& op, int quad_refine,
                    const IterationOptions& options) {
  const CSparse gw = assemble_weighted_gram(w, op, quad_refine);
  auto id = [](const CVector& x) { return x; };
  const Metric out{[&gw](const CVector& x) -> CVector { return gw * x; }, nullptr, op.size()};
  NormReport r = induced_norm(id, id, h1_metric(op), out, options);
  r.matrices = {"W*W-weighted Gram", "S"};
  return r;
}

NormReport kappa(const SparseSolver& a, const SparseSolver& b, const DiscreteOperator& op,
                 const IterationOptions& options) {
  NormReport r = induced_norm([&](const CVector& f) -> CVector { return a.solve(f) - b.solve(f); },
                              [&](const CVector& f) -> CVector { return a.solve_adjoint(f) - b.solve_adjoint(f); },
                              dual_metric(op), h1_metric(op), options);
  r.matrices = {"G_eps", "G_0", "S"};
  return r;
}

NormReport resolvent_norm(const SparseSolver& s, const DiscreteOperator& op, const IterationOptions& options) {
  NormReport r = induced_norm([&](const CVector& f) -> CVector { return s.solve(f); },
                              [&](const CVector& f) -> CVector { return s.solve_adjoint(f); }, dual_metric(op),
                              h1_metric(op), options);
  r.matrices = {"G", "S"};
  return r;
}

NormReport norm_dual_to_dual(const LinearMap& T, const LinearMap& adjoint, const DiscreteOperator& op,
                             const IterationOptions& options) {
  NormReport r = induced_norm(T, adjoint, dual_metric(op), dual_metric(op), options);
  r.matrices = {"S"};
  return r;
}

NormReport norm_l2_to_h1(const SparseSolver& a, const SparseSolver& b, const DiscreteOperator& op,
                         const IterationOptions& options) {
  const CSparse& M = op.gram_l2();
  NormReport r = induced_norm(
      [&](const CVector& x) -> CVector {
        const CVector f = M * x;
        return a.solve(f) - b.solve(f);
      },
      [&](const CVector& y) -> CVector { return M * (a.solve_adjoint(y) - b.solve_adjoint(y)); }, l2_metric(op),
      h1_metric(op), options);
  r.matrices = {"G_eps", "G_0", "M", "S"};
  return r;
}

double coercivity_constant(const CoercivityProblem& p, double lambda, double rel_tol) {
  if (p.op == nullptr) throw InvalidArgument("coercivity problem has no discretization");
  const CSparse& S = p.op->gram_h1();
  const CSparse H = hermitian_part(p.base + p.X - Complex(lambda) * p.op->gram_l2());
  if (H.rows() != S.rows()) throw InvalidArgument("form matrix size differs from S");

  DiscreteOperator::GramFactor llt;
  llt.analyzePattern(S + H);
  auto positive = [&](double c) {
    const CSparse A = H - Complex(c) * S;
    llt.factorize(A);
    return llt.info() == Eigen::Success;
  };

  // Diagonal Rayleigh quotients bound the smallest eigenvalue from above.
  double hi = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < S.rows(); ++i) hi = std::min(hi, H.coeff(i, i).real() / S.coeff(i, i).real());
  double step = std::max(1.0, std::abs(hi));
  double lo = hi - step;
  while (!positive(lo)) {
    step *= 2.0;
    lo = hi - step;
    if (step > 1e15) throw NumericalError("coercivity bracket search diverged");
  }
  while (hi - lo > rel_tol * std::max(1.0, std::abs(lo))) {
    const double mid = 0.5 * (lo + hi);
    (positive(mid) ? lo : hi) = mid;
  }
  return lo;
}

CoercivityReport find_lambda(const std::vector<CoercivityProblem>& problems, const CoercivityOptions& options) {
  if (problems.empty()) throw InvalidArgument("find_lambda needs at least one problem");
  CoercivityReport rep;
  for (double lambda = -1.0;; lambda *= 2.0) {
    if (lambda < options.lambda_floor) {
      throw NumericalError("no coercive shift above lambda = " + std::to_string(options.lambda_floor));
    }
    double c4 = std::numeric_limits<double>::infinity();
    for (const auto& p : problems) c4 = std::min(c4, coercivity_constant(p, lambda));
    if (c4 >= options.min_c4) {
      rep.lambda0 = lambda;
      rep.c4 = c4;
      break;
    }
  }

  std::mt19937_64 rng(options.seed);
  rep.sampled_min = std::numeric_limits<double>::infinity();
  for (int s = 0; s < options.samples; ++s) {
    const auto& p = problems[static_cast<std::size_t>(s) % problems.size()];
    const CVector u = random_complex_vector(rng, p.op->size());
    const Complex g = u.dot((p.base + p.X) * u - Complex(rep.lambda0) * (p.op->gram_l2() * u));
    // u.dot(v) = u* v, so g = u* G u is the form on (u, u).
    const double norm2 = u.dot(p.op->gram_h1() * u).real();
    if (g.real() < rep.c4 * norm2 * (1.0 - 1e-9)) {
      throw NumericalError("sampled coercivity check failed at the returned lambda");
    }
    rep.sampled_min = std::min(rep.sampled_min, g.real() / norm2);
    rep.sector_slope = std::max(rep.sector_slope, std::abs(g.imag()) / g.real());
  }
  rep.samples = options.samples;
  return rep;
}

}  // namespace homlab
