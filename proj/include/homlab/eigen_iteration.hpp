#pragma once

#include <functional>
#include <string>
#include <vector>

#include "homlab/types.hpp"

namespace homlab {

using LinearMap = std::function<CVector(const CVector&)>;

/// Hermitian positive definite weight W given by its action and inverse
/// action; the inner product is <x, y>_W = y* W x.
struct Metric {
  LinearMap apply;
  LinearMap solve;
  Index size = 0;

  static Metric euclidean(Index n);
  /// Metric of a dense Hermitian positive definite matrix (Cholesky).
  static Metric dense(const CMatrix& w);
  /// The dual metric W^{-1}: apply and solve swap roles.
  Metric inverse() const { return Metric{solve, apply, size}; }

  double norm(const CVector& x) const;
};

enum class IterationMethod { Lanczos, Power };

std::string method_name(IterationMethod method);

struct IterationOptions {
  /// Relative residual target ||W^{-1} B x - mu x||_W <= tol * mu.
  double tol = 1e-8;
  /// Budget of operator applications across restarts.
  int max_iterations = 10000;
  /// Induced norms at or below this are reported as exactly zero.
  double zero_threshold = 1e-12;
  std::uint64_t seed = 1;
  /// Run a second start vector and compare; disagreement beyond
  /// restart_tolerance (relative) is flagged, not thrown.
  bool check_restart = true;
  double restart_tolerance = 1e-6;
  IterationMethod method = IterationMethod::Lanczos;
  /// Krylov basis size before an explicit restart.
  int krylov_dim = 150;
};

struct NormReport {
  double value = 0.0;
  int iterations = 0;
  /// Relative residual of the returned eigenpair.
  double residual = 0.0;
  bool converged = false;
  bool restarts_agree = true;
  /// Relative gap between the two seeded runs.
  double restart_gap = 0.0;
  std::string method;
  std::vector<std::string> matrices;
  CVector vector;
};

/// Thrown when the iteration budget runs out; carries the last iterate.
class ConvergenceError : public NumericalError {
 public:
  ConvergenceError(const std::string& what, CVector last_iterate, double last_value, double residual)
      : NumericalError(what), last_iterate(std::move(last_iterate)), last_value(last_value), residual(residual) {}

  CVector last_iterate;
  double last_value;
  double residual;
};

/// Largest mu of B x = mu W x for Hermitian positive semidefinite B. The
/// report's value is mu itself.
NormReport largest_generalized_eigenvalue(const LinearMap& B, const Metric& W, const IterationOptions& options = {});

/// sup ||T x||_out / ||x||_in, as the square root of the largest eigenvalue
/// of T* W_out T against W_in. `adjoint` is the Euclidean adjoint of T.
NormReport induced_norm(const LinearMap& T, const LinearMap& adjoint, const Metric& in, const Metric& out,
                        const IterationOptions& options = {});

}  // namespace homlab
