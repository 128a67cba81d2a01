#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "homlab/types.hpp"

namespace homlab {

/// A bounded matrix-valued function x in R^d -> n x n complex matrix.
///
/// Fields are closures over their parameters rather than sampled grids, so any
/// quadrature can refine as far as it needs. The closure is immutable after
/// construction and may be evaluated concurrently.
class CoefficientField {
 public:
  using Eval = std::function<CoeffMatrix(const Point&)>;

  CoefficientField() = default;
  CoefficientField(int dim, int ncomp, Eval eval, double sup_bound);

  static CoefficientField constant(int dim, const CoeffMatrix& value);
  static CoefficientField zero(int dim, int ncomp);
  static CoefficientField identity(int dim, int ncomp, Complex scale = 1.0);
  /// f(x) times the n x n identity.
  static CoefficientField scalar(int dim, int ncomp, std::function<Complex(const Point&)> f,
                                 double sup_abs_f);

  int dim() const { return dim_; }
  int ncomp() const { return ncomp_; }
  /// Upper bound on |eval(x)| (entrywise sum norm) over the domain.
  double sup_bound() const { return sup_bound_; }
  /// True when the field is known to vanish identically; lets assembly skip terms.
  bool is_zero() const { return zero_; }
  bool valid() const { return static_cast<bool>(eval_); }

  CoeffMatrix operator()(const Point& x) const { return eval_(x); }
  CoeffMatrix operator()(double x) const { return eval_(point1(x)); }

  CoefficientField adjoint() const;

  friend CoefficientField operator+(const CoefficientField& a, const CoefficientField& b);
  friend CoefficientField operator-(const CoefficientField& a, const CoefficientField& b);
  friend CoefficientField operator*(Complex c, const CoefficientField& a);
  /// Pointwise matrix product (a(x) * b(x)).
  friend CoefficientField operator*(const CoefficientField& a, const CoefficientField& b);

 private:
  int dim_ = 0;
  int ncomp_ = 0;
  Eval eval_;
  double sup_bound_ = 0.0;
  bool zero_ = false;
};

/// Spot-check of the sup_bound invariant at `samples` random points of `box`.
/// Returns the largest observed |eval(x)|.
double sampled_sup(const CoefficientField& field, const Box& box, int samples, std::uint64_t seed);

/// max over a uniform sample grid of |a(x) - b(x)|.
double sup_deviation(const CoefficientField& a, const CoefficientField& b, const Box& box,
                     int points_per_axis = 257);

/// The perturbation coefficients (V, Q_1..Q_d, P_1..P_d) of a first-order
/// perturbing operator.
struct FieldTriple {
  CoefficientField V;
  std::vector<CoefficientField> Q;
  std::vector<CoefficientField> P;

  int dim() const { return V.dim(); }
  int ncomp() const { return V.ncomp(); }

  /// Pure potential perturbation: Q = P = 0.
  static FieldTriple potential(CoefficientField v);
  static FieldTriple zero(int dim, int ncomp);

  FieldTriple operator-(const FieldTriple& other) const;
  double sup_bound() const;
};

/// Which slot of a FieldTriple a scalar-profile family occupies.
enum class FieldRole { V, Q, P };

FieldRole parse_role(const std::string& name);
std::string role_name(FieldRole role);

/// Returns the field of `triple` in `role` (component 0 for Q/P).
const CoefficientField& field_in_role(const FieldTriple& triple, FieldRole role);

using EpsVector = std::vector<double>;

/// A family eps -> (V^eps, Q^eps, P^eps) with its declared limit and the
/// predicted upper-bound rate for the multiplier-norm deviation.
struct PerturbationFamily {
  std::string name;
  std::map<std::string, double> params;
  Box domain;
  int ncomp = 1;
  int eps_dim = 1;

  std::function<FieldTriple(const EpsVector&)> at;
  FieldTriple limit;
  std::function<double(const EpsVector&)> rate;
  /// Smallest oscillation length at eps, as period / (2 pi) of the fastest
  /// oscillation; drives quadrature refinement.
  std::function<double(const EpsVector&)> finest_scale;
  /// One-parameter path through eps-space used by every study.
  std::function<EpsVector(double)> path;

  int dim() const { return domain.dim(); }

  FieldTriple at_scalar(double eps) const { return at(path(eps)); }
  double rate_scalar(double eps) const { return rate(path(eps)); }
  double finest_scalar(double eps) const { return finest_scale(path(eps)); }

  /// Checks dimension and component consistency of the limit against at(probe).
  void validate(double probe_eps) const;
};

/// Diagonal path eps -> (eps, ..., eps) in R^m.
std::function<EpsVector(double)> diagonal_path(int m);

}  // namespace homlab
