#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "homlab/coefficient_field.hpp"
#include "homlab/lattice.hpp"

namespace homlab {

/// Continuity/stabilization modulus delta -> rho(delta). The abstract moduli
/// of each construction are caller-supplied.
using Modulus = std::function<double(double)>;
using EpsFunction = std::function<double(const EpsVector&)>;

Modulus zero_modulus();

/// V(x, xi) with its component count and a bound on |V|.
struct TwoScaleField {
  std::function<CoeffMatrix(const Point& x, const Point& xi)> eval;
  int ncomp = 1;
  double sup_bound = 1.0;
};

/// V(x, xi_1, ..., xi_m), each xi_j a d-vector.
struct MultiScaleField {
  std::function<CoeffMatrix(const Point& x, std::span<const Point> xi)> eval;
  int ncomp = 1;
  double sup_bound = 1.0;
};

// ---------------------------------------------------------------------------
// Regular perturbation: V^eps -> V^0 uniformly.

PerturbationFamily make_regular(std::function<CoefficientField(const EpsVector&)> v_eps,
                                CoefficientField v0, Box domain, EpsFunction rate, int eps_dim = 1);

// ---------------------------------------------------------------------------
// Sparse bumps of radius rho4 * rho5 around centers separated by >= rho4.

struct SparseSpec {
  std::function<std::vector<Point>(double eps)> centers;
  Modulus rho4;
  Modulus rho5;
  /// Profile on the unit ball; evaluated at (x - center) / (rho4 rho5).
  CoefficientField bump;
};

PerturbationFamily make_sparse(SparseSpec spec, Box domain);

/// Points lo + spacing * (k + 1/2) that lie inside the box.
std::vector<Point> grid_centers(const Box& domain, double spacing);

// ---------------------------------------------------------------------------
// Stabilizing oscillations V(x, x_1/eps_1, ..., x_d/eps_d) with V(x, xi) -> V0(x)
// as |xi| -> infinity.

PerturbationFamily make_stabilizing(TwoScaleField v, CoefficientField v0, Modulus rho6, Box domain);

/// Directional variant: V(x, t zeta) -> V0(x, zeta) for zeta on the unit
/// sphere; limit V0(x, x/|x|).
PerturbationFamily make_stabilizing_directional(
    TwoScaleField v, std::function<CoeffMatrix(const Point& x, const Point& zeta)> v0_dir,
    Modulus rho7, Box domain);

// ---------------------------------------------------------------------------
// Locally periodic multiscale oscillations V(x, x/eps_1, ..., x/eps_m).

struct LocallyPeriodicSpec {
  MultiScaleField V;
  /// Rectangular periodicity cell (0, periods_j) of each fast variable.
  std::vector<Point> periods;
  /// One-parameter path through eps-space; ratios eps_{j+1}/eps_j must fall below 1.
  std::function<EpsVector(double)> path;
  Modulus rho8 = nullptr;
  /// Closed-form limit when known; otherwise the multi-cell mean is computed
  /// with a trapezoidal rule of `mean_nodes` points per fast axis.
  std::optional<CoefficientField> limit;
  int mean_nodes = 16;
};

PerturbationFamily make_locally_periodic(LocallyPeriodicSpec spec, Box domain);

/// Single-scale periodic V(x, x/eps).
PerturbationFamily make_periodic(TwoScaleField v, Point periods, Box domain,
                                 std::optional<CoefficientField> limit = std::nullopt,
                                 Modulus rho8 = nullptr);

/// Mean over the rectangle (0, periods) of xi -> V(x, xi) by the periodic
/// trapezoidal rule (exact for trigonometric polynomials of degree < nodes).
CoeffMatrix periodic_cell_mean(const std::function<CoeffMatrix(const Point&)>& g, const Point& periods,
                               int nodes);

// ---------------------------------------------------------------------------
// Almost periodic trigonometric sums sum_alpha T_alpha(x) exp(i alpha . x / eps).

struct TrigTerm {
  Point alpha;
  CoefficientField coefficient;
};

PerturbationFamily make_almost_periodic(std::vector<TrigTerm> terms, Box domain, Modulus rho9 = nullptr);

/// Closed-form average of exp(i alpha . xi) over the box r * cell + r * gamma,
/// where cell = (0, periods) and gamma is a lattice point of periods * Z^d.
Complex box_average_exponential(const Point& alpha, double r, const Point& gamma, const Point& periods);

/// Uniform bound of the box-average deviation from the alpha = 0 term at scale r.
double trig_mean_modulus(const std::vector<TrigTerm>& terms, double r);

// ---------------------------------------------------------------------------
// Modulated periodicity V(x, phi(x)/eps).

enum class PhiKind { Diffeomorphism, Periodic };

struct ModulatedSpec {
  TwoScaleField V;
  Point periods;
  std::function<Point(const Point&)> phi;
  std::function<Eigen::MatrixXd(const Point&)> jacobian;
  PhiKind kind = PhiKind::Diffeomorphism;
  Modulus rho8 = nullptr;
  /// Degeneracy function p0(r) = inf |det J| at distance >= r from the
  /// degenerate set; required for the periodic kind.
  Modulus p0 = nullptr;
  std::optional<CoefficientField> limit;
  int mean_nodes = 16;
};

PerturbationFamily make_modulated(ModulatedSpec spec, Box domain);

/// eta(eps) = inf{ r > 0 : min(r p0(r^2), p0(r^2)^2) >= eps^(1/2) }.
double modulated_eta(const Modulus& p0, double eps);

// ---------------------------------------------------------------------------
// Fractal periodicity V(x, x_1/eps, x_1 x_2/eps^2, ..., x_1...x_d/eps^d).

struct FractalSpec {
  TwoScaleField V;
  Point periods;
  Modulus rho8 = nullptr;
  std::optional<CoefficientField> limit;
  int mean_nodes = 16;
};

PerturbationFamily make_fractal(FractalSpec spec, Box domain);

/// (x_1/eps, x_1 x_2/eps^2, ..., x_1...x_d/eps^d).
Point fractal_argument(const Point& x, double eps);

// ---------------------------------------------------------------------------
// Ergodic random perturbation realised by a torus rotation.

/// Torus rotation varpi -> varpi + F x (mod 1) on [0,1)^k driving an
/// observable V(x, varpi). Rows of F must be rationally independent for
/// ergodicity; that is documented, not checked.
class ErgodicSystem {
 public:
  using Observable = std::function<CoeffMatrix(const Point& x, const Eigen::VectorXd& varpi)>;

  ErgodicSystem(Eigen::MatrixXd flow, Observable observable, int ncomp, double sup_bound, std::uint64_t seed);

  int torus_dim() const { return static_cast<int>(flow_.rows()); }
  int dim() const { return static_cast<int>(flow_.cols()); }
  int ncomp() const { return ncomp_; }
  double sup_bound() const { return sup_bound_; }
  std::uint64_t seed() const { return seed_; }
  const Eigen::MatrixXd& flow() const { return flow_; }

  /// Theta(x) varpi = varpi + F x mod 1.
  Eigen::VectorXd shift(const Eigen::VectorXd& varpi, const Point& x) const;
  /// Reproducible realization `index`, independent of evaluation order.
  Eigen::VectorXd realization(std::uint64_t index) const;
  CoeffMatrix observe(const Point& x, const Eigen::VectorXd& varpi) const { return observable_(x, varpi); }

  /// Expectation over the torus by the periodic trapezoidal rule with `nodes`
  /// points per torus axis.
  CoefficientField expectation(int nodes = 16) const;

  /// (1/T^d) integral over (0,T)^d of V(x, Theta(y) varpi) dy by composite
  /// Gauss quadrature with `panels` panels per axis.
  CoeffMatrix birkhoff_average(const Point& x, const Eigen::VectorXd& varpi, double T, int panels) const;

 private:
  Eigen::MatrixXd flow_;
  Observable observable_;
  int ncomp_;
  double sup_bound_;
  std::uint64_t seed_;
};

/// V^eps(x) = V(x, Theta(x_eps) varpi) for the realization `index`.
/// `birkhoff_rate` bounds the Birkhoff-average deviation over (0,T)^d; the
/// predicted rate uses eta = eps^(1/2) and alpha = 1/2. A closed-form
/// `expectation` replaces the torus quadrature for the limit, which costs
/// nodes^k observable calls per point.
PerturbationFamily make_random(const ErgodicSystem& system, Box domain, std::uint64_t index,
                               Modulus birkhoff_rate = nullptr,
                               std::optional<CoefficientField> expectation = std::nullopt);

// ---------------------------------------------------------------------------
// Combinators producing new families from given ones.

/// Psi V^eps (and Psi Q, Psi P); `psi_w1inf` bounds Psi in W^1_inf.
PerturbationFamily scale_left(const CoefficientField& psi, const PerturbationFamily& fam,
                              double psi_w1inf = -1.0);
PerturbationFamily scale_right(const CoefficientField& psi, const PerturbationFamily& fam,
                               double psi_w1inf = -1.0);
PerturbationFamily add(const PerturbationFamily& a, const PerturbationFamily& b);
PerturbationFamily negate(const PerturbationFamily& fam);

/// Replaces V^eps on each cell of Gamma_eta(eps) by the cell mean plus a
/// zero-mean smoothed square wave with a seeded random phase, sign and period
/// count. Cell means, and hence the limit, are unchanged.
PerturbationFamily cell_resample(const PerturbationFamily& fam, const Lattice& lattice,
                                 std::function<double(double)> eta_of_eps, std::uint64_t seed,
                                 double amplitude = 1.0);

/// Piecewise family on two boxes sharing a face.
PerturbationFamily glue(const PerturbationFamily& first, const PerturbationFamily& second);

/// Moves the potential slot V of a scalar-profile family into Q_1 or P_1.
PerturbationFamily with_role(const PerturbationFamily& fam, FieldRole role);

/// Replaces the declared limit (used for negative controls).
PerturbationFamily with_limit(const PerturbationFamily& fam, FieldTriple limit);

}  // namespace homlab
