#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "homlab/families.hpp"
#include "homlab/lattice.hpp"

namespace homlab {

struct CriterionOptions {
  Lattice lattice = Lattice::integer(1);
  /// Which coefficient slot the statistics are taken on.
  FieldRole role = FieldRole::V;
  /// Quadrature panels per cell axis; 0 picks default_refine from the family's finest scale.
  int refine = 0;
  double panels_per_scale = 8.0;
};

/// Cell statistics of the deviation D = F^eps - F^0 over Gamma_eta:
///   rho1 = max_gamma | eta^{-d} int_cell D |,   rho3 = max_gamma eta^{-d} int_cell |D|^2.
/// The bounds are reported with the unknown constant set to 1.
struct CriterionReport {
  double eps = 0.0;
  double eta = 0.0;
  double rho1 = 0.0;
  double rho3 = 0.0;
  double bound_m1m1 = 0.0;  // rho1 + eta
  double bound_m10 = 0.0;   // rho3^(1/2) + eta^(1/2)
  LatticeIndex argmax_rho1;
  LatticeIndex argmax_rho3;
  /// Largest per-cell quadrature error estimate, in the units of rho1 / rho3.
  double rho1_error = 0.0;
  double rho3_error = 0.0;
  std::size_t cells = 0;
  int refine = 0;
};

CriterionReport evaluate_criteria(const PerturbationFamily& family, double eps, double eta,
                                  const CriterionOptions& options = {});

inline double rho1(const PerturbationFamily& family, double eps, double eta, const CriterionOptions& options = {}) {
  return evaluate_criteria(family, eps, eta, options).rho1;
}
inline double rho3(const PerturbationFamily& family, double eps, double eta, const CriterionOptions& options = {}) {
  return evaluate_criteria(family, eps, eta, options).rho3;
}

/// {eps^a : a in {0.3, 0.4, 0.5, 0.6, 0.7}}.
std::vector<double> default_eta_grid(double eps);

enum class EtaObjective { M1m1, M10 };

/// The grid point minimizing rho1 + eta (or rho3^(1/2) + eta^(1/2)); ties go
/// to the larger eta. Grid points whose cell set is empty are skipped.
CriterionReport optimize_eta(const PerturbationFamily& family, double eps, const std::vector<double>& eta_grid,
                             EtaObjective objective = EtaObjective::M1m1, const CriterionOptions& options = {});

/// Window mean (mu^d mes omega)^{-1} int_{x + mu omega} F^eps.
QuadratureResult window_mean(const CoefficientField& field, const Point& x, double mu, const Box& omega, int refine);

struct LocalMeanResult {
  /// Window means at the smallest scheduled eps, evaluated on demand.
  CoefficientField candidate;
  std::vector<Point> points;
  std::vector<bool> skipped;
  /// means[k][p]: window mean at schedule entry k and sample point p.
  std::vector<std::vector<CoeffMatrix>> means;
  /// Deviation estimate per schedule entry: entries before the last are
  /// compared with the candidate, the last with its predecessor.
  std::vector<double> rho2_by_eps;
  /// rho2_by_eps.back(): the estimate at the smallest eps.
  double rho2 = 0.0;
  double mu = 0.0;  // mu at the smallest eps
};

/// Homogenized-limit extraction from window means. Points whose window leaves
/// the domain are skipped and flagged.
LocalMeanResult local_mean_limit(const PerturbationFamily& family, const std::vector<double>& eps_schedule,
                                 const std::function<double(double)>& mu, const Box& omega,
                                 const std::vector<Point>& sample_points, FieldRole role = FieldRole::V,
                                 double panels_per_scale = 8.0);

/// n equispaced interior points per axis of a box: lo + (hi - lo)(i + 1)/(n + 1).
std::vector<Point> interior_grid(const Box& box, int per_axis);

/// Box average over r * cell + r * gamma of sum_alpha T_alpha(x) exp(i alpha . xi),
/// in closed form.
CoeffMatrix weyl_mean(const std::vector<TrigTerm>& terms, const Point& x, double r, const Point& gamma,
                      const Point& periods);

struct WeylRow {
  double r = 0.0;
  /// max over the gamma sample of |box average - (alpha = 0 coefficient)|.
  double deviation = 0.0;
};

std::vector<WeylRow> weyl_mean_study(const std::vector<TrigTerm>& terms, const Point& x,
                                     const std::vector<double>& r_schedule, const std::vector<Point>& gammas,
                                     const Point& periods);

}  // namespace homlab
