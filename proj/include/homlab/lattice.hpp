#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "homlab/coefficient_field.hpp"
#include "homlab/types.hpp"

namespace homlab {

using LatticeIndex = Eigen::Matrix<int, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;

/// Lattice Gamma = offset + basis * Z^d with periodicity cell basis * (0,1)^d.
///
/// The lattice is an auxiliary partitioning device; it carries no assumption
/// of periodicity of the coefficients.
class Lattice {
 public:
  Lattice(Eigen::MatrixXd basis, Point offset);

  /// Z^d with the unit cube cell.
  static Lattice integer(int dim);
  /// shift + spacing * Z^d with cell (0, spacing)^d.
  static Lattice cubic(int dim, double spacing, double shift = 0.0);

  int dim() const { return static_cast<int>(basis_.rows()); }
  const Eigen::MatrixXd& basis() const { return basis_; }
  const Point& offset() const { return offset_; }
  double cell_measure() const { return cell_measure_; }
  /// Largest distance between two points of the closed cell.
  double cell_diameter() const;
  Point point(const LatticeIndex& k) const;

 private:
  Eigen::MatrixXd basis_;
  Point offset_;
  double cell_measure_ = 0.0;
};

/// Parallelotope corner + edges * (0,1)^d.
struct Cell {
  Point corner;
  Eigen::MatrixXd edges;

  int dim() const { return static_cast<int>(corner.size()); }
  double measure() const { return std::abs(edges.determinant()); }
  Point map(const Point& t) const { return corner + edges * t; }

  static Cell box(const Box& b);
};

/// The scaled cell eta * cell + eta * gamma.
Cell scaled_cell(const Lattice& lattice, double eta, const LatticeIndex& k);

/// Gamma_eta: every lattice index whose scaled cell lies inside the box.
struct CellIndexSet {
  double eta = 0.0;
  std::vector<LatticeIndex> gammas;

  std::size_t size() const { return gammas.size(); }
  bool empty() const { return gammas.empty(); }
};

/// Enumerates Gamma_eta for a box domain. An eta too large for the box gives
/// an empty set rather than an error.
CellIndexSet cells_inside(const Lattice& lattice, double eta, const Box& domain);

/// 4-point Gauss-Legendre rule on (0,1).
struct GaussLegendre4 {
  static constexpr std::array<double, 4> nodes{0.06943184420297371, 0.33000947820757187,
                                               0.6699905217924281, 0.9305681557970262};
  static constexpr std::array<double, 4> weights{0.17392742256872692, 0.3260725774312731,
                                                 0.3260725774312731, 0.17392742256872692};
};

/// Composite tensor Gauss-Legendre quadrature of f over a cell with `refine`
/// panels per axis. Acc must support `acc += w * f(x)`.
template <typename Acc, typename F>
Acc integrate_cell(const Cell& cell, int refine, F&& f, Acc acc) {
  const int d = cell.dim();
  const double jac = cell.measure();
  const double panel = 1.0 / refine;
  constexpr int q = 4;
  const int per_axis = refine * q;

  std::array<int, kMaxDim> idx{};
  long total = 1;
  for (int i = 0; i < d; ++i) total *= per_axis;

  Point t(d);
  for (long flat = 0; flat < total; ++flat) {
    long rem = flat;
    double w = jac;
    for (int i = 0; i < d; ++i) {
      idx[i] = static_cast<int>(rem % per_axis);
      rem /= per_axis;
      const int p = idx[i] / q;
      const int g = idx[i] % q;
      t(i) = (p + GaussLegendre4::nodes[g]) * panel;
      w *= GaussLegendre4::weights[g] * panel;
    }
    acc += w * f(cell.map(t));
  }
  return acc;
}

struct QuadratureResult {
  CoeffMatrix value;
  /// |I(refine) - I(refine / 2)|; doubling refine moves the value by less.
  double error = 0.0;
};

/// Integral of a field over a cell with an attached error estimate.
QuadratureResult cell_integral(const Cell& cell, const CoefficientField& field, int refine);

/// cell_integral divided by the cell measure.
QuadratureResult cell_mean(const Cell& cell, const CoefficientField& field, int refine);

/// Panels per axis resolving `finest_scale` with `panels_per_scale` panels
/// per scale unit: ceil(length / (finest_scale / panels_per_scale)), clamped
/// to [1, 4096].
int default_refine(double length, double finest_scale, double panels_per_scale = 8.0);

}  // namespace homlab
