#include "homlab/lattice.hpp"

#include <algorithm>
#include <cmath>

namespace homlab {

Lattice::Lattice(Eigen::MatrixXd basis, Point offset) : basis_(std::move(basis)), offset_(std::move(offset)) {
  if (basis_.rows() != basis_.cols() || basis_.rows() < 1 || basis_.rows() > kMaxDim) {
    throw InvalidArgument("lattice basis must be a square d x d matrix with 1 <= d <= 3");
  }
  if (offset_.size() != basis_.rows()) throw InvalidArgument("lattice offset has wrong dimension");
  cell_measure_ = std::abs(basis_.determinant());
  const double scale = basis_.colwise().norm().prod();
  if (!(cell_measure_ > 1e-12 * scale)) throw InvalidArgument("lattice basis is degenerate");
}

Lattice Lattice::integer(int dim) { return cubic(dim, 1.0, 0.0); }

Lattice Lattice::cubic(int dim, double spacing, double shift) {
  if (!(spacing > 0.0)) throw InvalidArgument("lattice spacing must be positive");
  return Lattice(spacing * Eigen::MatrixXd::Identity(dim, dim), Point::Constant(dim, shift));
}

double Lattice::cell_diameter() const {
  const int d = dim();
  // Vertex differences are basis * s with s in {-1, 0, 1}^d.
  double best = 0.0;
  int combos = 1;
  for (int i = 0; i < d; ++i) combos *= 3;
  for (int c = 0; c < combos; ++c) {
    Eigen::VectorXd s(d);
    int rem = c;
    for (int i = 0; i < d; ++i) {
      s(i) = rem % 3 - 1;
      rem /= 3;
    }
    best = std::max(best, (basis_ * s).norm());
  }
  return best;
}

Point Lattice::point(const LatticeIndex& k) const {
  Point p = offset_;
  p += basis_ * k.cast<double>();
  return p;
}

Cell Cell::box(const Box& b) {
  Cell c;
  c.corner = b.lo;
  c.edges = (b.hi - b.lo).asDiagonal();
  return c;
}

Cell scaled_cell(const Lattice& lattice, double eta, const LatticeIndex& k) {
  Cell c;
  c.corner = eta * lattice.point(k);
  c.edges = eta * lattice.basis();
  return c;
}

CellIndexSet cells_inside(const Lattice& lattice, double eta, const Box& domain) {
  if (!(eta > 0.0)) throw InvalidArgument("cell scale eta must be positive");
  if (domain.dim() != lattice.dim()) throw InvalidArgument("lattice and domain dimensions differ");
  if (!((domain.hi - domain.lo).array() > 0.0).all()) throw InvalidArgument("domain box is empty");

  const int d = lattice.dim();
  const Eigen::MatrixXd inv = lattice.basis().inverse();

  // Bound the integer coordinates through the images of the box corners.
  Eigen::VectorXd kmin = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::infinity());
  Eigen::VectorXd kmax = -kmin;
  for (int mask = 0; mask < (1 << d); ++mask) {
    Eigen::VectorXd x(d);
    for (int i = 0; i < d; ++i) x(i) = ((mask >> i) & 1) ? domain.hi(i) : domain.lo(i);
    const Eigen::VectorXd k = inv * (x / eta - lattice.offset());
    kmin = kmin.cwiseMin(k);
    kmax = kmax.cwiseMax(k);
  }

  CellIndexSet set;
  set.eta = eta;
  const double tol = 1e-12 * std::max(1.0, domain.diameter());

  std::array<long, kMaxDim> lo{}, count{};
  long total = 1;
  for (int i = 0; i < d; ++i) {
    lo[i] = static_cast<long>(std::floor(kmin(i))) - 1;
    count[i] = static_cast<long>(std::ceil(kmax(i))) + 1 - lo[i] + 1;
    total *= std::max(0L, count[i]);
  }

  LatticeIndex k(d);
  for (long flat = 0; flat < total; ++flat) {
    long rem = flat;
    for (int i = 0; i < d; ++i) {
      k(i) = static_cast<int>(lo[i] + rem % count[i]);
      rem /= count[i];
    }
    const Cell cell = scaled_cell(lattice, eta, k);
    bool inside = true;
    for (int mask = 0; mask < (1 << d) && inside; ++mask) {
      Point t(d);
      for (int i = 0; i < d; ++i) t(i) = (mask >> i) & 1;
      inside = domain.contains(cell.map(t), tol);
    }
    if (inside) set.gammas.push_back(k);
  }
  return set;
}

QuadratureResult cell_integral(const Cell& cell, const CoefficientField& field, int refine) {
  if (refine < 1) throw InvalidArgument("quadrature refine must be >= 1");
  const int n = field.ncomp();
  const CoeffMatrix zero = CoeffMatrix::Zero(n, n);
  if (field.is_zero()) return {zero, 0.0};

  const int fine = std::max(refine, 2);
  const int coarse = fine / 2;
  auto f = [&](const Point& x) { return field(x); };
  QuadratureResult r;
  r.value = integrate_cell(cell, fine, f, zero);
  const CoeffMatrix rough = integrate_cell(cell, coarse, f, zero);
  r.error = entry_norm(r.value - rough);
  return r;
}

QuadratureResult cell_mean(const Cell& cell, const CoefficientField& field, int refine) {
  QuadratureResult r = cell_integral(cell, field, refine);
  const double m = cell.measure();
  r.value /= m;
  r.error /= m;
  return r;
}

int default_refine(double length, double finest_scale, double panels_per_scale) {
  if (!(finest_scale > 0.0) || !std::isfinite(finest_scale)) return 1;
  const double panels = std::ceil(length / (finest_scale / panels_per_scale));
  return static_cast<int>(std::clamp(panels, 1.0, 4096.0));
}

}  // namespace homlab
