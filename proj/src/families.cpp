#include "homlab/families.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>

#include "homlab/random.hpp"

namespace homlab {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

PerturbationFamily blank_family(std::string name, Box domain, int ncomp, int eps_dim) {
  PerturbationFamily f;
  f.name = std::move(name);
  f.domain = std::move(domain);
  f.ncomp = ncomp;
  f.eps_dim = eps_dim;
  f.path = diagonal_path(eps_dim);
  return f;
}

double eps_max(const EpsVector& eps) { return *std::max_element(eps.begin(), eps.end()); }
double eps_min(const EpsVector& eps) { return *std::min_element(eps.begin(), eps.end()); }

void check_eps(const EpsVector& eps, std::size_t expected) {
  if (eps.size() != expected) throw InvalidArgument("eps vector has wrong length");
  for (double e : eps) {
    if (!(e > 0.0)) throw InvalidArgument("eps entries must be positive");
  }
}

// Length over which a smooth field with no fast scale is resolved.
double smooth_scale(const Box& domain) { return (domain.hi - domain.lo).minCoeff() / 8.0; }

// Every fast argument xi carries oscillation period p; its length scale in x
// is eps * p / (2 pi).
double period_scale(double eps, const Point& periods) { return eps * periods.minCoeff() / kTwoPi; }

CoeffMatrix zero_matrix(int n) { return CoeffMatrix::Zero(n, n); }

// Trapezoidal mean over a product of rectangles given by `periods` (all
// concatenated into one long axis list).
CoeffMatrix trapezoid_mean(const std::function<CoeffMatrix(const std::vector<double>&)>& g,
                           const std::vector<double>& periods, int nodes, int ncomp) {
  const int axes = static_cast<int>(periods.size());
  double total = 1.0;
  for (int i = 0; i < axes; ++i) total *= nodes;
  if (total > 4.0e6) throw InvalidArgument("cell mean quadrature too large; supply a closed-form limit");
  CoeffMatrix acc = zero_matrix(ncomp);
  std::vector<double> xi(axes);
  const long count = static_cast<long>(total);
  for (long flat = 0; flat < count; ++flat) {
    long rem = flat;
    for (int i = 0; i < axes; ++i) {
      xi[i] = periods[i] * static_cast<double>(rem % nodes) / nodes;
      rem /= nodes;
    }
    acc += g(xi);
  }
  return acc / total;
}

}  // namespace

Modulus zero_modulus() {
  return [](double) { return 0.0; };
}

// ---------------------------------------------------------------------------

PerturbationFamily make_regular(std::function<CoefficientField(const EpsVector&)> v_eps, CoefficientField v0,
                                Box domain, EpsFunction rate, int eps_dim) {
  if (!v_eps || !v0.valid() || !rate) throw InvalidArgument("regular family needs V^eps, V0 and a rate");
  if (v0.dim() != domain.dim()) throw InvalidArgument("regular family: limit dimension differs from domain");
  PerturbationFamily f = blank_family("regular", domain, v0.ncomp(), eps_dim);
  const int d = v0.dim();
  const int n = v0.ncomp();
  f.at = [v_eps, d, n, eps_dim](const EpsVector& eps) {
    check_eps(eps, static_cast<std::size_t>(eps_dim));
    CoefficientField v = v_eps(eps);
    if (v.dim() != d || v.ncomp() != n) throw InvalidArgument("regular family: V^eps and V0 differ in shape");
    return FieldTriple::potential(std::move(v));
  };
  f.limit = FieldTriple::potential(std::move(v0));
  f.rate = std::move(rate);
  const double scale = smooth_scale(domain);
  f.finest_scale = [scale](const EpsVector&) { return scale; };
  return f;
}

// ---------------------------------------------------------------------------

std::vector<Point> grid_centers(const Box& domain, double spacing) {
  if (!(spacing > 0.0)) throw InvalidArgument("center spacing must be positive");
  const int d = domain.dim();
  std::array<long, kMaxDim> count{};
  long total = 1;
  for (int i = 0; i < d; ++i) {
    count[i] = static_cast<long>(std::floor((domain.hi(i) - domain.lo(i)) / spacing));
    total *= std::max(0L, count[i]);
  }
  std::vector<Point> out;
  out.reserve(static_cast<std::size_t>(total));
  Point c(d);
  for (long flat = 0; flat < total; ++flat) {
    long rem = flat;
    for (int i = 0; i < d; ++i) {
      c(i) = domain.lo(i) + spacing * (static_cast<double>(rem % count[i]) + 0.5);
      rem /= count[i];
    }
    out.push_back(c);
  }
  return out;
}

namespace {

// Centers sorted by first coordinate for a windowed nearest lookup.
struct SparseLayout {
  std::vector<Point> centers;
  std::vector<double> keys;
  double radius = 0.0;
};

std::shared_ptr<const SparseLayout> sparse_layout(std::vector<Point> centers, double separation, double radius) {
  auto layout = std::make_shared<SparseLayout>();
  std::vector<std::size_t> order(centers.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return centers[a](0) < centers[b](0); });
  std::vector<Point> sorted;
  sorted.reserve(centers.size());
  for (std::size_t i : order) sorted.push_back(centers[i]);
  centers = std::move(sorted);
  const double tol = 1e-12 * std::max(1.0, separation);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size() && centers[j](0) - centers[i](0) < separation - tol; ++j) {
      if ((centers[j] - centers[i]).norm() < separation - tol) {
        throw InvalidArgument("sparse family: two centers are closer than rho4");
      }
    }
  }
  layout->keys.reserve(centers.size());
  for (const auto& c : centers) layout->keys.push_back(c(0));
  layout->centers = std::move(centers);
  layout->radius = radius;
  return layout;
}

}  // namespace

PerturbationFamily make_sparse(SparseSpec spec, Box domain) {
  if (!spec.centers || !spec.rho4 || !spec.rho5 || !spec.bump.valid()) {
    throw InvalidArgument("sparse family needs centers, rho4, rho5 and a bump");
  }
  if (spec.bump.dim() != domain.dim()) throw InvalidArgument("sparse family: bump dimension differs from domain");
  const int d = domain.dim();
  const int n = spec.bump.ncomp();
  PerturbationFamily f = blank_family("sparse", domain, n, 1);
  f.params["dim"] = d;

  f.at = [spec, d, n](const EpsVector& eps) {
    check_eps(eps, 1);
    const double r4 = spec.rho4(eps[0]);
    const double r5 = spec.rho5(eps[0]);
    if (!(r4 > 0.0) || !(r5 > 0.0)) throw InvalidArgument("sparse family: rho4 and rho5 must be positive");
    const double radius = r4 * r5;
    auto layout = sparse_layout(spec.centers(eps[0]), r4, radius);
    if (layout->centers.empty()) return FieldTriple::zero(d, n);
    const CoefficientField bump = spec.bump;
    CoefficientField v(
        d, n,
        [layout, bump, n](const Point& x) {
          const double r = layout->radius;
          auto lo = std::lower_bound(layout->keys.begin(), layout->keys.end(), x(0) - r);
          for (auto it = lo; it != layout->keys.end() && *it <= x(0) + r; ++it) {
            const Point& c = layout->centers[static_cast<std::size_t>(it - layout->keys.begin())];
            const Point y = (x - c) / r;
            if (y.norm() < 1.0) return bump(y);
          }
          return zero_matrix(n);
        },
        bump.sup_bound());
    return FieldTriple::potential(std::move(v));
  };
  f.limit = FieldTriple::zero(d, n);
  f.rate = [spec, d](const EpsVector& eps) {
    return std::pow(spec.rho5(eps[0]), d) + spec.rho4(eps[0]);
  };
  f.finest_scale = [spec](const EpsVector& eps) { return spec.rho4(eps[0]) * spec.rho5(eps[0]) / 4.0; };
  return f;
}

// ---------------------------------------------------------------------------

namespace {

Point fast_argument(const Point& x, const EpsVector& eps) {
  Point xi(x.size());
  for (Index i = 0; i < x.size(); ++i) xi(i) = x(i) / eps[static_cast<std::size_t>(i)];
  return xi;
}

}  // namespace

PerturbationFamily make_stabilizing(TwoScaleField v, CoefficientField v0, Modulus rho6, Box domain) {
  if (!v.eval || !v0.valid()) throw InvalidArgument("stabilizing family needs V and V0");
  if (v0.ncomp() != v.ncomp || v0.dim() != domain.dim()) {
    throw InvalidArgument("stabilizing family: V and V0 differ in shape");
  }
  const int d = domain.dim();
  PerturbationFamily f = blank_family("stabilizing", domain, v.ncomp, d);
  f.at = [v, d](const EpsVector& eps) {
    check_eps(eps, static_cast<std::size_t>(d));
    return FieldTriple::potential(CoefficientField(
        d, v.ncomp, [v, eps](const Point& x) { return v.eval(x, fast_argument(x, eps)); }, v.sup_bound));
  };
  f.limit = FieldTriple::potential(std::move(v0));
  if (!rho6) rho6 = zero_modulus();
  f.rate = [rho6](const EpsVector& eps) {
    const double e = eps_max(eps);
    return rho6(e) + std::cbrt(e);
  };
  f.finest_scale = [](const EpsVector& eps) { return eps_min(eps); };
  return f;
}

PerturbationFamily make_stabilizing_directional(
    TwoScaleField v, std::function<CoeffMatrix(const Point& x, const Point& zeta)> v0_dir, Modulus rho7,
    Box domain) {
  if (!v.eval || !v0_dir) throw InvalidArgument("directional stabilizing family needs V and V0(x, zeta)");
  const int d = domain.dim();
  PerturbationFamily f = blank_family("stabilizing_directional", domain, v.ncomp, 1);
  f.at = [v, d](const EpsVector& eps) {
    check_eps(eps, 1);
    const double e = eps[0];
    return FieldTriple::potential(CoefficientField(
        d, v.ncomp, [v, e](const Point& x) { return v.eval(x, Point(x / e)); }, v.sup_bound));
  };
  const int n = v.ncomp;
  f.limit = FieldTriple::potential(CoefficientField(
      d, n,
      [v0_dir, n](const Point& x) {
        const double r = x.norm();
        if (r == 0.0) return zero_matrix(n);
        return v0_dir(x, Point(x / r));
      },
      v.sup_bound));
  if (!rho7) rho7 = zero_modulus();
  f.rate = [rho7](const EpsVector& eps) { return rho7(eps[0]) + std::cbrt(eps[0]); };
  f.finest_scale = [](const EpsVector& eps) { return eps[0]; };
  return f;
}

// ---------------------------------------------------------------------------

CoeffMatrix periodic_cell_mean(const std::function<CoeffMatrix(const Point&)>& g, const Point& periods,
                               int nodes) {
  if (nodes < 1) throw InvalidArgument("cell mean needs at least one node per axis");
  const int d = static_cast<int>(periods.size());
  std::vector<double> p(periods.data(), periods.data() + d);
  const int n = static_cast<int>(g(Point::Zero(d)).rows());
  return trapezoid_mean(
      [&](const std::vector<double>& xi) {
        Point q(d);
        for (int i = 0; i < d; ++i) q(i) = xi[i];
        return g(q);
      },
      p, nodes, n);
}

PerturbationFamily make_locally_periodic(LocallyPeriodicSpec spec, Box domain) {
  const int m = static_cast<int>(spec.periods.size());
  const int d = domain.dim();
  if (!spec.V.eval || m < 1) throw InvalidArgument("locally periodic family needs V and at least one scale");
  for (const auto& p : spec.periods) {
    if (p.size() != d || !(p.array() > 0.0).all()) {
      throw InvalidArgument("locally periodic family: periods must be positive d-vectors");
    }
  }
  if (!spec.path) spec.path = diagonal_path(m);
  if (!spec.rho8) spec.rho8 = zero_modulus();
  const int n = spec.V.ncomp;

  PerturbationFamily f = blank_family(m == 1 ? "periodic" : "locally_periodic", domain, n, m);
  f.path = spec.path;
  f.params["scales"] = m;

  auto V = spec.V;
  f.at = [V, m, d, n](const EpsVector& eps) {
    check_eps(eps, static_cast<std::size_t>(m));
    for (int j = 1; j < m; ++j) {
      if (!(eps[j] < eps[j - 1])) {
        throw InvalidArgument("locally periodic family: eps schedule is not scale separated at this eps");
      }
    }
    return FieldTriple::potential(CoefficientField(
        d, n,
        [V, eps, m](const Point& x) {
          std::array<Point, 8> xi;
          for (int j = 0; j < m; ++j) xi[j] = x / eps[j];
          return V.eval(x, std::span<const Point>(xi.data(), static_cast<std::size_t>(m)));
        },
        V.sup_bound));
  };
  if (m > 8) throw InvalidArgument("locally periodic family supports at most 8 scales");

  if (spec.limit) {
    f.limit = FieldTriple::potential(*spec.limit);
  } else {
    std::vector<double> flat;
    for (const auto& p : spec.periods) flat.insert(flat.end(), p.data(), p.data() + d);
    const int nodes = spec.mean_nodes;
    f.limit = FieldTriple::potential(CoefficientField(
        d, n,
        [V, flat, nodes, m, d, n](const Point& x) {
          return trapezoid_mean(
              [&](const std::vector<double>& all) {
                std::array<Point, 8> xi;
                for (int j = 0; j < m; ++j) {
                  xi[j] = Point(d);
                  for (int i = 0; i < d; ++i) xi[j](i) = all[static_cast<std::size_t>(j * d + i)];
                }
                return V.eval(x, std::span<const Point>(xi.data(), static_cast<std::size_t>(m)));
              },
              flat, nodes, n);
        },
        V.sup_bound));
  }

  std::vector<double> diam;
  for (const auto& p : spec.periods) diam.push_back(p.norm());
  const Modulus rho8 = spec.rho8;
  // Scale j contributes rho8(sqrt(j) k_j eps_j / eps_{j-1}) with eps_0 := 1.
  f.rate = [rho8, diam, m](const EpsVector& eps) {
    double r = std::sqrt(eps[0]);
    for (int j = 0; j < m; ++j) {
      const double prev = j == 0 ? 1.0 : eps[j - 1];
      r += rho8(std::sqrt(static_cast<double>(j + 1)) * diam[j] * eps[j] / prev);
    }
    return r;
  };
  const auto periods = spec.periods;
  f.finest_scale = [periods, m](const EpsVector& eps) {
    double s = std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j) s = std::min(s, period_scale(eps[j], periods[j]));
    return s;
  };
  return f;
}

PerturbationFamily make_periodic(TwoScaleField v, Point periods, Box domain, std::optional<CoefficientField> limit,
                                 Modulus rho8) {
  LocallyPeriodicSpec spec;
  spec.V.ncomp = v.ncomp;
  spec.V.sup_bound = v.sup_bound;
  spec.V.eval = [e = v.eval](const Point& x, std::span<const Point> xi) { return e(x, xi[0]); };
  spec.periods = {std::move(periods)};
  spec.path = diagonal_path(1);
  spec.rho8 = std::move(rho8);
  spec.limit = std::move(limit);
  return make_locally_periodic(std::move(spec), std::move(domain));
}

// ---------------------------------------------------------------------------

Complex box_average_exponential(const Point& alpha, double r, const Point& gamma, const Point& periods) {
  Complex out = 1.0;
  for (Index j = 0; j < alpha.size(); ++j) {
    const double a = alpha(j);
    const double lo = r * gamma(j);
    const double len = r * periods(j);
    const double t = a * len;
    if (std::abs(t) < 1e-8) {
      // Series of (e^{it} - 1)/(it) near zero.
      out *= std::exp(Complex(0.0, a * lo)) * Complex(1.0 - t * t / 6.0, t / 2.0);
    } else {
      out *= (std::exp(Complex(0.0, a * (lo + len))) - std::exp(Complex(0.0, a * lo))) / Complex(0.0, t);
    }
  }
  return out;
}

double trig_mean_modulus(const std::vector<TrigTerm>& terms, double r) {
  if (terms.empty()) throw InvalidArgument("trigonometric sum has no terms");
  // |(e^{i t} - 1)/(i t)| <= min(1, 2/|t|) per axis; take the best axis.
  double total = 0.0;
  for (const auto& t : terms) {
    if (t.alpha.isZero(0.0)) continue;
    double factor = 1.0;
    for (Index j = 0; j < t.alpha.size(); ++j) {
      if (t.alpha(j) != 0.0) factor = std::min(factor, 2.0 / (std::abs(t.alpha(j)) * r));
    }
    total += t.coefficient.sup_bound() * factor;
  }
  return total;
}

PerturbationFamily make_almost_periodic(std::vector<TrigTerm> terms, Box domain, Modulus rho9) {
  if (terms.empty()) throw InvalidArgument("almost periodic family needs at least one term");
  const int d = domain.dim();
  const int n = terms.front().coefficient.ncomp();
  double sup = 0.0;
  double max_freq = 0.0;
  for (const auto& t : terms) {
    if (t.alpha.size() != d || t.coefficient.dim() != d || t.coefficient.ncomp() != n) {
      throw InvalidArgument("almost periodic family: term shapes are inconsistent");
    }
    sup += t.coefficient.sup_bound();
    max_freq = std::max(max_freq, t.alpha.norm());
  }
  PerturbationFamily f = blank_family("almost_periodic", domain, n, 1);
  f.params["terms"] = static_cast<double>(terms.size());

  f.at = [terms, d, n, sup](const EpsVector& eps) {
    check_eps(eps, 1);
    const double e = eps[0];
    return FieldTriple::potential(CoefficientField(
        d, n,
        [terms, e, n](const Point& x) {
          CoeffMatrix acc = zero_matrix(n);
          for (const auto& t : terms) acc += std::exp(Complex(0.0, t.alpha.dot(x) / e)) * t.coefficient(x);
          return acc;
        },
        sup));
  };

  CoefficientField limit = CoefficientField::zero(d, n);
  for (const auto& t : terms) {
    if (t.alpha.isZero(0.0)) limit = limit + t.coefficient;
  }
  f.limit = FieldTriple::potential(limit);

  if (!rho9) rho9 = zero_modulus();
  const double kappa = std::sqrt(static_cast<double>(d));
  f.rate = [terms, rho9, kappa](const EpsVector& eps) {
    const double s = std::sqrt(eps[0]);
    return 2.0 * rho9(kappa * s) + trig_mean_modulus(terms, 1.0 / s) + s;
  };
  const double freq = std::max(max_freq, 1e-300);
  const double smooth = smooth_scale(domain);
  f.finest_scale = [freq, smooth](const EpsVector& eps) { return std::min(smooth, eps[0] / freq); };
  return f;
}

// ---------------------------------------------------------------------------

double modulated_eta(const Modulus& p0, double eps) {
  if (!p0) throw InvalidArgument("modulated eta needs the degeneracy function p0");
  if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
  const double target = std::sqrt(eps);
  auto p1 = [&](double r) {
    const double q = p0(r * r);
    return std::min(r * q, q * q);
  };
  // p1 increases from 0; bracket the first crossing then bisect.
  double hi = 1e-6;
  while (p1(hi) < target) {
    hi *= 2.0;
    if (hi > 1e6) throw InvalidArgument("modulated eta: p1 never reaches eps^(1/2)");
  }
  double lo = hi / 2.0;
  if (p1(lo) >= target) lo = 0.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (p1(mid) >= target ? hi : lo) = mid;
  }
  return hi;
}

PerturbationFamily make_modulated(ModulatedSpec spec, Box domain) {
  const int d = domain.dim();
  if (!spec.V.eval || !spec.phi || !spec.jacobian) {
    throw InvalidArgument("modulated family needs V, phi and its Jacobian");
  }
  if (spec.periods.size() != d || !(spec.periods.array() > 0.0).all()) {
    throw InvalidArgument("modulated family: periods must be positive d-vectors");
  }
  if (spec.kind == PhiKind::Periodic && !spec.p0) {
    throw InvalidArgument("modulated family with periodic phi needs the degeneracy function p0");
  }
  if (!spec.rho8) spec.rho8 = zero_modulus();
  const int n = spec.V.ncomp;

  // Sample the Jacobian on a grid: the largest norm sets the finest scale, and
  // in diffeomorphism mode the determinant must stay away from zero.
  const int per_axis = d == 1 ? 257 : (d == 2 ? 65 : 17);
  double max_jac = 0.0;
  double min_det = std::numeric_limits<double>::infinity();
  double max_jac_for_det = 0.0;
  long total = 1;
  for (int i = 0; i < d; ++i) total *= per_axis;
  Point x(d);
  for (long flat = 0; flat < total; ++flat) {
    long rem = flat;
    for (int i = 0; i < d; ++i) {
      x(i) = domain.lo(i) + (domain.hi(i) - domain.lo(i)) * static_cast<double>(rem % per_axis) / (per_axis - 1);
      rem /= per_axis;
    }
    const Eigen::MatrixXd J = spec.jacobian(x);
    if (J.rows() != d || J.cols() != d) throw InvalidArgument("modulated family: Jacobian must be d x d");
    max_jac = std::max(max_jac, J.norm());
    max_jac_for_det = std::max(max_jac_for_det, std::pow(J.norm(), d));
    min_det = std::min(min_det, std::abs(J.determinant()));
  }
  if (spec.kind == PhiKind::Diffeomorphism && !(min_det > 1e-10 * std::max(1.0, max_jac_for_det))) {
    throw InvalidArgument("modulated family: Jacobian of phi is singular on the domain");
  }

  PerturbationFamily f =
      blank_family(spec.kind == PhiKind::Diffeomorphism ? "modulated" : "modulated_periodic", domain, n, 1);
  auto V = spec.V;
  auto phi = spec.phi;
  f.at = [V, phi, d, n](const EpsVector& eps) {
    check_eps(eps, 1);
    const double e = eps[0];
    return FieldTriple::potential(CoefficientField(
        d, n, [V, phi, e](const Point& x) { return V.eval(x, Point(phi(x) / e)); }, V.sup_bound));
  };
  if (spec.limit) {
    f.limit = FieldTriple::potential(*spec.limit);
  } else {
    const Point periods = spec.periods;
    const int nodes = spec.mean_nodes;
    f.limit = FieldTriple::potential(CoefficientField(
        d, n,
        [V, periods, nodes](const Point& x) {
          return periodic_cell_mean([&](const Point& xi) { return V.eval(x, xi); }, periods, nodes);
        },
        V.sup_bound));
  }
  const Modulus rho8 = spec.rho8;
  const double sd = std::sqrt(static_cast<double>(d));
  if (spec.kind == PhiKind::Diffeomorphism) {
    f.rate = [rho8, sd](const EpsVector& eps) {
      const double s = std::sqrt(eps[0]);
      return s + rho8(sd * s);
    };
  } else {
    const Modulus p0 = spec.p0;
    f.rate = [rho8, sd, p0](const EpsVector& eps) {
      const double eta = modulated_eta(p0, eps[0]);
      return std::sqrt(eps[0]) + eta + rho8(sd * eta);
    };
  }
  const double pmin = spec.periods.minCoeff();
  const double jmax = std::max(max_jac, 1e-300);
  const double smooth = smooth_scale(domain);
  f.finest_scale = [pmin, jmax, smooth](const EpsVector& eps) {
    return std::min(smooth, eps[0] * pmin / (kTwoPi * jmax));
  };
  return f;
}

// ---------------------------------------------------------------------------

Point fractal_argument(const Point& x, double eps) {
  Point z(x.size());
  double prod = 1.0;
  double scale = 1.0;
  for (Index i = 0; i < x.size(); ++i) {
    prod *= x(i);
    scale *= eps;
    z(i) = prod / scale;
  }
  return z;
}

PerturbationFamily make_fractal(FractalSpec spec, Box domain) {
  const int d = domain.dim();
  if (!spec.V.eval) throw InvalidArgument("fractal family needs V");
  if (spec.periods.size() != d) throw InvalidArgument("fractal family: one period per axis is required");
  if (!(spec.periods.array() > 0.0).all()) throw InvalidArgument("fractal family: periods must be positive");
  if (!spec.rho8) spec.rho8 = zero_modulus();
  const int n = spec.V.ncomp;

  PerturbationFamily f = blank_family("fractal", domain, n, 1);
  auto V = spec.V;
  f.at = [V, d, n](const EpsVector& eps) {
    check_eps(eps, 1);
    const double e = eps[0];
    return FieldTriple::potential(
        CoefficientField(d, n, [V, e](const Point& x) { return V.eval(x, fractal_argument(x, e)); }, V.sup_bound));
  };
  if (spec.limit) {
    f.limit = FieldTriple::potential(*spec.limit);
  } else {
    const Point periods = spec.periods;
    const int nodes = spec.mean_nodes;
    f.limit = FieldTriple::potential(CoefficientField(
        d, n,
        [V, periods, nodes](const Point& x) {
          return periodic_cell_mean([&](const Point& xi) { return V.eval(x, xi); }, periods, nodes);
        },
        V.sup_bound));
  }
  const Modulus rho8 = spec.rho8;
  const double sd = std::sqrt(static_cast<double>(d));
  f.rate = [rho8, sd](const EpsVector& eps) {
    const double s = std::sqrt(eps[0]);
    return rho8(2.0 * sd * s) + s;
  };
  // |grad zeta_i| <= sqrt(i) R^{i-1} / eps^i with R = max |x_j| on the box.
  const double R = std::max(domain.lo.cwiseAbs().maxCoeff(), domain.hi.cwiseAbs().maxCoeff());
  const Point periods = spec.periods;
  f.finest_scale = [periods, R, d](const EpsVector& eps) {
    double s = std::numeric_limits<double>::infinity();
    for (int i = 1; i <= d; ++i) {
      const double grad = std::sqrt(static_cast<double>(i)) * std::pow(std::max(R, 1e-300), i - 1);
      s = std::min(s, periods(i - 1) * std::pow(eps[0], i) / (kTwoPi * std::max(grad, 1e-300)));
    }
    return s;
  };
  return f;
}

// ---------------------------------------------------------------------------

ErgodicSystem::ErgodicSystem(Eigen::MatrixXd flow, Observable observable, int ncomp, double sup_bound,
                             std::uint64_t seed)
    : flow_(std::move(flow)), observable_(std::move(observable)), ncomp_(ncomp), sup_bound_(sup_bound), seed_(seed) {
  if (flow_.rows() <= 0) throw InvalidArgument("ergodic system: torus dimension must be positive");
  if (flow_.cols() < 1 || flow_.cols() > kMaxDim) throw InvalidArgument("ergodic system: flow must have 1..3 columns");
  if (!observable_) throw InvalidArgument("ergodic system needs an observable");
  if (ncomp < 1 || ncomp > kMaxComponents) throw InvalidArgument("ergodic system: bad component count");
}

Eigen::VectorXd ErgodicSystem::shift(const Eigen::VectorXd& varpi, const Point& x) const {
  if (varpi.size() != flow_.rows() || x.size() != flow_.cols()) {
    throw InvalidArgument("ergodic shift: dimension mismatch");
  }
  Eigen::VectorXd out = varpi + flow_ * x;
  for (Index i = 0; i < out.size(); ++i) {
    out(i) -= std::floor(out(i));
    if (out(i) >= 1.0) out(i) = 0.0;
  }
  return out;
}

Eigen::VectorXd ErgodicSystem::realization(std::uint64_t index) const {
  std::mt19937_64 rng(child_seed(seed_, index));
  Eigen::VectorXd w(flow_.rows());
  for (Index i = 0; i < w.size(); ++i) w(i) = uniform01(rng);
  return w;
}

CoefficientField ErgodicSystem::expectation(int nodes) const {
  if (nodes < 1) throw InvalidArgument("expectation needs at least one node per axis");
  const int k = torus_dim();
  auto obs = observable_;
  const int n = ncomp_;
  return CoefficientField(
      dim(), ncomp_,
      [obs, k, nodes, n](const Point& x) {
        std::vector<double> periods(static_cast<std::size_t>(k), 1.0);
        return trapezoid_mean(
            [&](const std::vector<double>& w) {
              Eigen::VectorXd varpi = Eigen::Map<const Eigen::VectorXd>(w.data(), k);
              return obs(x, varpi);
            },
            periods, nodes, n);
      },
      sup_bound_);
}

CoeffMatrix ErgodicSystem::birkhoff_average(const Point& x, const Eigen::VectorXd& varpi, double T, int panels) const {
  if (!(T > 0.0) || panels < 1) throw InvalidArgument("Birkhoff average needs T > 0 and panels >= 1");
  const int d = dim();
  Cell cell = Cell::box(Box::cube(d, 0.0, T));
  auto f = [&](const Point& y) { return observable_(x, shift(varpi, y)); };
  return integrate_cell(cell, panels, f, CoeffMatrix(zero_matrix(ncomp_))) / cell.measure();
}

PerturbationFamily make_random(const ErgodicSystem& system, Box domain, std::uint64_t index, Modulus birkhoff_rate,
                               std::optional<CoefficientField> expectation) {
  const int d = domain.dim();
  if (system.dim() != d) throw InvalidArgument("random family: flow columns differ from domain dimension");
  const int n = system.ncomp();
  PerturbationFamily f = blank_family("random", domain, n, d);
  f.params["realization"] = static_cast<double>(index);
  const Eigen::VectorXd varpi = system.realization(index);
  auto sys = std::make_shared<const ErgodicSystem>(system);
  f.at = [sys, varpi, d, n](const EpsVector& eps) {
    check_eps(eps, static_cast<std::size_t>(d));
    return FieldTriple::potential(CoefficientField(
        d, n, [sys, varpi, eps](const Point& x) { return sys->observe(x, sys->shift(varpi, fast_argument(x, eps))); },
        sys->sup_bound()));
  };
  f.limit = FieldTriple::potential(expectation ? *expectation : system.expectation());
  if (!birkhoff_rate) birkhoff_rate = zero_modulus();
  // eta = eps^(1/2), alpha = 1/2: eps / eta^(3/2) = eps^(1/4), T = eta^(-1/2).
  f.rate = [birkhoff_rate](const EpsVector& eps) {
    const double e = eps_max(eps);
    const double eta = std::sqrt(e);
    return eta + e / std::pow(eta, 1.5) + birkhoff_rate(1.0 / std::sqrt(eta));
  };
  const double fmax = std::max(system.flow().cwiseAbs().maxCoeff(), 1e-300);
  f.finest_scale = [fmax](const EpsVector& eps) { return eps_min(eps) / (kTwoPi * fmax); };
  return f;
}

// ---------------------------------------------------------------------------

namespace {

FieldTriple map_triple(const FieldTriple& t, const std::function<CoefficientField(const CoefficientField&)>& op) {
  FieldTriple out;
  out.V = op(t.V);
  for (const auto& q : t.Q) out.Q.push_back(op(q));
  for (const auto& p : t.P) out.P.push_back(op(p));
  return out;
}

FieldTriple combine(const FieldTriple& a, const FieldTriple& b,
                    const std::function<CoefficientField(const CoefficientField&, const CoefficientField&)>& op) {
  FieldTriple out;
  out.V = op(a.V, b.V);
  for (std::size_t j = 0; j < a.Q.size(); ++j) out.Q.push_back(op(a.Q[j], b.Q.at(j)));
  for (std::size_t j = 0; j < a.P.size(); ++j) out.P.push_back(op(a.P[j], b.P.at(j)));
  return out;
}

PerturbationFamily scale_family(const CoefficientField& psi, const PerturbationFamily& fam, double psi_w1inf,
                                bool left) {
  if (psi.dim() != fam.dim() || psi.ncomp() != fam.ncomp) {
    throw InvalidArgument("scaling field differs from the family in shape");
  }
  PerturbationFamily out = fam;
  out.name = (left ? "scale_left(" : "scale_right(") + fam.name + ")";
  auto op = [psi, left](const CoefficientField& f) { return left ? psi * f : f * psi; };
  auto at = fam.at;
  out.at = [at, op](const EpsVector& eps) { return map_triple(at(eps), op); };
  out.limit = map_triple(fam.limit, op);
  const double factor = psi.is_zero() ? 0.0 : 2.0 * (psi_w1inf > 0.0 ? psi_w1inf : psi.sup_bound());
  auto rate = fam.rate;
  out.rate = [rate, factor](const EpsVector& eps) { return factor * rate(eps); };
  return out;
}

void check_same_setting(const PerturbationFamily& a, const PerturbationFamily& b) {
  if (a.ncomp != b.ncomp || a.eps_dim != b.eps_dim || a.dim() != b.dim()) {
    throw InvalidArgument("families differ in dimension, components or eps length");
  }
}

}  // namespace

PerturbationFamily scale_left(const CoefficientField& psi, const PerturbationFamily& fam, double psi_w1inf) {
  return scale_family(psi, fam, psi_w1inf, true);
}

PerturbationFamily scale_right(const CoefficientField& psi, const PerturbationFamily& fam, double psi_w1inf) {
  return scale_family(psi, fam, psi_w1inf, false);
}

PerturbationFamily add(const PerturbationFamily& a, const PerturbationFamily& b) {
  check_same_setting(a, b);
  const double tol = 1e-12 * std::max(1.0, a.domain.diameter());
  if ((a.domain.lo - b.domain.lo).norm() > tol || (a.domain.hi - b.domain.hi).norm() > tol) {
    throw InvalidArgument("add: families live on different domains");
  }
  PerturbationFamily out = a;
  out.name = "add(" + a.name + "," + b.name + ")";
  auto plus = [](const CoefficientField& x, const CoefficientField& y) { return x + y; };
  auto at_a = a.at;
  auto at_b = b.at;
  out.at = [at_a, at_b, plus](const EpsVector& eps) { return combine(at_a(eps), at_b(eps), plus); };
  out.limit = combine(a.limit, b.limit, plus);
  auto ra = a.rate;
  auto rb = b.rate;
  out.rate = [ra, rb](const EpsVector& eps) { return ra(eps) + rb(eps); };
  auto fa = a.finest_scale;
  auto fb = b.finest_scale;
  out.finest_scale = [fa, fb](const EpsVector& eps) { return std::min(fa(eps), fb(eps)); };
  return out;
}

PerturbationFamily negate(const PerturbationFamily& fam) {
  PerturbationFamily out = fam;
  out.name = "negate(" + fam.name + ")";
  auto neg = [](const CoefficientField& f) { return Complex(-1.0) * f; };
  auto at = fam.at;
  out.at = [at, neg](const EpsVector& eps) { return map_triple(at(eps), neg); };
  out.limit = map_triple(fam.limit, neg);
  return out;
}

namespace {

using CellKey = std::array<int, kMaxDim>;

CellKey key_of(const LatticeIndex& k) {
  CellKey key{};
  for (Index i = 0; i < k.size(); ++i) key[static_cast<std::size_t>(i)] = k(i);
  return key;
}

// Zero-mean profile on (0,1): tanh(beta sin(2 pi k t + phase)). An integer
// number of periods makes the mean vanish exactly by the half-period sign flip.
struct WaveParams {
  double phase = 0.0;
  double sign = 1.0;
  int periods = 1;
};

constexpr double kWaveSharpness = 4.0;
constexpr int kMaxWavePeriods = 4;

}  // namespace

PerturbationFamily cell_resample(const PerturbationFamily& fam, const Lattice& lattice,
                                 std::function<double(double)> eta_of_eps, std::uint64_t seed, double amplitude) {
  if (lattice.dim() != fam.dim()) throw InvalidArgument("cell_resample: lattice dimension differs from family");
  if (!eta_of_eps) throw InvalidArgument("cell_resample needs eta(eps)");
  PerturbationFamily out = fam;
  out.name = "cell_resample(" + fam.name + ")";
  const int d = fam.dim();
  const int n = fam.ncomp;
  auto at = fam.at;
  auto finest = fam.finest_scale;
  auto path = fam.path;
  const Box domain = fam.domain;
  const Eigen::MatrixXd inv = lattice.basis().inverse();

  out.at = [=](const EpsVector& eps) {
    FieldTriple base = at(eps);
    // The path's first entry is the scalar parameter that eta refers to.
    const double eta = eta_of_eps(eps[0]);
    const CellIndexSet set = cells_inside(lattice, eta, domain);
    const CoefficientField v = base.V;
    const int refine = std::max(2, 2 * default_refine(eta * lattice.cell_diameter(), finest(eps)));

    auto means = std::make_shared<std::vector<CoeffMatrix>>(set.size());
    auto waves = std::make_shared<std::vector<WaveParams>>(set.size());
    auto index = std::make_shared<std::map<CellKey, std::size_t>>();
    for (std::size_t c = 0; c < set.size(); ++c) {
      const Cell cell = scaled_cell(lattice, eta, set.gammas[c]);
      (*means)[c] = cell_mean(cell, v, refine).value;
      std::mt19937_64 rng(child_seed(seed, c));
      WaveParams w;
      w.phase = kTwoPi * uniform01(rng);
      w.sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
      w.periods = 1 + static_cast<int>(rng() % kMaxWavePeriods);
      (*waves)[c] = w;
      (*index)[key_of(set.gammas[c])] = c;
    }
    const Point offset = lattice.offset();
    double mean_sup = 0.0;
    for (const auto& m : *means) mean_sup = std::max(mean_sup, entry_norm(m));

    base.V = CoefficientField(
        d, n,
        [v, means, waves, index, inv, offset, eta, amplitude, n](const Point& x) {
          const Eigen::VectorXd t = inv * (x / eta - offset);
          LatticeIndex k(t.size());
          for (Index i = 0; i < t.size(); ++i) k(i) = static_cast<int>(std::floor(t(i)));
          const auto it = index->find(key_of(k));
          if (it == index->end()) return v(x);
          const WaveParams& w = (*waves)[it->second];
          const double local = t(0) - k(0);
          const double s = w.sign * std::tanh(kWaveSharpness * std::sin(kTwoPi * w.periods * local + w.phase));
          return CoeffMatrix((*means)[it->second] + amplitude * s * CoeffMatrix::Identity(n, n));
        },
        std::max(v.sup_bound(), mean_sup + std::abs(amplitude) * n));
    return base;
  };
  out.finest_scale = [finest, eta_of_eps, lattice](const EpsVector& eps) {
    const double eta = eta_of_eps(eps[0]);
    const double wave = eta * lattice.basis().colwise().norm().minCoeff() /
                        (kTwoPi * kMaxWavePeriods * kWaveSharpness);
    return std::min(finest(eps), wave);
  };
  return out;
}

PerturbationFamily glue(const PerturbationFamily& first, const PerturbationFamily& second) {
  check_same_setting(first, second);
  const int d = first.dim();
  const Box& a = first.domain;
  const Box& b = second.domain;
  const double tol = 1e-12 * std::max(1.0, a.diameter() + b.diameter());
  int axis = -1;
  for (int i = 0; i < d; ++i) {
    bool others_match = true;
    for (int j = 0; j < d; ++j) {
      if (j == i) continue;
      others_match = others_match && std::abs(a.lo(j) - b.lo(j)) <= tol && std::abs(a.hi(j) - b.hi(j)) <= tol;
    }
    if (others_match && std::abs(a.hi(i) - b.lo(i)) <= tol) {
      axis = i;
      break;
    }
  }
  if (axis < 0) {
    throw InvalidArgument("glue: domains must be disjoint boxes sharing a full face (first below second)");
  }
  const double cut = a.hi(axis);

  auto piecewise = [axis, cut](const CoefficientField& f, const CoefficientField& g) {
    if (f.is_zero() && g.is_zero()) return f;
    return CoefficientField(
        f.dim(), f.ncomp(), [f, g, axis, cut](const Point& x) { return x(axis) < cut ? f(x) : g(x); },
        std::max(f.sup_bound(), g.sup_bound()));
  };

  PerturbationFamily out = first;
  out.name = "glue(" + first.name + "," + second.name + ")";
  out.domain = Box{a.lo, b.hi};
  auto at1 = first.at;
  auto at2 = second.at;
  out.at = [at1, at2, piecewise](const EpsVector& eps) { return combine(at1(eps), at2(eps), piecewise); };
  out.limit = combine(first.limit, second.limit, piecewise);
  auto r1 = first.rate;
  auto r2 = second.rate;
  out.rate = [r1, r2](const EpsVector& eps) { return r1(eps) + r2(eps); };
  auto f1 = first.finest_scale;
  auto f2 = second.finest_scale;
  out.finest_scale = [f1, f2](const EpsVector& eps) { return std::min(f1(eps), f2(eps)); };
  return out;
}

PerturbationFamily with_role(const PerturbationFamily& fam, FieldRole role) {
  if (role == FieldRole::V) return fam;
  PerturbationFamily out = fam;
  out.name = fam.name + "[" + role_name(role) + "]";
  auto move_slot = [role](FieldTriple t) {
    const int d = t.dim();
    const int n = t.ncomp();
    CoefficientField v = t.V;
    t.V = CoefficientField::zero(d, n);
    (role == FieldRole::Q ? t.Q : t.P).at(0) = std::move(v);
    return t;
  };
  auto at = fam.at;
  out.at = [at, move_slot](const EpsVector& eps) { return move_slot(at(eps)); };
  out.limit = move_slot(fam.limit);
  return out;
}

PerturbationFamily with_limit(const PerturbationFamily& fam, FieldTriple limit) {
  PerturbationFamily out = fam;
  out.limit = std::move(limit);
  return out;
}

}  // namespace homlab
