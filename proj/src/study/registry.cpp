#include "homlab/study/registry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

namespace homlab::study {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

CoeffMatrix scalar_matrix(Complex v) {
  CoeffMatrix m(1, 1);
  m(0, 0) = v;
  return m;
}

CoefficientField scalar_field(std::function<double(double)> f, double sup) {
  return CoefficientField::scalar(1, 1, [f](const Point& x) { return Complex(f(x(0))); }, sup);
}

Box interval_from(const Config& cfg, double a, double b) {
  const double lo = cfg.number("family.a", a);
  const double hi = cfg.number("family.b", b);
  if (!(hi > lo)) throw ConfigError("family.a must be below family.b", "family.b");
  return Box::interval(lo, hi);
}

FieldTriple scale_triple(const FieldTriple& t, double c) {
  FieldTriple out;
  out.V = Complex(c) * t.V;
  for (const auto& q : t.Q) out.Q.push_back(Complex(c) * q);
  for (const auto& p : t.P) out.P.push_back(Complex(c) * p);
  return out;
}

// eps^p V^eps for p > 0 tends to zero whatever V^eps does.
PerturbationFamily eps_power_scaled(PerturbationFamily fam, double p) {
  if (p == 0.0) return fam;
  if (p < 0.0) throw ConfigError("family.power must be >= 0", "family.power");
  auto at = fam.at;
  auto path = fam.path;
  const double sup = fam.at_scalar(0.5).sup_bound();
  fam.at = [at, p](const EpsVector& eps) { return scale_triple(at(eps), std::pow(eps[0], p)); };
  fam.limit = FieldTriple::zero(fam.dim(), fam.ncomp);
  fam.rate = [p, sup](const EpsVector& eps) { return std::pow(eps[0], p) * sup; };
  return fam;
}

PerturbationFamily oscillating_sine(const Config& cfg, std::uint64_t) {
  const double amp = cfg.number("family.amplitude", 1.0);
  const double power = cfg.number("family.power", 0.0);
  TwoScaleField v{[amp](const Point&, const Point& xi) { return scalar_matrix(amp * std::sin(xi(0))); }, 1,
                  std::abs(amp)};
  PerturbationFamily f = make_periodic(v, point1(kTwoPi), interval_from(cfg, 0.0, 1.0), CoefficientField::zero(1, 1));
  return eps_power_scaled(std::move(f), power);
}

PerturbationFamily square_wave(const Config& cfg, std::uint64_t) {
  const double amp = cfg.number("family.amplitude", 1.0);
  const double declared = cfg.number("family.limit", 0.0);
  TwoScaleField v{[amp](const Point&, const Point& xi) {
                    const double s = std::sin(xi(0));
                    return scalar_matrix(s > 0.0 ? amp : (s < 0.0 ? -amp : 0.0));
                  },
                  1, std::abs(amp)};
  PerturbationFamily f = make_periodic(v, point1(kTwoPi), interval_from(cfg, 0.0, 1.0), CoefficientField::zero(1, 1));
  if (declared != 0.0) f = with_limit(f, FieldTriple::potential(CoefficientField::identity(1, 1, declared)));
  return f;
}

PerturbationFamily two_scale_linear(const Config& cfg, std::uint64_t) {
  const Box dom = interval_from(cfg, 0.0, 2.0);
  const double r = std::max(std::abs(dom.lo(0)), std::abs(dom.hi(0)));
  TwoScaleField v{[](const Point& x, const Point& xi) { return scalar_matrix(x(0) * (1.0 + std::cos(kTwoPi * xi(0)))); },
                  1, 2.0 * r};
  return make_periodic(v, point1(1.0), dom, scalar_field([](double x) { return x; }, r));
}

PerturbationFamily regular(const Config& cfg, std::uint64_t) {
  const double amp = cfg.number("family.amplitude", 1.0);
  const CoefficientField v0 = scalar_field([](double x) { return std::cos(kPi * x); }, 1.0);
  return make_regular(
      [amp](const EpsVector& eps) {
        const double e = eps[0];
        return scalar_field([amp, e](double x) { return std::cos(kPi * x) + amp * e * std::sin(3.0 * x); },
                            1.0 + std::abs(amp) * e);
      },
      v0, interval_from(cfg, 0.0, 1.0), [amp](const EpsVector& eps) { return std::abs(amp) * eps[0]; });
}

PerturbationFamily identical(const Config& cfg, std::uint64_t) {
  const CoefficientField v0 = scalar_field([](double x) { return std::cos(kPi * x); }, 1.0);
  return make_regular([v0](const EpsVector&) { return v0; }, v0, interval_from(cfg, 0.0, 1.0),
                      [](const EpsVector&) { return 0.0; });
}

PerturbationFamily sparse(const Config& cfg, std::uint64_t) {
  const double amp = cfg.number("family.amplitude", 1.0);
  const double sp = cfg.number("family.spacing_power", 0.5);
  const double ss = cfg.number("family.spacing_scale", 1.0);
  const double rp = cfg.number("family.radius_power", 0.5);
  if (!(sp > 0.0) || !(rp > 0.0) || !(ss > 0.0)) {
    throw ConfigError("sparse family: spacing_power, spacing_scale and radius_power must be positive");
  }
  const Box dom = interval_from(cfg, 0.0, 1.0);
  SparseSpec spec;
  spec.rho4 = [sp, ss](double e) { return ss * std::pow(e, sp); };
  spec.rho5 = [rp](double e) { return std::pow(e, rp); };
  spec.centers = [dom, rho4 = spec.rho4](double e) { return grid_centers(dom, rho4(e)); };
  spec.bump = CoefficientField::scalar(
      1, 1, [amp](const Point& y) { return Complex(amp * (1.0 - y.squaredNorm())); }, std::abs(amp));
  return make_sparse(spec, dom);
}

PerturbationFamily stabilizing(const Config& cfg, std::uint64_t) {
  const double amp = cfg.number("family.amplitude", 1.0);
  const Box dom = interval_from(cfg, -1.0, 1.0);
  const double r2 = std::pow(std::max(std::abs(dom.lo(0)), std::abs(dom.hi(0))), 2);
  TwoScaleField v{[amp](const Point& x, const Point& xi) {
                    const double s = xi.squaredNorm();
                    return scalar_matrix(amp * (1.0 + x(0) * x(0)) * s / (1.0 + s));
                  },
                  1, std::abs(amp) * (1.0 + r2)};
  const CoefficientField v0 = scalar_field([amp](double x) { return amp * (1.0 + x * x); }, std::abs(amp) * (1.0 + r2));
  // sup over |xi| >= eps^(-1/3) of |V - V0| = sup (1 + x^2) / (1 + |xi|^2).
  const Modulus rho6 = [amp, r2](double e) { return std::abs(amp) * (1.0 + r2) / (1.0 + std::pow(e, -2.0 / 3.0)); };
  return make_stabilizing(v, v0, rho6, dom);
}

PerturbationFamily locally_periodic(const Config& cfg, std::uint64_t) {
  const double amp = cfg.number("family.amplitude", 1.0);
  const int m = cfg.integer("family.scales", 1);
  const Box dom = interval_from(cfg, 0.0, 1.0);
  const double r = std::max(std::abs(dom.lo(0)), std::abs(dom.hi(0)));
  LocallyPeriodicSpec spec;
  spec.limit = CoefficientField::zero(1, 1);
  if (m == 1) {
    spec.V = {[amp](const Point& x, std::span<const Point> xi) {
                const double t = kTwoPi * xi[0](0);
                return scalar_matrix(amp * (std::sin(t) + x(0) * std::cos(t)));
              },
              1, std::abs(amp) * (1.0 + r)};
    spec.periods = {point1(1.0)};
    spec.path = diagonal_path(1);
    spec.rho8 = [amp](double delta) { return std::abs(amp) * delta; };
  } else if (m == 2) {
    spec.V = {[amp](const Point& x, std::span<const Point> xi) {
                const double s = std::sin(kTwoPi * xi[0](0));
                const double c = std::cos(kTwoPi * xi[1](0));
                return scalar_matrix(amp * (s + x(0) * c + s * c));
              },
              1, std::abs(amp) * (2.0 + r)};
    spec.periods = {point1(1.0), point1(1.0)};
    spec.path = [](double e) { return EpsVector{e, e * e}; };
    // Lipschitz constant of V in (x, slow variable).
    spec.rho8 = [amp](double delta) { return std::abs(amp) * (1.0 + 4.0 * kPi) * delta; };
  } else {
    throw ConfigError("family.scales must be 1 or 2", "family.scales");
  }
  PerturbationFamily f = make_locally_periodic(std::move(spec), dom);
  return f;
}

PerturbationFamily almost_periodic(const Config& cfg, std::uint64_t) {
  const double amp = cfg.number("family.amplitude", 1.0);
  const Box dom = interval_from(cfg, 0.0, 1.0);
  const double r2 = std::sqrt(2.0);
  // sin xi + cos(sqrt 2 xi) as exponentials.
  auto c = [](Complex v) { return CoefficientField::identity(1, 1, v); };
  std::vector<TrigTerm> terms{{point1(1.0), c(Complex(0.0, -0.5 * amp))},
                              {point1(-1.0), c(Complex(0.0, 0.5 * amp))},
                              {point1(r2), c(0.5 * amp)},
                              {point1(-r2), c(0.5 * amp)}};
  return make_almost_periodic(std::move(terms), dom);
}

PerturbationFamily modulated(const Config& cfg, std::uint64_t) {
  const double amp = cfg.number("family.amplitude", 1.0);
  const std::string kind = cfg.string("family.kind", "diffeomorphism");
  const Box dom = interval_from(cfg, 1.0, 2.0);
  ModulatedSpec spec;
  spec.V = {[amp](const Point&, const Point& xi) { return scalar_matrix(amp * std::cos(kTwoPi * xi(0))); }, 1,
            std::abs(amp)};
  spec.periods = point1(1.0);
  spec.limit = CoefficientField::zero(1, 1);
  if (kind == "diffeomorphism") {
    spec.kind = PhiKind::Diffeomorphism;
    spec.phi = [](const Point& x) { return point1(x(0) * x(0) * x(0)); };
    spec.jacobian = [](const Point& x) { return Eigen::MatrixXd::Constant(1, 1, 3.0 * x(0) * x(0)); };
  } else if (kind == "periodic") {
    spec.kind = PhiKind::Periodic;
    spec.phi = [](const Point& x) { return point1(std::cos(kTwoPi * x(0))); };
    spec.jacobian = [](const Point& x) { return Eigen::MatrixXd::Constant(1, 1, -kTwoPi * std::sin(kTwoPi * x(0))); };
    // |phi'| >= 2 pi sin(2 pi r) at distance r <= 1/4 from the half-integers.
    spec.p0 = [](double r) { return kTwoPi * std::sin(kTwoPi * std::min(r, 0.25)); };
  } else {
    throw ConfigError("family.kind must be diffeomorphism or periodic", "family.kind");
  }
  return make_modulated(std::move(spec), dom);
}

PerturbationFamily fractal(const Config& cfg, std::uint64_t) {
  const double amp = cfg.number("family.amplitude", 1.0);
  const double lo = cfg.number("family.lo", 1.0);
  const double hi = cfg.number("family.hi", 2.0);
  if (!(hi > lo)) throw ConfigError("family.lo must be below family.hi", "family.hi");
  const std::string profile = cfg.string("family.profile", "product");
  FractalSpec spec;
  if (profile == "product") {
    spec.V = {[amp](const Point&, const Point& z) {
                return scalar_matrix(amp * std::cos(kTwoPi * z(0)) * std::cos(kTwoPi * z(1)));
              },
              1, std::abs(amp)};
  } else if (profile == "sum") {
    spec.V = {[amp](const Point&, const Point& z) {
                return scalar_matrix(amp * (std::cos(kTwoPi * z(0)) + std::cos(kTwoPi * z(1))));
              },
              1, 2.0 * std::abs(amp)};
  } else {
    throw ConfigError("family.profile must be product or sum", "family.profile");
  }
  spec.periods = Point::Ones(2);
  spec.limit = CoefficientField::zero(2, 1);
  return make_fractal(std::move(spec), Box::cube(2, lo, hi));
}

PerturbationFamily random_rotation(const Config& cfg, std::uint64_t seed) {
  const double amp = cfg.number("family.amplitude", 1.0);
  const int realization = cfg.integer("family.realization", 0);
  Eigen::MatrixXd flow(2, 1);
  flow << 1.0, std::sqrt(2.0);
  ErgodicSystem system(
      flow,
      [amp](const Point&, const Eigen::VectorXd& w) {
        return scalar_matrix(amp * (std::cos(kTwoPi * w(0)) + std::sin(kTwoPi * w(1))));
      },
      1, 2.0 * std::abs(amp), seed);
  // Averages of cos(2 pi (w + t)) over (0, T) are at most 1 / (pi T).
  const Modulus birkhoff = [amp](double T) { return std::abs(amp) * (1.0 + 1.0 / std::sqrt(2.0)) / (kPi * T); };
  // both terms have zero mean over the torus
  return make_random(system, interval_from(cfg, 0.0, 1.0), static_cast<std::uint64_t>(realization), birkhoff,
                     CoefficientField::zero(1, 1));
}

const ParamDoc kA{"family.a", "0", "left end of the interval"};
const ParamDoc kB{"family.b", "1", "right end of the interval"};
const ParamDoc kAmp{"family.amplitude", "1", "profile amplitude"};

std::vector<FamilyInfo> make_registry() {
  return {
      {"oscillating_sine", "V = amplitude eps^power sin(x/eps), limit 0", {kA, kB, kAmp, {"family.power", "0", "eps power in front (> 0 gives a decaying family)"}}, true, oscillating_sine},
      {"square_wave", "V = amplitude sign(sin(x/eps)); the declared limit is configurable (negative control)", {kA, kB, kAmp, {"family.limit", "0", "declared limit constant (the true weak limit is 0)"}}, true, square_wave},
      {"two_scale_linear", "V = x (1 + cos(2 pi x/eps)), limit x", {{"family.a", "0", "left end"}, {"family.b", "2", "right end"}}, true, two_scale_linear},
      {"regular", "V = cos(pi x) + amplitude eps sin(3x), limit cos(pi x)", {kA, kB, kAmp}, true, regular},
      {"identical", "V = cos(pi x) for every eps; every deviation vanishes", {kA, kB}, true, identical},
      {"sparse", "bumps amplitude (1 - |y|^2) of radius rho4 rho5 on a grid of spacing rho4", {kA, kB, kAmp, {"family.spacing_power", "0.5", "rho4 = spacing_scale eps^spacing_power"}, {"family.spacing_scale", "1", "rho4 prefactor"}, {"family.radius_power", "0.5", "rho5 = eps^radius_power"}}, true, sparse},
      {"stabilizing", "V = amplitude (1 + x^2) xi^2 / (1 + xi^2), xi = x/eps; limit amplitude (1 + x^2)", {{"family.a", "-1", "left end"}, {"family.b", "1", "right end"}, kAmp}, true, stabilizing},
      {"locally_periodic", "scales = 1: sin(2 pi xi) + x cos(2 pi xi); scales = 2: sin(2 pi xi) + x cos(2 pi zeta) + sin(2 pi xi) cos(2 pi zeta), (xi, zeta) = (x/eps, x/eps^2); limit 0", {kA, kB, kAmp, {"family.scales", "1", "number of fast scales (1 or 2)"}}, true, locally_periodic},
      {"almost_periodic", "V = amplitude (sin(x/eps) + cos(sqrt 2 x/eps)), limit 0", {kA, kB, kAmp}, true, almost_periodic},
      {"modulated", "V = amplitude cos(2 pi phi(x)/eps) with phi = x^3 (diffeomorphism) or cos(2 pi x) (periodic); limit 0", {{"family.a", "1", "left end"}, {"family.b", "2", "right end"}, kAmp, {"family.kind", "diffeomorphism", "diffeomorphism or periodic"}}, true, modulated},
      {"fractal", "d = 2, zeta = (x1/eps, x1 x2/eps^2): V = amplitude cos(2 pi zeta1) cos(2 pi zeta2) (product) or amplitude (cos(2 pi zeta1) + cos(2 pi zeta2)) (sum) on (lo, hi)^2, limit 0 (criterion only)", {{"family.lo", "1", "lower corner coordinate"}, {"family.hi", "2", "upper corner coordinate"}, kAmp, {"family.profile", "product", "product or sum"}}, false, fractal},
      {"random", "V = amplitude (cos 2 pi w1 + sin 2 pi w2) along the torus rotation w + (1, sqrt 2) x/eps; limit 0", {kA, kB, kAmp, {"family.realization", "0", "realization index (the random start uses --seed)"}}, true, random_rotation},
  };
}

}  // namespace

const std::vector<FamilyInfo>& family_registry() {
  static const std::vector<FamilyInfo> registry = make_registry();
  return registry;
}

const FamilyInfo& find_family(const std::string& name) {
  for (const auto& f : family_registry()) {
    if (f.name == name) return f;
  }
  throw ConfigError("unknown family '" + name + "' (see `families list`)", "family.name");
}

PerturbationFamily build_family(const Config& cfg, std::uint64_t seed) {
  const FamilyInfo& info = find_family(cfg.string("family.name"));
  PerturbationFamily f = info.build(cfg, seed);
  f.name = info.name;
  const FieldRole role = parse_role(cfg.string("family.role", "V"));
  if (role != FieldRole::V) f = with_role(f, role);
  return f;
}

OperatorSpec build_operator(const Config& cfg, const PerturbationFamily& family) {
  if (family.dim() != 1) throw ConfigError("operator studies need a one-dimensional family", "family.name");
  const double a = cfg.number("operator.a", family.domain.lo(0));
  const double b = cfg.number("operator.b", family.domain.hi(0));
  const std::string bc = cfg.string("operator.bc", "dirichlet");
  OperatorSpec s = OperatorSpec::laplacian(a, b, family.ncomp, parse_boundary(bc));
  const int n = family.ncomp;
  const double a11 = cfg.number("operator.a11", 1.0);
  if (!(a11 > 0.0)) throw ConfigError("operator.a11 must be positive", "operator.a11");
  s.A11 = CoefficientField::identity(1, n, a11);
  auto constant = [&](const char* key) {
    const double v = cfg.number(key, 0.0);
    return v == 0.0 ? CoefficientField::zero(1, n) : CoefficientField::identity(1, n, v);
  };
  s.Aplus = constant("operator.aplus");
  s.Aminus = constant("operator.aminus");
  s.A0 = constant("operator.a0");
  s.Ka = CoeffMatrix::Identity(n, n) * cfg.number("operator.robin_a", 0.0);
  s.Kb = CoeffMatrix::Identity(n, n) * cfg.number("operator.robin_b", 0.0);
  s.c1 = a11;
  s.validate();
  return s;
}

std::string describe_families() {
  std::ostringstream out;
  for (const auto& f : family_registry()) {
    out << f.name << (f.one_dimensional ? "" : "  [criterion only]") << "\n  " << f.summary << "\n";
    for (const auto& p : f.params) out << fmt::format("    {:<22} default {:<15} {}\n", p.key, p.fallback, p.help);
  }
  out << "Every family also accepts family.role = V | Q | P.\n";
  return out.str();
}

}  // namespace homlab::study
