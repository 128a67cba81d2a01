#include "homlab/criteria.hpp"

#include <algorithm>
#include <cmath>

#include "homlab/parallel.hpp"

namespace homlab {

namespace {

// Accumulates int D and int |D|^2 in one pass.
struct DeviationSums {
  CoeffMatrix integral;
  double square = 0.0;

  DeviationSums& operator+=(const DeviationSums& o) {
    integral += o.integral;
    square += o.square;
    return *this;
  }
};

DeviationSums operator*(double w, const DeviationSums& s) { return {w * s.integral, w * s.square}; }

}  // namespace

CriterionReport evaluate_criteria(const PerturbationFamily& family, double eps, double eta,
                                  const CriterionOptions& options) {
  if (!(eta > 0.0)) throw InvalidArgument("eta must be positive");
  if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
  if (options.lattice.dim() != family.dim()) throw InvalidArgument("lattice dimension differs from the family");

  const CellIndexSet set = cells_inside(options.lattice, eta, family.domain);
  if (set.empty()) throw InvalidArgument("no lattice cell of size eta fits inside the domain; eta is too large");

  const EpsVector ev = family.path(eps);
  const FieldTriple at = family.at(ev);
  const CoefficientField dev = field_in_role(at, options.role) - field_in_role(family.limit, options.role);
  const int d = family.dim();
  const int n = family.ncomp;
  const double scale = std::pow(eta, -d);
  // Panels per axis from the longest cell edge.
  const double edge = eta * options.lattice.basis().colwise().norm().maxCoeff();
  const int refine = options.refine > 0
                         ? options.refine
                         : std::max(2, default_refine(edge, family.finest_scale(ev), options.panels_per_scale));

  struct CellResult {
    double r1 = 0.0, r3 = 0.0, e1 = 0.0, e3 = 0.0;
  };
  std::vector<CellResult> results(set.size());
  const bool zero = dev.is_zero();
  parallel_for(set.size(), [&](std::size_t c) {
    if (zero) return;
    const Cell cell = scaled_cell(options.lattice, eta, set.gammas[c]);
    auto f = [&](const Point& x) {
      const CoeffMatrix v = dev(x);
      const double a = entry_norm(v);
      return DeviationSums{v, a * a};
    };
    const DeviationSums init{CoeffMatrix::Zero(n, n), 0.0};
    const DeviationSums fine = integrate_cell(cell, refine, f, init);
    const DeviationSums coarse = integrate_cell(cell, std::max(1, refine / 2), f, init);
    results[c] = {scale * entry_norm(fine.integral), scale * fine.square,
                  scale * entry_norm(fine.integral - coarse.integral), scale * std::abs(fine.square - coarse.square)};
  });

  CriterionReport r;
  r.eps = eps;
  r.eta = eta;
  r.cells = set.size();
  r.refine = refine;
  r.argmax_rho1 = set.gammas.front();
  r.argmax_rho3 = set.gammas.front();
  // Reduction in cell order; ties keep the first cell.
  for (std::size_t c = 0; c < set.size(); ++c) {
    if (results[c].r1 > r.rho1) {
      r.rho1 = results[c].r1;
      r.argmax_rho1 = set.gammas[c];
    }
    if (results[c].r3 > r.rho3) {
      r.rho3 = results[c].r3;
      r.argmax_rho3 = set.gammas[c];
    }
    r.rho1_error = std::max(r.rho1_error, results[c].e1);
    r.rho3_error = std::max(r.rho3_error, results[c].e3);
  }
  r.bound_m1m1 = r.rho1 + eta;
  r.bound_m10 = std::sqrt(r.rho3) + std::sqrt(eta);
  return r;
}

std::vector<double> default_eta_grid(double eps) {
  std::vector<double> grid;
  for (double a : {0.3, 0.4, 0.5, 0.6, 0.7}) grid.push_back(std::pow(eps, a));
  return grid;
}

CriterionReport optimize_eta(const PerturbationFamily& family, double eps, const std::vector<double>& eta_grid,
                             EtaObjective objective, const CriterionOptions& options) {
  if (eta_grid.empty()) throw InvalidArgument("eta grid is empty");
  std::optional<CriterionReport> best;
  double best_value = 0.0;
  for (double eta : eta_grid) {
    if (cells_inside(options.lattice, eta, family.domain).empty()) continue;
    CriterionReport r = evaluate_criteria(family, eps, eta, options);
    const double value = objective == EtaObjective::M1m1 ? r.bound_m1m1 : r.bound_m10;
    const bool better = !best || value < best_value || (value == best_value && eta > best->eta);
    if (better) {
      best = r;
      best_value = value;
    }
  }
  if (!best) throw InvalidArgument("every eta in the grid leaves no cell inside the domain");
  return *best;
}

QuadratureResult window_mean(const CoefficientField& field, const Point& x, double mu, const Box& omega, int refine) {
  const Box window{x + mu * omega.lo, x + mu * omega.hi};
  return cell_mean(Cell::box(window), field, refine);
}

std::vector<Point> interior_grid(const Box& box, int per_axis) {
  if (per_axis < 1) throw InvalidArgument("sample grid needs at least one point per axis");
  const int d = box.dim();
  long total = 1;
  for (int i = 0; i < d; ++i) total *= per_axis;
  std::vector<Point> out;
  out.reserve(static_cast<std::size_t>(total));
  Point p(d);
  for (long flat = 0; flat < total; ++flat) {
    long rem = flat;
    for (int i = 0; i < d; ++i) {
      p(i) = box.lo(i) + (box.hi(i) - box.lo(i)) * static_cast<double>(rem % per_axis + 1) / (per_axis + 1);
      rem /= per_axis;
    }
    out.push_back(p);
  }
  return out;
}

LocalMeanResult local_mean_limit(const PerturbationFamily& family, const std::vector<double>& eps_schedule,
                                 const std::function<double(double)>& mu, const Box& omega,
                                 const std::vector<Point>& sample_points, FieldRole role, double panels_per_scale) {
  if (eps_schedule.size() < 2) throw InvalidArgument("local mean limit needs at least two schedule entries");
  if (!mu) throw InvalidArgument("local mean limit needs mu(eps)");
  if (omega.dim() != family.dim() || !(omega.measure() > 0.0)) throw InvalidArgument("omega must be a nonempty box");

  LocalMeanResult res;
  res.points = sample_points;
  res.skipped.assign(sample_points.size(), false);
  const std::size_t K = eps_schedule.size();
  res.means.assign(K, std::vector<CoeffMatrix>(sample_points.size()));
  const double tol = 1e-12 * std::max(1.0, family.domain.diameter());

  for (std::size_t k = 0; k < K; ++k) {
    const double e = eps_schedule[k];
    const double m = mu(e);
    if (!(m > 0.0)) throw InvalidArgument("mu(eps) must be positive");
    const EpsVector ev = family.path(e);
    const CoefficientField field = field_in_role(family.at(ev), role);
    const int refine = std::max(2, default_refine(m * omega.diameter(), family.finest_scale(ev), panels_per_scale));
    parallel_for(sample_points.size(), [&](std::size_t p) {
      const Point& x = sample_points[p];
      const Box window{x + m * omega.lo, x + m * omega.hi};
      if (!family.domain.contains(window.lo, tol) || !family.domain.contains(window.hi, tol)) return;
      res.means[k][p] = window_mean(field, x, m, omega, refine).value;
    });
    for (std::size_t p = 0; p < sample_points.size(); ++p) {
      const Point& x = sample_points[p];
      if (!family.domain.contains(x + m * omega.lo, tol) || !family.domain.contains(x + m * omega.hi, tol)) {
        res.skipped[p] = true;
      }
    }
  }

  auto deviation = [&](std::size_t a, std::size_t b) {
    double worst = 0.0;
    for (std::size_t p = 0; p < sample_points.size(); ++p) {
      if (!res.skipped[p]) worst = std::max(worst, entry_norm(res.means[a][p] - res.means[b][p]));
    }
    return worst;
  };
  for (std::size_t k = 0; k + 1 < K; ++k) res.rho2_by_eps.push_back(deviation(k, K - 1));
  res.rho2_by_eps.push_back(deviation(K - 1, K - 2));
  res.rho2 = res.rho2_by_eps.back();

  const double e = eps_schedule.back();
  const double m = mu(e);
  res.mu = m;
  const EpsVector ev = family.path(e);
  const CoefficientField field = field_in_role(family.at(ev), role);
  const int refine = std::max(2, default_refine(m * omega.diameter(), family.finest_scale(ev), panels_per_scale));
  res.candidate = CoefficientField(
      family.dim(), family.ncomp,
      [field, m, omega, refine](const Point& x) { return window_mean(field, x, m, omega, refine).value; },
      field.sup_bound());
  return res;
}

CoeffMatrix weyl_mean(const std::vector<TrigTerm>& terms, const Point& x, double r, const Point& gamma,
                      const Point& periods) {
  if (terms.empty()) throw InvalidArgument("trigonometric sum has no terms");
  const int n = terms.front().coefficient.ncomp();
  CoeffMatrix acc = CoeffMatrix::Zero(n, n);
  for (const auto& t : terms) acc += box_average_exponential(t.alpha, r, gamma, periods) * t.coefficient(x);
  return acc;
}

std::vector<WeylRow> weyl_mean_study(const std::vector<TrigTerm>& terms, const Point& x,
                                     const std::vector<double>& r_schedule, const std::vector<Point>& gammas,
                                     const Point& periods) {
  if (terms.empty()) throw InvalidArgument("trigonometric sum has no terms");
  const int n = terms.front().coefficient.ncomp();
  CoeffMatrix limit = CoeffMatrix::Zero(n, n);
  for (const auto& t : terms) {
    if (t.alpha.isZero(0.0)) limit += t.coefficient(x);
  }
  std::vector<WeylRow> rows;
  for (double r : r_schedule) {
    WeylRow row{r, 0.0};
    for (const auto& g : gammas) row.deviation = std::max(row.deviation, entry_norm(weyl_mean(terms, x, r, g, periods) - limit));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace homlab
