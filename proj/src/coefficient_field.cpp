#include "homlab/coefficient_field.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace homlab {

CoefficientField::CoefficientField(int dim, int ncomp, Eval eval, double sup_bound)
    : dim_(dim), ncomp_(ncomp), eval_(std::move(eval)), sup_bound_(sup_bound) {
  if (dim < 1 || dim > kMaxDim) throw InvalidArgument("field dimension must be in [1, 3]");
  if (ncomp < 1 || ncomp > kMaxComponents) throw InvalidArgument("component count must be in [1, 4]");
  if (!eval_) throw InvalidArgument("field needs an evaluator");
  if (!(sup_bound >= 0.0) || !std::isfinite(sup_bound)) throw InvalidArgument("field sup bound must be finite");
}

CoefficientField CoefficientField::constant(int dim, const CoeffMatrix& value) {
  if (value.rows() != value.cols()) throw InvalidArgument("constant field must be square");
  CoefficientField f(dim, static_cast<int>(value.rows()), [value](const Point&) { return value; },
                     entry_norm(value));
  f.zero_ = value.isZero(0.0);
  return f;
}

CoefficientField CoefficientField::zero(int dim, int ncomp) {
  return constant(dim, CoeffMatrix::Zero(ncomp, ncomp));
}

CoefficientField CoefficientField::identity(int dim, int ncomp, Complex scale) {
  CoeffMatrix m = scale * CoeffMatrix::Identity(ncomp, ncomp);
  return constant(dim, m);
}

CoefficientField CoefficientField::scalar(int dim, int ncomp, std::function<Complex(const Point&)> f,
                                          double sup_abs_f) {
  return CoefficientField(
      dim, ncomp,
      [f = std::move(f), ncomp](const Point& x) {
        return CoeffMatrix(f(x) * CoeffMatrix::Identity(ncomp, ncomp));
      },
      sup_abs_f * ncomp);
}

CoefficientField CoefficientField::adjoint() const {
  CoefficientField out(dim_, ncomp_, [e = eval_](const Point& x) { return CoeffMatrix(e(x).adjoint()); },
                       sup_bound_);
  out.zero_ = zero_;
  return out;
}

namespace {
void check_compatible(const CoefficientField& a, const CoefficientField& b) {
  if (a.dim() != b.dim() || a.ncomp() != b.ncomp()) {
    throw InvalidArgument("fields differ in dimension or component count");
  }
}
}  // namespace

CoefficientField operator+(const CoefficientField& a, const CoefficientField& b) {
  check_compatible(a, b);
  if (b.zero_) return a;
  if (a.zero_) return b;
  return CoefficientField(
      a.dim_, a.ncomp_, [ea = a.eval_, eb = b.eval_](const Point& x) { return CoeffMatrix(ea(x) + eb(x)); },
      a.sup_bound_ + b.sup_bound_);
}

CoefficientField operator-(const CoefficientField& a, const CoefficientField& b) {
  check_compatible(a, b);
  if (b.zero_) return a;
  return CoefficientField(
      a.dim_, a.ncomp_, [ea = a.eval_, eb = b.eval_](const Point& x) { return CoeffMatrix(ea(x) - eb(x)); },
      a.sup_bound_ + b.sup_bound_);
}

CoefficientField operator*(Complex c, const CoefficientField& a) {
  if (c == 0.0 || a.zero_) return CoefficientField::zero(a.dim_, a.ncomp_);
  return CoefficientField(
      a.dim_, a.ncomp_, [c, ea = a.eval_](const Point& x) { return CoeffMatrix(c * ea(x)); },
      std::abs(c) * a.sup_bound_);
}

CoefficientField operator*(const CoefficientField& a, const CoefficientField& b) {
  check_compatible(a, b);
  if (a.zero_ || b.zero_) return CoefficientField::zero(a.dim_, a.ncomp_);
  // |AB| <= |A| |B| holds for the entrywise sum norm.
  return CoefficientField(
      a.dim_, a.ncomp_, [ea = a.eval_, eb = b.eval_](const Point& x) { return CoeffMatrix(ea(x) * eb(x)); },
      a.sup_bound_ * b.sup_bound_);
}

double sampled_sup(const CoefficientField& field, const Box& box, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double best = 0.0;
  Point x(box.dim());
  for (int s = 0; s < samples; ++s) {
    for (int i = 0; i < box.dim(); ++i) x(i) = box.lo(i) + u(rng) * (box.hi(i) - box.lo(i));
    best = std::max(best, entry_norm(field(x)));
  }
  return best;
}

double sup_deviation(const CoefficientField& a, const CoefficientField& b, const Box& box,
                     int points_per_axis) {
  const int d = box.dim();
  long total = 1;
  for (int i = 0; i < d; ++i) total *= points_per_axis;
  double best = 0.0;
  Point x(d);
  for (long flat = 0; flat < total; ++flat) {
    long rem = flat;
    for (int i = 0; i < d; ++i) {
      const double t = static_cast<double>(rem % points_per_axis) / (points_per_axis - 1);
      rem /= points_per_axis;
      x(i) = box.lo(i) + t * (box.hi(i) - box.lo(i));
    }
    best = std::max(best, entry_norm(a(x) - b(x)));
  }
  return best;
}

FieldTriple FieldTriple::potential(CoefficientField v) {
  FieldTriple t;
  const int d = v.dim();
  const int n = v.ncomp();
  t.V = std::move(v);
  t.Q.assign(d, CoefficientField::zero(d, n));
  t.P.assign(d, CoefficientField::zero(d, n));
  return t;
}

FieldTriple FieldTriple::zero(int dim, int ncomp) {
  return potential(CoefficientField::zero(dim, ncomp));
}

FieldTriple FieldTriple::operator-(const FieldTriple& other) const {
  FieldTriple t;
  t.V = V - other.V;
  for (std::size_t j = 0; j < Q.size(); ++j) t.Q.push_back(Q[j] - other.Q.at(j));
  for (std::size_t j = 0; j < P.size(); ++j) t.P.push_back(P[j] - other.P.at(j));
  return t;
}

double FieldTriple::sup_bound() const {
  double b = V.sup_bound();
  for (const auto& q : Q) b = std::max(b, q.sup_bound());
  for (const auto& p : P) b = std::max(b, p.sup_bound());
  return b;
}

FieldRole parse_role(const std::string& name) {
  if (name == "V" || name == "v") return FieldRole::V;
  if (name == "Q" || name == "q") return FieldRole::Q;
  if (name == "P" || name == "p") return FieldRole::P;
  throw InvalidArgument("unknown field role '" + name + "' (expected V, Q or P)");
}

std::string role_name(FieldRole role) {
  switch (role) {
    case FieldRole::V: return "V";
    case FieldRole::Q: return "Q";
    case FieldRole::P: return "P";
  }
  return "?";
}

const CoefficientField& field_in_role(const FieldTriple& triple, FieldRole role) {
  switch (role) {
    case FieldRole::Q: return triple.Q.at(0);
    case FieldRole::P: return triple.P.at(0);
    case FieldRole::V: break;
  }
  return triple.V;
}

void PerturbationFamily::validate(double probe_eps) const {
  if (!at || !rate || !finest_scale || !path) throw InvalidArgument("family '" + name + "' is incomplete");
  const FieldTriple probe = at_scalar(probe_eps);
  auto same_shape = [](const FieldTriple& a, const FieldTriple& b) {
    if (a.dim() != b.dim() || a.ncomp() != b.ncomp()) return false;
    if (a.Q.size() != b.Q.size() || a.P.size() != b.P.size()) return false;
    for (std::size_t j = 0; j < a.Q.size(); ++j) {
      if (a.Q[j].ncomp() != b.Q[j].ncomp() || a.P[j].ncomp() != b.P[j].ncomp()) return false;
    }
    return true;
  };
  if (!same_shape(probe, limit)) {
    throw InvalidArgument("family '" + name + "': limit fields do not match the family's dim/ncomp");
  }
  if (probe.dim() != domain.dim()) throw InvalidArgument("family '" + name + "': domain dimension mismatch");
}

std::function<EpsVector(double)> diagonal_path(int m) {
  return [m](double eps) { return EpsVector(static_cast<std::size_t>(m), eps); };
}

}  // namespace homlab
