#include "homlab/fem.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

#include "homlab/lattice.hpp"
#include "homlab/parallel.hpp"
#include "homlab/random.hpp"

namespace homlab {

BoundaryKind parse_boundary(const std::string& name) {
  if (name == "dirichlet") return BoundaryKind::Dirichlet;
  if (name == "robin") return BoundaryKind::Robin;
  throw InvalidArgument("unknown boundary kind '" + name + "' (expected dirichlet or robin)");
}

OperatorSpec OperatorSpec::laplacian(double a, double b, int ncomp, BoundaryKind bc) {
  OperatorSpec s;
  s.domain = Box::interval(a, b);
  s.ncomp = ncomp;
  s.A11 = CoefficientField::identity(1, ncomp);
  s.Aplus = CoefficientField::zero(1, ncomp);
  s.Aminus = CoefficientField::zero(1, ncomp);
  s.A0 = CoefficientField::zero(1, ncomp);
  s.bc = bc;
  s.Ka = CoeffMatrix::Zero(ncomp, ncomp);
  s.Kb = CoeffMatrix::Zero(ncomp, ncomp);
  s.c1 = 1.0;
  return s;
}

void OperatorSpec::validate(int samples, std::uint64_t seed) const {
  if (domain.dim() != 1 || !(domain.hi(0) > domain.lo(0))) throw InvalidArgument("operator domain must be an interval");
  if (!(c1 > 0.0)) throw InvalidArgument("ellipticity constant c1 must be positive");
  for (const CoefficientField* f : {&A11, &Aplus, &Aminus, &A0}) {
    if (!f->valid() || f->dim() != 1 || f->ncomp() != ncomp) {
      throw InvalidArgument("operator coefficients must be 1D fields with ncomp components");
    }
  }
  if (bc == BoundaryKind::Robin && (Ka.rows() != ncomp || Kb.rows() != ncomp)) {
    throw InvalidArgument("Robin matrices must be ncomp x ncomp");
  }
  std::mt19937_64 rng(seed);
  for (int s = 0; s < samples; ++s) {
    const double x = uniform(rng, domain.lo(0), domain.hi(0));
    const CVector z = random_complex_vector(rng, ncomp);
    const double lhs = (z.adjoint() * A11(x) * z)(0).real();
    if (lhs < c1 * z.squaredNorm() * (1.0 - 1e-12)) {
      throw InvalidArgument("A11 violates the ellipticity bound Re(A11 z, z) >= c1 |z|^2");
    }
  }
}

Mesh build_mesh(double a, double b, int N) {
  if (!(b > a)) throw InvalidArgument("mesh interval is degenerate");
  if (N < 2) throw InvalidArgument("mesh needs at least 2 elements");
  Mesh m;
  m.nodes.resize(static_cast<std::size_t>(N) + 1);
  for (int i = 0; i <= N; ++i) m.nodes[i] = a + (b - a) * static_cast<double>(i) / N;
  m.nodes.back() = b;
  return m;
}

int mesh_elements_for(double eps, double factor, int min_elements, int max_dofs, int ncomp) {
  if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
  const double wanted = std::ceil(factor / eps);
  const int cap = max_dofs / ncomp - 1;
  return static_cast<int>(std::clamp(wanted, static_cast<double>(min_elements), static_cast<double>(cap)));
}

DiscreteOperator::DiscreteOperator(Mesh mesh, int ncomp, BoundaryKind bc)
    : mesh_(std::move(mesh)), ncomp_(ncomp), bc_(bc) {
  if (mesh_.elements() < 2) throw InvalidArgument("mesh needs at least 2 elements");
  if (ncomp < 1 || ncomp > kMaxComponents) throw InvalidArgument("component count must be in [1, 4]");
  size_ = static_cast<Index>(last_node() - first_node() + 1) * ncomp_;
  const CoefficientField id = CoefficientField::identity(1, ncomp_);
  M_ = assemble({{id, false, false, 1.0}}, 1);
  S_ = assemble({{id, true, true, 1.0}, {id, false, false, 1.0}}, 1);
  auto factor = std::make_shared<GramFactor>(S_);
  if (factor->info() != Eigen::Success) throw NumericalError("H1 Gram matrix factorization failed");
  S_factor_ = std::move(factor);
}

Index DiscreteOperator::dof(int node, int comp) const {
  if (node < first_node() || node > last_node()) return -1;
  return static_cast<Index>(node - first_node()) * ncomp_ + comp;
}

CVector DiscreteOperator::solve_gram(const CVector& f) const { return S_factor_->solve(f); }

CSparse DiscreteOperator::assemble(const std::vector<Term>& terms, int quad_refine) const {
  if (quad_refine < 1) throw InvalidArgument("quadrature refine must be >= 1");
  for (const auto& t : terms) {
    if (!t.field.valid() || t.field.ncomp() != ncomp_ || t.field.dim() != 1) {
      throw InvalidArgument("form coefficient has the wrong shape");
    }
  }
  const int E = mesh_.elements();
  const int n = ncomp_;
  // blocks[e][2 * i + j]: test node i, trial node j of element e.
  std::vector<std::array<CoeffMatrix, 4>> blocks(static_cast<std::size_t>(E));

  parallel_for(static_cast<std::size_t>(E), [&](std::size_t e) {
    const double x0 = mesh_.nodes[e];
    const double h = mesh_.nodes[e + 1] - x0;
    std::array<CoeffMatrix, 4> local;
    for (auto& b : local) b = CoeffMatrix::Zero(n, n);
    const double panel = 1.0 / quad_refine;
    for (int p = 0; p < quad_refine; ++p) {
      for (int g = 0; g < 4; ++g) {
        const double t = (p + GaussLegendre4::nodes[g]) * panel;
        const double w = GaussLegendre4::weights[g] * panel * h;
        const double x = x0 + t * h;
        const std::array<double, 2> phi{1.0 - t, t};
        const std::array<double, 2> dphi{-1.0 / h, 1.0 / h};
        for (const auto& term : terms) {
          if (term.field.is_zero()) continue;
          const CoeffMatrix c = term.field(x);
          for (int i = 0; i < 2; ++i) {
            const double test = term.test_derivative ? dphi[i] : phi[i];
            for (int j = 0; j < 2; ++j) {
              const double trial = term.trial_derivative ? dphi[j] : phi[j];
              local[2 * i + j] += (term.sign * w * test * trial) * c;
            }
          }
        }
      }
    }
    blocks[e] = local;
  });

  std::vector<Eigen::Triplet<Complex>> triplets;
  triplets.reserve(static_cast<std::size_t>(E) * 4 * n * n);
  for (int e = 0; e < E; ++e) {
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        const CoeffMatrix& b = blocks[e][2 * i + j];
        for (int a = 0; a < n; ++a) {
          const Index row = dof(e + i, a);
          if (row < 0) continue;
          for (int c = 0; c < n; ++c) {
            const Index col = dof(e + j, c);
            if (col < 0 || b(a, c) == Complex(0.0)) continue;
            triplets.emplace_back(row, col, b(a, c));
          }
        }
      }
    }
  }
  CSparse m(size_, size_);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

CSparse assemble_base(const OperatorSpec& spec, const DiscreteOperator& op, int quad_refine) {
  if (spec.ncomp != op.ncomp() || spec.bc != op.bc()) throw InvalidArgument("operator spec and discretization differ");
  CSparse g = op.assemble({{spec.A11, true, true, 1.0},
                           {spec.Aplus, true, false, 1.0},
                           {spec.Aminus, false, true, -1.0},
                           {spec.A0, false, false, 1.0}},
                          quad_refine);
  if (spec.bc == BoundaryKind::Robin) {
    const int n = spec.ncomp;
    const int last = op.mesh().elements();
    for (int a = 0; a < n; ++a) {
      for (int c = 0; c < n; ++c) {
        if (spec.Ka(a, c) != Complex(0.0)) g.coeffRef(op.dof(0, a), op.dof(0, c)) += spec.Ka(a, c);
        if (spec.Kb(a, c) != Complex(0.0)) g.coeffRef(op.dof(last, a), op.dof(last, c)) += spec.Kb(a, c);
      }
    }
    g.makeCompressed();
  }
  return g;
}

CSparse assemble_perturbation(const FieldTriple& fields, const DiscreteOperator& op, int quad_refine) {
  if (fields.dim() != 1) throw InvalidArgument("perturbation assembly is one-dimensional");
  if (fields.ncomp() != op.ncomp()) throw InvalidArgument("perturbation fields have the wrong component count");
  std::vector<DiscreteOperator::Term> terms{{fields.V, false, false, 1.0}};
  if (!fields.Q.empty()) terms.push_back({fields.Q.at(0), true, false, 1.0});
  if (!fields.P.empty()) terms.push_back({fields.P.at(0), false, true, -1.0});
  return op.assemble(terms, quad_refine);
}

CSparse assemble_weighted_gram(const CoefficientField& w, const DiscreteOperator& op, int quad_refine) {
  return op.assemble({{w.adjoint() * w, false, false, 1.0}}, quad_refine);
}

CVector load_vector(const std::function<CVector(double)>& f, const DiscreteOperator& op, int quad_refine) {
  const Mesh& mesh = op.mesh();
  const int n = op.ncomp();
  CVector out = CVector::Zero(op.size());
  const double panel = 1.0 / quad_refine;
  for (int e = 0; e < mesh.elements(); ++e) {
    const double x0 = mesh.nodes[e];
    const double h = mesh.nodes[e + 1] - x0;
    for (int p = 0; p < quad_refine; ++p) {
      for (int g = 0; g < 4; ++g) {
        const double t = (p + GaussLegendre4::nodes[g]) * panel;
        const double w = GaussLegendre4::weights[g] * panel * h;
        const CVector v = f(x0 + t * h);
        for (int i = 0; i < 2; ++i) {
          const double phi = i == 0 ? 1.0 - t : t;
          for (int c = 0; c < n; ++c) {
            const Index k = op.dof(e + i, c);
            if (k >= 0) out(k) += w * phi * v(c);
          }
        }
      }
    }
  }
  return out;
}

CVector interpolate(const std::function<CVector(double)>& f, const DiscreteOperator& op) {
  CVector out(op.size());
  for (int node = op.first_node(); node <= op.last_node(); ++node) {
    const CVector v = f(op.mesh().nodes[node]);
    for (int c = 0; c < op.ncomp(); ++c) out(op.dof(node, c)) = v(c);
  }
  return out;
}

namespace {

int locate(const Mesh& mesh, double x) {
  const int e = static_cast<int>(std::floor((x - mesh.a()) / mesh.h()));
  return std::clamp(e, 0, mesh.elements() - 1);
}

Complex nodal(const DiscreteOperator& op, const CVector& u, int node, int c) {
  const Index k = op.dof(node, c);
  return k < 0 ? Complex(0.0) : u(k);
}

}  // namespace

CVector fe_value(const DiscreteOperator& op, const CVector& u, double x) {
  const Mesh& mesh = op.mesh();
  const int e = locate(mesh, x);
  const double t = (x - mesh.nodes[e]) / (mesh.nodes[e + 1] - mesh.nodes[e]);
  CVector v(op.ncomp());
  for (int c = 0; c < op.ncomp(); ++c) v(c) = (1.0 - t) * nodal(op, u, e, c) + t * nodal(op, u, e + 1, c);
  return v;
}

CVector fe_derivative(const DiscreteOperator& op, const CVector& u, double x) {
  const Mesh& mesh = op.mesh();
  const int e = locate(mesh, x);
  const double h = mesh.nodes[e + 1] - mesh.nodes[e];
  CVector v(op.ncomp());
  for (int c = 0; c < op.ncomp(); ++c) v(c) = (nodal(op, u, e + 1, c) - nodal(op, u, e, c)) / h;
  return v;
}

double fe_norm_h1(const DiscreteOperator& op, const CVector& u) {
  return std::sqrt(std::max(0.0, u.dot(op.gram_h1() * u).real()));
}

double fe_norm_l2(const DiscreteOperator& op, const CVector& u) {
  return std::sqrt(std::max(0.0, u.dot(op.gram_l2() * u).real()));
}

double fe_dual_norm(const DiscreteOperator& op, const CVector& f) {
  return std::sqrt(std::max(0.0, f.dot(op.solve_gram(f)).real()));
}

double h1_error(const DiscreteOperator& op, const CVector& u, const std::function<CVector(double)>& exact,
                const std::function<CVector(double)>& exact_derivative, int quad_refine) {
  const Mesh& mesh = op.mesh();
  double total = 0.0;
  const double panel = 1.0 / quad_refine;
  for (int e = 0; e < mesh.elements(); ++e) {
    const double x0 = mesh.nodes[e];
    const double h = mesh.nodes[e + 1] - x0;
    for (int p = 0; p < quad_refine; ++p) {
      for (int g = 0; g < 4; ++g) {
        const double t = (p + GaussLegendre4::nodes[g]) * panel;
        const double w = GaussLegendre4::weights[g] * panel * h;
        const double x = x0 + t * h;
        // Evaluate inside the element so the derivative is the element's.
        CVector val(op.ncomp()), der(op.ncomp());
        for (int c = 0; c < op.ncomp(); ++c) {
          const Complex ul = nodal(op, u, e, c);
          const Complex ur = nodal(op, u, e + 1, c);
          val(c) = (1.0 - t) * ul + t * ur;
          der(c) = (ur - ul) / h;
        }
        total += w * ((val - exact(x)).squaredNorm() + (der - exact_derivative(x)).squaredNorm());
      }
    }
  }
  return std::sqrt(total);
}

CSparse hermitian_part(const CSparse& g) {
  CSparse adj = g.adjoint();
  CSparse h = 0.5 * (g + adj);
  h.makeCompressed();
  return h;
}

void write_matrix(std::ostream& out, const CSparse& m) {
  out << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
  out.precision(17);
  for (Index k = 0; k < m.outerSize(); ++k) {
    for (CSparse::InnerIterator it(m, k); it; ++it) {
      out << it.row() << ' ' << it.col() << ' ' << it.value().real() << ' ' << it.value().imag() << '\n';
    }
  }
}

}  // namespace homlab
