#pragma once

#include <memory>
#include <vector>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "homlab/coefficient_field.hpp"

namespace homlab {

enum class BoundaryKind { Dirichlet, Robin };

BoundaryKind parse_boundary(const std::string& name);

/// Second-order operator on an interval:
///   h(u,v) = int A11 u'.v' + A+ u'.v - A- u.v' + A0 u.v  (+ K_a u(a).v(a) + K_b u(b).v(b) for Robin)
/// where p.q denotes q* p.
struct OperatorSpec {
  Box domain = Box::interval(0.0, 1.0);
  int ncomp = 1;
  CoefficientField A11;
  CoefficientField Aplus;
  CoefficientField Aminus;
  CoefficientField A0;
  BoundaryKind bc = BoundaryKind::Dirichlet;
  CoeffMatrix Ka;
  CoeffMatrix Kb;
  /// Ellipticity constant: Re (A11 z, z) >= c1 |z|^2.
  double c1 = 1.0;

  /// -u'' with the given boundary condition (Robin with K = 0 is Neumann).
  static OperatorSpec laplacian(double a, double b, int ncomp = 1, BoundaryKind bc = BoundaryKind::Dirichlet);

  /// Checks shapes, boundedness and the ellipticity inequality at `samples`
  /// random (x, z).
  void validate(int samples = 1000, std::uint64_t seed = 7) const;
};

struct Mesh {
  std::vector<double> nodes;

  int elements() const { return static_cast<int>(nodes.size()) - 1; }
  double a() const { return nodes.front(); }
  double b() const { return nodes.back(); }
  double h() const { return (b() - a()) / elements(); }
};

/// N + 1 equispaced nodes on [a, b], N >= 2.
Mesh build_mesh(double a, double b, int N);

/// Elements needed by the resolution rule N >= factor / eps, clamped so that
/// the dof count stays below `max_dofs`.
int mesh_elements_for(double eps, double factor = 16.0, int min_elements = 16, int max_dofs = 8192, int ncomp = 1);

/// Vector P1 discretization with node-major dof ordering (node * n + component);
/// Dirichlet removes the end nodes.
class DiscreteOperator {
 public:
  using GramFactor = Eigen::SimplicialLLT<CSparse, Eigen::Lower>;

  DiscreteOperator(Mesh mesh, int ncomp, BoundaryKind bc);

  const Mesh& mesh() const { return mesh_; }
  int ncomp() const { return ncomp_; }
  BoundaryKind bc() const { return bc_; }
  Index size() const { return size_; }
  int first_node() const { return bc_ == BoundaryKind::Dirichlet ? 1 : 0; }
  int last_node() const { return bc_ == BoundaryKind::Dirichlet ? mesh_.elements() - 1 : mesh_.elements(); }
  /// Dof index of (node, component), or -1 for a constrained node.
  Index dof(int node, int comp) const;

  /// H1 Gram matrix S = stiffness + mass, and its factorization.
  const CSparse& gram_h1() const { return S_; }
  /// L2 Gram matrix M.
  const CSparse& gram_l2() const { return M_; }
  const GramFactor& gram_factor() const { return *S_factor_; }

  CVector solve_gram(const CVector& f) const;

  /// Matrix of a form sum_k int C_k(x) D_k(phi_j) . D'_k(phi_i) with entry (i, j)
  /// the form evaluated on (trial phi_j, test phi_i).
  struct Term {
    CoefficientField field;
    bool trial_derivative = false;
    bool test_derivative = false;
    double sign = 1.0;
  };
  CSparse assemble(const std::vector<Term>& terms, int quad_refine) const;

 private:
  Mesh mesh_;
  int ncomp_;
  BoundaryKind bc_;
  Index size_ = 0;
  CSparse S_;
  CSparse M_;
  std::shared_ptr<const GramFactor> S_factor_;
};

/// Base form h of the operator spec (without the shift lambda).
CSparse assemble_base(const OperatorSpec& spec, const DiscreteOperator& op, int quad_refine);

/// Perturbation <X u, v> = sum_j (Q_j u', v) - sum_j (P_j u, v') + (V u, v).
CSparse assemble_perturbation(const FieldTriple& fields, const DiscreteOperator& op, int quad_refine);

/// Gram matrix int (W phi_j, W phi_i) = int phi_j phi_i W* W; its largest
/// eigenvalue against S is the squared multiplier norm into L2.
CSparse assemble_weighted_gram(const CoefficientField& w, const DiscreteOperator& op, int quad_refine);

/// Dual vector f_i = int f . phi_i for an n-vector valued f.
CVector load_vector(const std::function<CVector(double)>& f, const DiscreteOperator& op, int quad_refine);

/// Nodal interpolant restricted to the free dofs.
CVector interpolate(const std::function<CVector(double)>& f, const DiscreteOperator& op);

/// Value and derivative of the FE function u at x (constrained nodes are 0).
CVector fe_value(const DiscreteOperator& op, const CVector& u, double x);
CVector fe_derivative(const DiscreteOperator& op, const CVector& u, double x);

double fe_norm_h1(const DiscreteOperator& op, const CVector& u);
double fe_norm_l2(const DiscreteOperator& op, const CVector& u);
double fe_dual_norm(const DiscreteOperator& op, const CVector& f);

/// H1 distance between the FE function u and an exact solution given with its
/// derivative, by composite Gauss quadrature per element.
double h1_error(const DiscreteOperator& op, const CVector& u, const std::function<CVector(double)>& exact,
                const std::function<CVector(double)>& exact_derivative, int quad_refine = 2);

/// Hermitian part (G + G*) / 2.
CSparse hermitian_part(const CSparse& g);

/// Writes a sparse matrix as "rows cols nnz" then one "i j re im" line per entry.
void write_matrix(std::ostream& out, const CSparse& m);

}  // namespace homlab
