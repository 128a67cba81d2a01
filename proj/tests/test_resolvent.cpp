#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "homlab/resolvent.hpp"
#include "support.hpp"

using namespace homlab;
using test::dense;

namespace {

IterationOptions tight() {
  IterationOptions o;
  o.tol = 1e-12;
  return o;
}

std::shared_ptr<const DiscreteOperator> dirichlet_op(int N, int ncomp = 1, double a = 0, double b = 1) {
  return std::make_shared<const DiscreteOperator>(build_mesh(a, b, N), ncomp, BoundaryKind::Dirichlet);
}

// Context with G0 = S and Geps = S + L for a random L scaled so that
// ||L R0||_{V* -> V*} = q.
ResolventContext random_contraction(std::mt19937_64& rng, std::shared_ptr<const DiscreteOperator> op, double q) {
  const CMatrix s = dense(op->gram_h1());
  CMatrix l = random_complex_matrix(rng, op->size(), op->size());
  l *= q / test::dense_induced_norm(l * s.inverse(), s.inverse(), s.inverse());
  const CSparse zero(op->size(), op->size());
  return ResolventContext(op, op->gram_h1(), zero, CSparse(l.sparseView()), 0.0);
}

CMatrix dense_partial_sum(const CMatrix& r0, const CMatrix& l, int N) {
  CMatrix sum = CMatrix::Zero(r0.rows(), r0.cols());
  CMatrix term = CMatrix::Identity(r0.rows(), r0.cols());
  for (int j = 0; j <= N; ++j) {
    sum += term;
    term = (-l * r0) * term;
  }
  return r0 * sum;
}

PerturbationFamily sine_potential(double amplitude = 1.0) {
  TwoScaleField v{[amplitude](const Point&, const Point& xi) { return CoeffMatrix::Constant(1, 1, amplitude * std::sin(xi(0))); },
                  1, std::abs(amplitude)};
  return make_periodic(v, point1(2 * M_PI), Box::interval(0, 1), CoefficientField::zero(1, 1));
}

StudySetup laplacian_setup(BoundaryKind bc = BoundaryKind::Dirichlet) {
  StudySetup s;
  s.spec = OperatorSpec::laplacian(0, 1, 1, bc);
  s.iteration = tight();
  return s;
}

}  // namespace

TEST(Solve, ZeroRightHandSide) {
  auto op = dirichlet_op(10);
  ResolventContext ctx(op, op->gram_h1(), CSparse(op->size(), op->size()), CSparse(op->size(), op->size()), 0.0);
  EXPECT_EQ(ctx.solve(Which::Eps, CVector::Zero(op->size())).norm(), 0.0);
}

TEST(Solve, GramOperatorInvertsGramImage) {
  std::mt19937_64 rng(1);
  auto op = dirichlet_op(12, 2);
  ResolventContext ctx(op, op->gram_h1(), CSparse(op->size(), op->size()), CSparse(op->size(), op->size()), 0.0);
  const CVector w = random_complex_vector(rng, op->size());
  EXPECT_LT((ctx.solve(Which::Zero, op->gram_h1() * w) - w).norm(), 1e-12 * w.norm());
}

TEST(Solve, ManufacturedSolutionConvergesInH1) {
  // -u'' + u = f with u = sin(pi x): f = (pi^2 + 1) sin(pi x)
  const auto exact = [](double x) { return CVector::Constant(1, std::sin(M_PI * x)); };
  const auto dexact = [](double x) { return CVector::Constant(1, M_PI * std::cos(M_PI * x)); };
  double prev = 0.0;
  Eigen::Vector4d log_h, log_err;
  int row = 0;
  for (int N : {8, 16, 32, 64}) {
    auto op = dirichlet_op(N);
    const CSparse base = assemble_base(OperatorSpec::laplacian(0, 1), *op, 1);
    ResolventContext ctx(op, base, CSparse(op->size(), op->size()), CSparse(op->size(), op->size()), -1.0);
    const CVector f =
        load_vector([](double x) { return CVector::Constant(1, (M_PI * M_PI + 1) * std::sin(M_PI * x)); }, *op, 2);
    const double err = h1_error(*op, ctx.solve(Which::Zero, f), exact, dexact);
    EXPECT_LT(err, 3.0 / N);
    if (prev > 0.0) {
      EXPECT_NEAR(prev / err, 2.0, 0.1);  // first order
    }
    prev = err;
    log_h(row) = std::log(1.0 / N);
    log_err(row++) = std::log(err);
  }
  // least-squares slope of log err against log h
  const Eigen::Vector4d dh = log_h.array() - log_h.mean();
  EXPECT_GE(dh.dot(log_err) / dh.squaredNorm(), 0.95);
}

TEST(NeumannSum, ZeroTermsIsLimitResolvent) {
  std::mt19937_64 rng(2);
  auto op = dirichlet_op(9);
  const auto ctx = random_contraction(rng, op, 0.4);
  const CVector f = random_complex_vector(rng, op->size());
  EXPECT_LT((neumann_sum(ctx, 0, f) - ctx.solve(Which::Zero, f)).norm(), 1e-14 * f.norm());
}

TEST(NeumannSum, VanishingPerturbationGivesLimitForEveryN) {
  std::mt19937_64 rng(3);
  auto op = dirichlet_op(9);
  ResolventContext ctx(op, op->gram_h1(), CSparse(op->size(), op->size()), CSparse(op->size(), op->size()), 0.0);
  const CVector f = random_complex_vector(rng, op->size());
  for (int N = 0; N <= 4; ++N) EXPECT_EQ((neumann_sum(ctx, N, f) - ctx.solve(Which::Zero, f)).norm(), 0.0);
}

TEST(NeumannSum, PartialSumsMatchDenseSeries) {
  std::mt19937_64 rng(4);
  auto op = dirichlet_op(5);
  ASSERT_EQ(op->size(), 4);
  const auto ctx = random_contraction(rng, op, 0.5);
  const CMatrix r0 = dense(ctx.G0()).inverse();
  const CMatrix l = dense(ctx.L());
  for (int trial = 0; trial < 5; ++trial) {
    const CVector f = random_complex_vector(rng, 4);
    for (int N = 0; N <= 6; ++N) {
      const CVector oracle = dense_partial_sum(r0, l, N) * f;
      EXPECT_LT((neumann_sum(ctx, N, f) - oracle).norm(), 1e-10 * oracle.norm());
      const CVector adj = dense_partial_sum(r0, l, N).adjoint() * f;
      EXPECT_LT((neumann_sum_adjoint(ctx, N, f) - adj).norm(), 1e-10 * adj.norm());
    }
    // the full series is the perturbed resolvent
    const CVector reps = dense(ctx.Geps()).inverse() * f;
    EXPECT_LT((neumann_sum(ctx, 60, f) - reps).norm(), 1e-10 * reps.norm());
  }
}

// R_{N+1} f = R0 (f - L R_N f).
TEST(NeumannSum, PartialSumRecursion) {
  std::mt19937_64 rng(12);
  auto setup = laplacian_setup(BoundaryKind::Robin);
  const auto d = discretize(sine_potential(2.0), 0.04, setup);
  ResolventContext ctx(d.op, d.base, d.X0, d.Xeps, study_lambda({d}, setup.lambda));
  const CVector f = random_complex_vector(rng, d.op->size());
  CVector prev = neumann_sum(ctx, 0, f);
  for (int N = 0; N < 6; ++N) {
    const CVector next = neumann_sum(ctx, N + 1, f);
    const CVector rec = ctx.solve(Which::Zero, CVector(f - ctx.L() * prev));
    EXPECT_LT((next - rec).norm(), 1e-12 * next.norm()) << "N = " << N;
    prev = next;
  }
}

// Real symmetric data and real lambda below lambda0: real right-hand sides
// give real solutions.
TEST(Solve, RealDataGivesRealSolutions) {
  std::mt19937_64 rng(5);
  for (auto bc : {BoundaryKind::Dirichlet, BoundaryKind::Robin}) {
    auto setup = laplacian_setup(bc);
    const auto d = discretize(sine_potential(1.5), 0.02, setup);
    ResolventContext ctx(d.op, d.base, d.X0, d.Xeps, study_lambda({d}, setup.lambda));
    for (int k = 0; k < 5; ++k) {
      const CVector f = random_complex_vector(rng, d.op->size()).real().cast<Complex>();
      for (Which w : {Which::Eps, Which::Zero}) {
        const CVector u = ctx.solve(w, f);
        EXPECT_LE(u.imag().norm(), 1e-10 * u.norm());
        const CVector ua = ctx.solve_adjoint(w, f);
        EXPECT_LE(ua.imag().norm(), 1e-10 * ua.norm());
      }
      EXPECT_LE(neumann_sum(ctx, 4, f).imag().norm(), 1e-10 * f.norm());
    }
  }
}

TEST(TruncationRemainder, EqualsResolventMinusPartialSum) {
  std::mt19937_64 rng(5);
  auto op = dirichlet_op(13, 2);
  const auto ctx = random_contraction(rng, op, 0.3);
  const CMatrix reps = dense(ctx.Geps()).inverse();
  const CMatrix r0 = dense(ctx.G0()).inverse();
  const CMatrix l = dense(ctx.L());
  const CVector f = random_complex_vector(rng, op->size());
  for (int N = 0; N <= 3; ++N) {
    const CMatrix d = reps - dense_partial_sum(r0, l, N);
    EXPECT_LT((truncation_remainder(ctx, N, f) - d * f).norm(), 1e-10 * (d * f).norm());
    EXPECT_LT((truncation_remainder_adjoint(ctx, N, f) - d.adjoint() * f).norm(), 1e-10 * (d.adjoint() * f).norm());
  }
}

TEST(TruncationStudy, VanishingPerturbation) {
  auto op = dirichlet_op(10);
  ResolventContext ctx(op, op->gram_h1(), CSparse(op->size(), op->size()), CSparse(op->size(), op->size()), 0.0);
  const auto st = truncation_study(ctx, 3);
  ASSERT_EQ(st.rows.size(), 4u);
  for (const auto& r : st.rows) EXPECT_EQ(r.error, 0.0);
  EXPECT_EQ(st.L_norm, 0.0);
}

TEST(TruncationStudy, RandomContractionAgainstDenseOracle) {
  std::mt19937_64 rng(6);
  auto op = dirichlet_op(21);
  const auto ctx = random_contraction(rng, op, 0.3);
  const CMatrix s = dense(op->gram_h1()), si = s.inverse();
  const CMatrix reps = dense(ctx.Geps()).inverse();
  const CMatrix r0 = dense(ctx.G0()).inverse();
  const CMatrix l = dense(ctx.L());
  const auto st = truncation_study(ctx, 4, tight());
  EXPECT_LT(test::rel(st.contraction, test::dense_induced_norm(l * r0, si, si)), 1e-8);
  EXPECT_LT(test::rel(st.L_norm, test::dense_induced_norm(l, s, si)), 1e-8);
  EXPECT_LT(test::rel(st.R0_norm, test::dense_induced_norm(r0, si, s)), 1e-8);
  EXPECT_DOUBLE_EQ(st.c2, std::max(1.0, st.R0_norm));
  for (const auto& row : st.rows) {
    const double oracle = test::dense_induced_norm(reps - dense_partial_sum(r0, l, row.N), si, s);
    EXPECT_LT(test::rel(row.error, oracle), 1e-8) << "N = " << row.N;
    // ||(R0 L)^(N+1) Reps|| <= ||R0||^(N+1) ||L||^(N+1) ||Reps||
    EXPECT_LE(row.error, std::pow(st.R0_norm * st.L_norm, row.N + 1) * st.Reps_norm * (1 + 1e-8));
    if (row.N >= 1) {
      EXPECT_LE(row.ratio, st.contraction * (1 + 1e-8));
    }
  }
}

TEST(TruncationStudy, OscillatingPotentialErrorsDecrease) {
  auto setup = laplacian_setup();
  const auto d = discretize(sine_potential(), 0.05, setup);
  const double lambda = study_lambda({d}, setup.lambda);
  ResolventContext ctx(d.op, d.base, d.X0, d.Xeps, lambda);
  const auto st = truncation_study(ctx, 4, tight());
  for (std::size_t i = 1; i < st.rows.size(); ++i) EXPECT_LT(st.rows[i].error, st.rows[i - 1].error);
  for (const auto& r : st.rows) EXPECT_LE(r.error, r.bound);
}

TEST(ResolventIdentity, HoldsForOscillatingPotential) {
  std::mt19937_64 rng(7);
  auto setup = laplacian_setup();
  const auto d = discretize(sine_potential(3.0), 0.02, setup);
  ResolventContext ctx(d.op, d.base, d.X0, d.Xeps, study_lambda({d}, setup.lambda));
  for (int k = 0; k < 20; ++k) {
    const CVector f = random_complex_vector(rng, d.op->size());
    const CVector reps = ctx.solve(Which::Eps, f);
    const CVector lhs = reps - ctx.solve(Which::Zero, f);
    const CVector rhs = -ctx.solve(Which::Zero, ctx.L() * reps);
    EXPECT_LT((lhs - rhs).norm(), 1e-10 * reps.norm());
  }
}

// Fine mesh, condition number near 1e7: the identity only survives if
// Geps - G0 reproduces L to the last bit.
TEST(ResolventIdentity, ExactOnFineMesh) {
  std::mt19937_64 rng(11);
  auto setup = laplacian_setup(BoundaryKind::Robin);
  const auto d = discretize(sine_potential(1.0), 0.003, setup);
  ASSERT_GT(d.op->size(), 2000);
  ResolventContext ctx(d.op, d.base, d.X0, d.Xeps, study_lambda({d}, setup.lambda));
  EXPECT_EQ(CSparse(ctx.Geps() - ctx.G0() - ctx.L()).norm(), 0.0);
  for (int k = 0; k < 5; ++k) {
    const CVector f = random_complex_vector(rng, d.op->size());
    const CVector reps = ctx.solve(Which::Eps, f);
    const CVector lhs = reps - ctx.solve(Which::Zero, f);
    const CVector rhs = -ctx.solve(Which::Zero, ctx.L() * reps);
    EXPECT_LT((lhs - rhs).norm(), 1e-12 * reps.norm());
  }
}

TEST(Kappa, BoundedByProductOfFactors) {
  auto setup = laplacian_setup();
  for (double eps : {0.1, 0.03}) {
    const auto d = discretize(sine_potential(2.0), eps, setup);
    ResolventContext ctx(d.op, d.base, d.X0, d.Xeps, study_lambda({d}, setup.lambda));
    const double k = kappa(ctx.resolvent(Which::Eps), ctx.resolvent(Which::Zero), ctx.op(), tight()).value;
    const double r0 = resolvent_norm(ctx.resolvent(Which::Zero), ctx.op(), tight()).value;
    const double re = resolvent_norm(ctx.resolvent(Which::Eps), ctx.op(), tight()).value;
    const double ln = norm_v_to_vstar(ctx.L(), ctx.op(), tight()).value;
    EXPECT_GT(k, 0.0);
    EXPECT_LE(k, r0 * ln * re + 1e-8);
  }
}

TEST(ConvergenceStudy, IdenticalFamilyHasZeroKappa) {
  const auto v0 = CoefficientField::scalar(1, 1, [](const Point& x) { return Complex(x(0)); }, 1.0);
  auto fam = make_regular([v0](const EpsVector&) { return v0; }, v0, Box::interval(0, 1),
                          [](const EpsVector&) { return 0.0; });
  const auto st = convergence_study(fam, {0.1, 0.05, 0.025}, laplacian_setup());
  ASSERT_EQ(st.rows.size(), 3u);
  for (const auto& r : st.rows) {
    EXPECT_EQ(r.kappa, 0.0);
    EXPECT_EQ(r.L_norm, 0.0);
  }
}

TEST(ConvergenceStudy, RegularFamilyIsLinearInEps) {
  const auto v0 = CoefficientField::scalar(1, 1, [](const Point& x) { return Complex(std::cos(x(0))); }, 1.0);
  auto fam = make_regular(
      [v0](const EpsVector& e) { return v0 + CoefficientField::identity(1, 1, e[0]); }, v0, Box::interval(0, 1),
      [](const EpsVector& e) { return e[0]; });
  auto setup = laplacian_setup();
  setup.mesh.fixed_elements = 64;
  const auto st = convergence_study(fam, {0.2, 0.1, 0.05, 0.025}, setup);
  const double c = st.rows.front().kappa / st.rows.front().eps;
  for (const auto& r : st.rows) {
    EXPECT_LE(r.kappa, 1.05 * c * r.eps);
    // ||L|| <= eps ||M||_{V -> V*} <= eps
    EXPECT_LE(r.L_norm, r.eps * (1 + 1e-8));
  }
}

TEST(ConvergenceStudy, OscillatingPotentialWithinCalibratedSqrtBound) {
  const std::vector<double> sched{0.1, 0.05, 0.025, 0.0125};
  const auto st = convergence_study(sine_potential(), sched, laplacian_setup());
  const double c = st.rows.front().kappa / std::sqrt(sched.front());
  for (const auto& r : st.rows) EXPECT_LE(r.kappa, c * std::sqrt(r.eps) * (1 + 1e-8));
  ASSERT_TRUE(st.coercivity.has_value());
  EXPECT_GT(st.coercivity->c4, 0.0);
}

TEST(L2H1Check, DecayingGradientPerturbation) {
  // P^eps = eps sin(x/eps): the first-order term vanishes as eps -> 0
  TwoScaleField v{[](const Point&, const Point& xi) { return CoeffMatrix::Constant(1, 1, std::sin(xi(0))); }, 1, 1.0};
  auto base = with_role(make_periodic(v, point1(2 * M_PI), Box::interval(0, 1), CoefficientField::zero(1, 1)),
                        FieldRole::P);
  PerturbationFamily fam = base;
  auto at = base.at;
  fam.at = [at](const EpsVector& e) {
    FieldTriple t = at(e);
    t.P[0] = Complex(e[0]) * t.P[0];
    return t;
  };
  const auto chk = l2_to_h1_check(fam, {0.1, 0.05, 0.025, 0.0125}, laplacian_setup());
  for (std::size_t i = 1; i < chk.rows.size(); ++i) EXPECT_LT(chk.rows[i].lhs, chk.rows[i - 1].lhs);
  EXPECT_TRUE(chk.bound_holds);
}

TEST(L2H1Check, NonDecayingGradientTermKeepsSquareMean) {
  TwoScaleField v{[](const Point&, const Point& xi) { return CoeffMatrix::Constant(1, 1, std::sin(xi(0))); }, 1, 1.0};
  auto fam = with_role(make_periodic(v, point1(2 * M_PI), Box::interval(0, 1), CoefficientField::zero(1, 1)),
                       FieldRole::P);
  CriterionOptions opt;
  opt.role = FieldRole::P;
  // the witness: rho3 of the P slot stays near 1/2
  for (double eps : {1e-2, 1e-3}) EXPECT_NEAR(evaluate_criteria(fam, eps, std::sqrt(eps), opt).rho3, 0.5, 0.05);
}
