#include "homlab/eigen_iteration.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "homlab/random.hpp"

namespace homlab {

Metric Metric::euclidean(Index n) {
  auto id = [](const CVector& x) { return x; };
  return Metric{id, id, n};
}

Metric Metric::dense(const CMatrix& w) {
  auto llt = std::make_shared<Eigen::LLT<CMatrix>>(w);
  if (llt->info() != Eigen::Success) throw NumericalError("metric matrix is not positive definite");
  auto mat = std::make_shared<CMatrix>(w);
  return Metric{[mat](const CVector& x) -> CVector { return *mat * x; },
                [llt](const CVector& x) -> CVector { return llt->solve(x); }, w.rows()};
}

double Metric::norm(const CVector& x) const { return std::sqrt(std::max(0.0, x.dot(apply(x)).real())); }

std::string method_name(IterationMethod method) {
  return method == IterationMethod::Lanczos ? "lanczos" : "power";
}

namespace {

struct Eigenpair {
  double mu = 0.0;
  double residual = 0.0;  // relative
  int iterations = 0;
  bool converged = false;
  CVector x;
};

CVector start_vector(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_complex_vector(rng, n);
}

[[noreturn]] void budget_exhausted(const Eigenpair& e) {
  throw ConvergenceError("eigenvalue iteration did not converge within the iteration budget", e.x, e.mu,
                         e.residual);
}

// x <- W^{-1} B x with Rayleigh quotient and W-norm residual.
Eigenpair power(const LinearMap& B, const Metric& W, CVector x, const IterationOptions& opt, double zero_mu) {
  Eigenpair e;
  CVector z = W.apply(x);
  x /= std::sqrt(x.dot(z).real());
  for (;;) {
    const CVector y = B(x);
    ++e.iterations;
    z = W.solve(y);  // W^{-1} B x
    e.mu = std::max(0.0, x.dot(y).real());
    const CVector r = z - e.mu * x;
    const double rn = std::sqrt(std::max(0.0, r.dot(W.apply(r)).real()));
    e.x = x;
    if (e.mu <= zero_mu && rn <= zero_mu) {
      e.mu = 0.0;
      e.residual = 0.0;
      e.converged = true;
      return e;
    }
    e.residual = e.mu > 0.0 ? rn / e.mu : rn;
    if (e.residual <= opt.tol) {
      e.converged = true;
      return e;
    }
    if (e.iterations >= opt.max_iterations) budget_exhausted(e);
    const double zn = std::sqrt(std::max(0.0, z.dot(y).real()));
    if (!(zn > 0.0)) budget_exhausted(e);
    x = z / zn;
  }
}

// Lanczos for the W-self-adjoint operator W^{-1} B with full
// reorthogonalization, restarted from the leading Ritz vector. Alongside each
// basis vector q_i we keep z_i = W q_i, so W is only applied once per restart.
Eigenpair lanczos(const LinearMap& B, const Metric& W, CVector x, const IterationOptions& opt, double zero_mu) {
  const Index n = x.size();
  const int m = static_cast<int>(std::min<Index>(std::max(2, opt.krylov_dim), n));
  Eigenpair e;
  CVector z = W.apply(x);
  {
    const double nrm = std::sqrt(x.dot(z).real());
    x /= nrm;
    z /= nrm;
  }
  std::vector<CVector> qs, zs;
  std::vector<double> alpha, beta;
  for (;;) {
    qs.assign(1, x);
    zs.assign(1, z);
    alpha.clear();
    beta.clear();
    for (int j = 0; j < m; ++j) {
      CVector y = B(qs[j]);
      ++e.iterations;
      alpha.push_back(qs[j].dot(y).real());
      CVector w = W.solve(y);
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < qs.size(); ++i) {
          const Complex c = zs[i].dot(w);  // <w, q_i>_W
          w -= c * qs[i];
          y -= c * zs[i];
        }
      }
      const double b = std::sqrt(std::max(0.0, w.dot(y).real()));

      const int k = j + 1;
      Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k, k);
      for (int i = 0; i < k; ++i) {
        T(i, i) = alpha[i];
        if (i + 1 < k) T(i, i + 1) = T(i + 1, i) = beta[i];
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
      const double theta = std::max(0.0, es.eigenvalues()(k - 1));
      const Eigen::VectorXd s = es.eigenvectors().col(k - 1);
      const double rn = b * std::abs(s(k - 1));

      e.mu = theta;
      e.residual = theta > 0.0 ? rn / theta : rn;
      const bool zero = theta <= zero_mu && rn <= zero_mu;
      const bool invariant = b <= 1e-14 * std::max(theta, 1e-300);
      const bool done = zero || e.residual <= opt.tol || invariant || k == n;
      const bool restart = done || k == m || e.iterations >= opt.max_iterations;
      if (restart) {
        x = CVector::Zero(n);
        z = CVector::Zero(n);
        for (int i = 0; i < k; ++i) {
          x += s(i) * qs[i];
          z += s(i) * zs[i];
        }
        const double nrm = std::sqrt(std::max(0.0, x.dot(z).real()));
        if (nrm > 0.0) {
          x /= nrm;
          z /= nrm;
        }
        e.x = x;
      }
      if (done) {
        if (zero) {
          e.mu = 0.0;
          e.residual = 0.0;
        } else if (invariant || k == n) {
          e.residual = std::min(e.residual, opt.tol);
        }
        e.converged = true;
        return e;
      }
      if (e.iterations >= opt.max_iterations) budget_exhausted(e);
      if (restart) break;
      qs.push_back(w / b);
      zs.push_back(y / b);
      beta.push_back(b);
    }
  }
}

Eigenpair run(const LinearMap& B, const Metric& W, std::uint64_t seed, const IterationOptions& opt, double zero_mu) {
  CVector x0 = start_vector(W.size, seed);
  return opt.method == IterationMethod::Lanczos ? lanczos(B, W, std::move(x0), opt, zero_mu)
                                                : power(B, W, std::move(x0), opt, zero_mu);
}

NormReport largest(const LinearMap& B, const Metric& W, const IterationOptions& opt, double zero_mu, bool root) {
  if (W.size <= 0) throw InvalidArgument("metric has no dimension");
  if (!(opt.tol > 0.0) || opt.max_iterations < 1) throw InvalidArgument("invalid iteration options");
  const Eigenpair first = run(B, W, opt.seed, opt, zero_mu);
  NormReport r;
  r.value = root ? std::sqrt(first.mu) : first.mu;
  r.iterations = first.iterations;
  r.residual = first.residual;
  r.converged = first.converged;
  r.method = method_name(opt.method);
  r.vector = first.x;
  if (opt.check_restart) {
    const Eigenpair second = run(B, W, child_seed(opt.seed, 1), opt, zero_mu);
    const double v2 = root ? std::sqrt(second.mu) : second.mu;
    const double scale = std::max(r.value, v2);
    r.restart_gap = scale > 0.0 ? std::abs(r.value - v2) / scale : 0.0;
    r.restarts_agree = r.restart_gap <= opt.restart_tolerance;
    r.iterations += second.iterations;
    // Both runs bound the maximum from below; keep the larger.
    if (v2 > r.value) {
      r.value = v2;
      r.residual = second.residual;
      r.vector = second.x;
    }
  }
  return r;
}

}  // namespace

NormReport largest_generalized_eigenvalue(const LinearMap& B, const Metric& W, const IterationOptions& options) {
  return largest(B, W, options, options.zero_threshold, false);
}

NormReport induced_norm(const LinearMap& T, const LinearMap& adjoint, const Metric& in, const Metric& out,
                        const IterationOptions& options) {
  auto B = [&](const CVector& x) -> CVector { return adjoint(out.apply(T(x))); };
  return largest(B, in, options, options.zero_threshold * options.zero_threshold, true);
}

}  // namespace homlab
