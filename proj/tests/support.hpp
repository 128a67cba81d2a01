#pragma once

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "homlab/random.hpp"
#include "homlab/types.hpp"

namespace homlab::test {

inline CMatrix dense(const CSparse& a) { return CMatrix(a); }

inline CMatrix hermitian_sqrt(const CMatrix& w) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(w);
  return es.operatorSqrt();
}

inline CMatrix hermitian_inv_sqrt(const CMatrix& w) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(w);
  return es.operatorInverseSqrt();
}

/// sup ||T x||_out / ||x||_in = sigma_max(W_out^{1/2} T W_in^{-1/2}).
inline double dense_induced_norm(const CMatrix& t, const CMatrix& w_in, const CMatrix& w_out) {
  const CMatrix m = hermitian_sqrt(w_out) * t * hermitian_inv_sqrt(w_in);
  Eigen::JacobiSVD<CMatrix> svd(m);
  return svd.singularValues()(0);
}

/// Random Hermitian positive definite matrix with spectrum in [1, 1 + spread].
inline CMatrix random_hpd(std::mt19937_64& rng, Index n, double spread = 4.0) {
  const CMatrix a = random_complex_matrix(rng, n, n);
  Eigen::HouseholderQR<CMatrix> qr(a);
  const CMatrix q = qr.householderQ();
  Eigen::VectorXd d(n);
  for (Index i = 0; i < n; ++i) d(i) = 1.0 + spread * uniform01(rng);
  return q * d.cast<Complex>().asDiagonal() * q.adjoint();
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace homlab::test
