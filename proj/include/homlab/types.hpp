#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace homlab {

using Complex = std::complex<double>;
using Index = Eigen::Index;

inline constexpr int kMaxDim = 3;
inline constexpr int kMaxComponents = 4;

// Small fixed-capacity storage keeps pointwise field evaluation off the heap.
using Point = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;

template <typename Scalar>
using SmallMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor,
                                  kMaxComponents, kMaxComponents>;
using CoeffMatrix = SmallMatrix<Complex>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using SparseMatrix = Eigen::SparseMatrix<Scalar>;

using CMatrix = Matrix<Complex>;
using CVector = Vector<Complex>;
using CSparse = SparseMatrix<Complex>;

/// Entrywise absolute sum |A| = sum |a_ij|; the matrix norm used for every
/// coefficient bound in this library.
template <typename Derived>
double entry_norm(const Eigen::MatrixBase<Derived>& a) {
  return a.cwiseAbs().sum();
}

inline Point make_point(std::initializer_list<double> xs) {
  Point p(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) p(i++) = x;
  return p;
}

inline Point point1(double x) {
  Point p(1);
  p(0) = x;
  return p;
}

/// Axis-aligned box [lo, hi] in R^d.
struct Box {
  Point lo;
  Point hi;

  int dim() const { return static_cast<int>(lo.size()); }
  double measure() const { return (hi - lo).prod(); }
  double diameter() const { return (hi - lo).norm(); }
  bool contains(const Point& x, double tol = 0.0) const {
    return ((x - lo).array() >= -tol).all() && ((hi - x).array() >= -tol).all();
  }

  static Box interval(double a, double b) { return Box{point1(a), point1(b)}; }
  static Box cube(int d, double a, double b) {
    return Box{Point::Constant(d, a), Point::Constant(d, b)};
  }
};

/// Malformed input or violated precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical invariant was breached (non-coercive shift, singular
/// factorization, non-convergent iteration).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace homlab
