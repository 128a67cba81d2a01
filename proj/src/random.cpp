#include "homlab/random.hpp"

#include <cmath>
#include <numbers>

namespace homlab {

double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

CMatrix random_complex_matrix(std::mt19937_64& rng, Index rows, Index cols) {
  CMatrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = Complex(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
  }
  return m;
}

CVector random_complex_vector(std::mt19937_64& rng, Index size) {
  CVector v(size);
  for (Index i = 0; i < size; ++i) v(i) = Complex(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
  return v;
}

}  // namespace homlab
