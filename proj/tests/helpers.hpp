#pragma once

#include <functional>
#include <random>

#include "homoflow/model.hpp"

namespace testing {

using homoflow::Index;
using homoflow::Matrix;
using homoflow::Vector;

/// Central differences of a scalar function, step h.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h = 1e-6) {
  Vector g(x.size());
  Vector xp = x, xm = x;
  for (Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    xm(i) = x(i) - h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
    xp(i) = x(i);
    xm(i) = x(i);
  }
  return g;
}

/// Central-difference Jacobian of a vector function (rows = outputs).
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 1e-6) {
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  Vector xp = x, xm = x;
  for (Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    xm(i) = x(i) - h;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
    xp(i) = x(i);
    xm(i) = x(i);
  }
  return J;
}

inline double rel_err(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / std::max(1.0, b.norm());
}

inline Vector gaussian(Index k, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(k);
  for (Index i = 0; i < k; ++i) v(i) = n(rng);
  return v;
}

inline Matrix gaussian(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

}  // namespace testing
