#pragma once

#include <cmath>
#include <random>

#include "pnode.hpp"

namespace testing_util {

using pnode::ConstraintSpec;
using pnode::Matrix;
using pnode::Vector;

// g(z) = a.z - b
inline ConstraintSpec linear_constraint(Vector a, double b) {
  const std::size_t n = a.size();
  return ConstraintSpec(
      n, [a](std::span<const double> u, double) { return Vector{pnode::dot(a, u)}; },
      [a](std::span<const double>, double) { return Matrix(1, a.size(), a); },
      [n](std::span<const double>, double, std::span<const double>) { return Matrix(n, n); }, Vector{b});
}

// g(u) = |u|^2 / 2 - level (mass-spring energy)
inline ConstraintSpec half_norm_constraint(std::size_t n, double level) {
  return ConstraintSpec(
      n, [](std::span<const double> u, double) { return Vector{0.5 * pnode::dot(u, u)}; },
      [](std::span<const double> u, double) { return Matrix(1, u.size(), Vector(u.begin(), u.end())); },
      [n](std::span<const double>, double, std::span<const double> w) {
        Matrix h(n, n);
        for (std::size_t i = 0; i < n; ++i) h(i, i) = w[0];
        return h;
      },
      Vector{level});
}

// g(u) = |u|^2 - 1
inline ConstraintSpec unit_circle_constraint() {
  return ConstraintSpec(
      2, [](std::span<const double> u, double) { return Vector{pnode::dot(u, u)}; },
      [](std::span<const double> u, double) { return Matrix(1, 2, Vector{2 * u[0], 2 * u[1]}); },
      [](std::span<const double>, double, std::span<const double> w) {
        return Matrix{{2 * w[0], 0.0}, {0.0, 2 * w[0]}};
      },
      Vector{1.0});
}

inline Vector random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Vector v(n);
  for (double& x : v) x = d(rng);
  return v;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Central-difference gradient of a scalar function.
template <class F>
Vector fd_gradient(const F& f, std::span<const double> x, double eps) {
  Vector g(x.size());
  Vector p(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = p[i];
    p[i] = xi + eps;
    const double fp = f(p);
    p[i] = xi - eps;
    const double fm = f(p);
    p[i] = xi;
    g[i] = (fp - fm) / (2 * eps);
  }
  return g;
}

}  // namespace testing_util
