#pragma once

// Benchmark dynamical systems with known algebraic invariants.
//
// Each system exposes its true right-hand side, the invariant C(u, t) with its
// analytic Jacobian and weighted Hessian, an initial-condition sampler and the
// train / inference horizons. Constraints enter projection as
// g(u, t) = C(u, t) - C(u0, t0), so every trajectory keeps its own level.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pnode/constraint.hpp"
#include "pnode/error.hpp"
#include "pnode/numeric.hpp"
#include "pnode/odeint.hpp"

namespace pnode {

struct SystemParams {
  // Lotka-Volterra
  double lv_alpha = 1.5;
  double lv_beta = 1.0;
  double lv_gamma = 3.0;
  double lv_delta = 1.0;
  // Rigid body principal moments
  double rb_i1 = 2.0;
  double rb_i2 = 1.0;
  double rb_i3 = 2.0 / 3.0;

  void validate() const {
    for (double v : {lv_alpha, lv_beta, lv_gamma, lv_delta, rb_i1, rb_i2, rb_i3})
      if (!(v > 0.0)) throw Error("SystemParams: all parameters must be positive");
  }
  bool operator==(const SystemParams&) const = default;
};

struct SecondOrderSplit {
  std::vector<std::size_t> positions;
  std::vector<std::size_t> velocities;
};

struct DynamicalSystem {
  std::string name;
  std::size_t dim = 0;
  std::size_t constraint_count = 0;
  SystemParams params;
  Rhs true_rhs;
  ConstraintSpec::InvariantFn invariant;
  ConstraintSpec::JacobianFn invariant_jacobian;
  ConstraintSpec::WeightedHessianFn invariant_hessian;
  std::function<Vector(std::mt19937_64&)> sample_initial_condition;
  double train_end = 0.0;
  double inference_end = 0.0;
  std::optional<SecondOrderSplit> second_order;
  bool time_dependent = false;

  ConstraintSpec constraints(std::span<const double> u0, double t0) const {
    return ConstraintSpec::anchored(dim, invariant, invariant_jacobian, invariant_hessian, u0, t0);
  }
};

inline const std::vector<std::string>& system_names() {
  static const std::vector<std::string> names = {"lotka_volterra", "mass_spring", "two_body",
                                                 "nonlinear_spring_2d", "robot_arm", "rigid_body"};
  return names;
}

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline DynamicalSystem lotka_volterra(const SystemParams& p) {
  DynamicalSystem s;
  s.name = "lotka_volterra";
  s.dim = 2;
  s.constraint_count = 1;
  s.params = p;
  const double a = p.lv_alpha, b = p.lv_beta, g = p.lv_gamma, d = p.lv_delta;
  s.true_rhs = [=](std::span<const double> u, double) {
    return Vector{a * u[0] - b * u[0] * u[1], -g * u[1] + d * u[0] * u[1]};
  };
  s.invariant = [=](std::span<const double> u, double) {
    return Vector{d * u[0] - g * std::log(u[0]) + b * u[1] - a * std::log(u[1])};
  };
  s.invariant_jacobian = [=](std::span<const double> u, double) {
    return Matrix{{d - g / u[0], b - a / u[1]}};
  };
  s.invariant_hessian = [=](std::span<const double> u, double, std::span<const double> w) {
    return Matrix{{w[0] * g / (u[0] * u[0]), 0.0}, {0.0, w[0] * a / (u[1] * u[1])}};
  };
  s.sample_initial_condition = [](std::mt19937_64& rng) {
    const double x = uniform(rng, 1.0, 2.0);
    const double y = uniform(rng, 1.0, 2.0);
    return Vector{x, y};
  };
  s.train_end = 7.0;
  s.inference_end = 1000.0;
  return s;
}

inline DynamicalSystem mass_spring(const SystemParams& p) {
  DynamicalSystem s;
  s.name = "mass_spring";
  s.dim = 2;
  s.constraint_count = 1;
  s.params = p;
  s.true_rhs = [](std::span<const double> u, double) { return Vector{u[1], -u[0]}; };
  s.invariant = [](std::span<const double> u, double) { return Vector{0.5 * (u[0] * u[0] + u[1] * u[1])}; };
  s.invariant_jacobian = [](std::span<const double> u, double) { return Matrix{{u[0], u[1]}}; };
  s.invariant_hessian = [](std::span<const double>, double, std::span<const double> w) {
    return Matrix{{w[0], 0.0}, {0.0, w[0]}};
  };
  s.sample_initial_condition = [](std::mt19937_64& rng) {
    const double r = uniform(rng, 0.8, 1.2);
    const double phi = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    return Vector{r * std::cos(phi), r * std::sin(phi)};
  };
  s.train_end = 10.0;
  s.inference_end = 1000.0;
  s.second_order = SecondOrderSplit{{0}, {1}};
  return s;
}

// State (q1, q2, p1, p2); invariant is the angular momentum q1 p2 - q2 p1.
inline DynamicalSystem two_body(const SystemParams& p) {
  DynamicalSystem s;
  s.name = "two_body";
  s.dim = 4;
  s.constraint_count = 1;
  s.params = p;
  s.true_rhs = [](std::span<const double> u, double) {
    const double r2 = u[0] * u[0] + u[1] * u[1];
    const double inv_r3 = 1.0 / (r2 * std::sqrt(r2));
    return Vector{u[2], u[3], -u[0] * inv_r3, -u[1] * inv_r3};
  };
  s.invariant = [](std::span<const double> u, double) { return Vector{u[0] * u[3] - u[1] * u[2]}; };
  s.invariant_jacobian = [](std::span<const double> u, double) { return Matrix{{u[3], -u[2], -u[1], u[0]}}; };
  s.invariant_hessian = [](std::span<const double>, double, std::span<const double> w) {
    Matrix h(4, 4);
    h(0, 3) = h(3, 0) = w[0];
    h(1, 2) = h(2, 1) = -w[0];
    return h;
  };
  s.sample_initial_condition = [](std::mt19937_64& rng) {
    const double e = uniform(rng, 0.3, 0.6);
    return Vector{1.0 - e, 0.0, 0.0, std::sqrt((1.0 + e) / (1.0 - e))};
  };
  s.train_end = 6.3832;
  s.inference_end = 1000.0;
  s.second_order = SecondOrderSplit{{0, 1}, {2, 3}};
  return s;
}

// State (x, y, u, v); invariants E = (u^2 + v^2)/2 + (x^2 + y^2)^2/4 and L = x v - y u.
inline DynamicalSystem nonlinear_spring_2d(const SystemParams& p) {
  DynamicalSystem s;
  s.name = "nonlinear_spring_2d";
  s.dim = 4;
  s.constraint_count = 2;
  s.params = p;
  s.true_rhs = [](std::span<const double> u, double) {
    const double r2 = u[0] * u[0] + u[1] * u[1];
    return Vector{u[2], u[3], -u[0] * r2, -u[1] * r2};
  };
  s.invariant = [](std::span<const double> u, double) {
    const double r2 = u[0] * u[0] + u[1] * u[1];
    return Vector{0.5 * (u[2] * u[2] + u[3] * u[3]) + 0.25 * r2 * r2, u[0] * u[3] - u[1] * u[2]};
  };
  s.invariant_jacobian = [](std::span<const double> u, double) {
    const double r2 = u[0] * u[0] + u[1] * u[1];
    return Matrix{{u[0] * r2, u[1] * r2, u[2], u[3]}, {u[3], -u[2], -u[1], u[0]}};
  };
  s.invariant_hessian = [](std::span<const double> u, double, std::span<const double> w) {
    const double r2 = u[0] * u[0] + u[1] * u[1];
    Matrix h(4, 4);
    h(0, 0) = w[0] * (r2 + 2.0 * u[0] * u[0]);
    h(1, 1) = w[0] * (r2 + 2.0 * u[1] * u[1]);
    h(0, 1) = h(1, 0) = w[0] * 2.0 * u[0] * u[1];
    h(2, 2) = w[0];
    h(3, 3) = w[0];
    h(0, 3) = h(3, 0) = w[1];
    h(1, 2) = h(2, 1) = -w[1];
    return h;
  };
  s.sample_initial_condition = [](std::mt19937_64& rng) {
    const double x = uniform(rng, 0.5, 1.0);
    const double y = uniform(rng, 0.5, 1.0);
    const double u = uniform(rng, -0.5, 0.5);
    const double v = uniform(rng, -0.5, 0.5);
    return Vector{x, y, u, v};
  };
  s.train_end = 10.0;
  s.inference_end = 1000.0;
  s.second_order = SecondOrderSplit{{0, 1}, {2, 3}};
  return s;
}

// Planar three-link arm with unit links. The end effector e(theta) tracks
// p(t) = e0 - (sin(2 pi t) / (2 pi), 0); the constraint is e(theta) - p(t) = 0,
// written as C(theta, t) = e(theta) + (sin(2 pi t) / (2 pi), 0) with level e0.
inline DynamicalSystem robot_arm(const SystemParams& p) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  DynamicalSystem s;
  s.name = "robot_arm";
  s.dim = 3;
  s.constraint_count = 2;
  s.params = p;
  s.time_dependent = true;
  s.true_rhs = [](std::span<const double> th, double t) {
    // theta' = e'^T (e' e'^T)^-1 p'(t), p'(t) = (-cos(2 pi t), 0)
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < 3; ++i) {
      const double a = -std::sin(th[i]);
      const double b = std::cos(th[i]);
      sxx += a * a;
      sxy += a * b;
      syy += b * b;
    }
    const double px = -std::cos(two_pi * t);
    const double det = sxx * syy - sxy * sxy;
    const double y0 = syy * px / det;
    const double y1 = -sxy * px / det;
    Vector out(3);
    for (std::size_t i = 0; i < 3; ++i) out[i] = -std::sin(th[i]) * y0 + std::cos(th[i]) * y1;
    return out;
  };
  s.invariant = [](std::span<const double> th, double t) {
    return Vector{std::cos(th[0]) + std::cos(th[1]) + std::cos(th[2]) + std::sin(two_pi * t) / two_pi,
                  std::sin(th[0]) + std::sin(th[1]) + std::sin(th[2])};
  };
  s.invariant_jacobian = [](std::span<const double> th, double) {
    return Matrix{{-std::sin(th[0]), -std::sin(th[1]), -std::sin(th[2])},
                  {std::cos(th[0]), std::cos(th[1]), std::cos(th[2])}};
  };
  s.invariant_hessian = [](std::span<const double> th, double, std::span<const double> w) {
    Matrix h(3, 3);
    for (std::size_t i = 0; i < 3; ++i) h(i, i) = -w[0] * std::cos(th[i]) - w[1] * std::sin(th[i]);
    return h;
  };
  s.train_end = 5.0;
  s.inference_end = 250.0;
  // Reject poses whose exact motion comes close to a straight (singular) arm
  // anywhere on [0, inference_end]: det(e' e'^T) = sum_{i<j} sin^2(theta_i - theta_j).
  const Rhs rhs = s.true_rhs;
  const double horizon = s.inference_end;
  s.sample_initial_condition = [rhs, horizon](std::mt19937_64& rng) {
    auto regularity = [](std::span<const double> th) {
      double det = 0.0;
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j) det += std::pow(std::sin(th[i] - th[j]), 2);
      return det;
    };
    for (;;) {
      Vector th{uniform(rng, 0.2, 1.2), uniform(rng, 0.2, 1.2), uniform(rng, 0.2, 1.2)};
      if (regularity(th) < 0.1) continue;
      Vector probe = th;
      bool regular = true;
      constexpr double h = 0.01;
      const auto steps = static_cast<std::size_t>(horizon / h);
      for (std::size_t k = 0; k < steps && regular; ++k) {
        probe = rk4_step(rhs, probe, static_cast<double>(k) * h, h);
        regular = regularity(probe) >= 0.05;
      }
      if (regular) return th;
    }
  };
  return s;
}

inline DynamicalSystem rigid_body(const SystemParams& p) {
  DynamicalSystem s;
  s.name = "rigid_body";
  s.dim = 3;
  s.constraint_count = 1;
  s.params = p;
  const double c1 = 1.0 / p.rb_i3 - 1.0 / p.rb_i2;
  const double c2 = 1.0 / p.rb_i1 - 1.0 / p.rb_i3;
  const double c3 = 1.0 / p.rb_i2 - 1.0 / p.rb_i1;
  s.true_rhs = [=](std::span<const double> y, double) {
    return Vector{c1 * y[1] * y[2], c2 * y[0] * y[2], c3 * y[0] * y[1]};
  };
  s.invariant = [](std::span<const double> y, double) {
    return Vector{0.5 * (y[0] * y[0] + y[1] * y[1] + y[2] * y[2])};
  };
  s.invariant_jacobian = [](std::span<const double> y, double) { return Matrix{{y[0], y[1], y[2]}}; };
  s.invariant_hessian = [](std::span<const double>, double, std::span<const double> w) {
    Matrix h(3, 3);
    for (std::size_t i = 0; i < 3; ++i) h(i, i) = w[0];
    return h;
  };
  s.sample_initial_condition = [](std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Vector y{normal(rng), normal(rng), normal(rng)};
    const double r = uniform(rng, 0.9, 1.1) / norm2(y);
    for (double& v : y) v *= r;
    return y;
  };
  s.train_end = 25.0;
  s.inference_end = 1000.0;
  return s;
}

}  // namespace detail

inline DynamicalSystem make_system(std::string_view name, const SystemParams& params = {}) {
  params.validate();
  if (name == "lotka_volterra") return detail::lotka_volterra(params);
  if (name == "mass_spring") return detail::mass_spring(params);
  if (name == "two_body") return detail::two_body(params);
  if (name == "nonlinear_spring_2d") return detail::nonlinear_spring_2d(params);
  if (name == "robot_arm") return detail::robot_arm(params);
  if (name == "rigid_body") return detail::rigid_body(params);
  throw Error("make_system: unknown system '" + std::string(name) + "'");
}

// Independent RNG stream per (seed, purpose, index); purpose 0 is training data,
// 1 is evaluation.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

}  // namespace pnode
