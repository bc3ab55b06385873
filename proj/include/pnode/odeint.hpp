#pragma once

// Fixed-step classical Runge-Kutta with an optional per-step correction:
// manifold projection after every step, or a stabilization term added to the
// right-hand side.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <variant>

#include "pnode/constraint.hpp"
#include "pnode/error.hpp"
#include "pnode/numeric.hpp"
#include "pnode/projection.hpp"

namespace pnode {

template <class F>
concept RhsFunction = requires(const F& f, std::span<const double> u, double t) {
  { f(u, t) } -> std::convertible_to<Vector>;
};

using Rhs = std::function<Vector(std::span<const double>, double)>;

struct Unconstrained {};
struct Projected {
  ProjectionConfig projection;
};
struct Stabilized {
  double gamma = 0.0;
};
using StepMode = std::variant<Unconstrained, Projected, Stabilized>;

struct StepperConfig {
  double step_size = 0.01;
  StepMode mode = Unconstrained{};
  // Integration aborts with BlowUpError once ||u||_inf exceeds this bound.
  double max_state_norm = std::numeric_limits<double>::infinity();

  void validate() const {
    if (!(step_size > 0.0)) throw Error("StepperConfig: step size must be positive");
  }
};

struct Trajectory {
  Vector times;
  Matrix states;  // one row per save time

  std::size_t size() const noexcept { return times.size(); }
  std::span<const double> state(std::size_t k) const { return states.row(k); }
};

// u + h/6 (k1 + 2 k2 + 2 k3 + k4). The training rollout records the same
// arithmetic on the autodiff tape, so keep the two in sync.
template <RhsFunction F>
Vector rk4_step(const F& f, std::span<const double> u, double t, double h, std::size_t step_index = 0) {
  const std::size_t n = u.size();
  auto checked = [&](Vector k) {
    if (k.size() != n) throw DimensionError("rk4_step: rhs returned wrong dimension");
    if (!all_finite(k)) throw BlowUpError(step_index, "rk4_step: non-finite stage");
    return k;
  };
  const double half = h / 2.0;
  Vector tmp(n);

  const Vector k1 = checked(f(u, t));
  for (std::size_t i = 0; i < n; ++i) tmp[i] = u[i] + half * k1[i];
  const Vector k2 = checked(f(std::span<const double>(tmp), t + half));
  for (std::size_t i = 0; i < n; ++i) tmp[i] = u[i] + half * k2[i];
  const Vector k3 = checked(f(std::span<const double>(tmp), t + half));
  for (std::size_t i = 0; i < n; ++i) tmp[i] = u[i] + h * k3[i];
  const Vector k4 = checked(f(std::span<const double>(tmp), t + h));

  const double sixth = h / 6.0;
  Vector out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = u[i] + sixth * ((k1[i] + 2.0 * k2[i]) + (2.0 * k3[i] + k4[i]));
  return out;
}

// Number of fixed steps covering [t0, t_end]; the last one is shortened when
// the span is not a multiple of h.
inline std::size_t step_count(double t0, double t_end, double h) {
  const double ratio = (t_end - t0) / h;
  const auto n = static_cast<std::size_t>(std::ceil(ratio - 1e-9));
  return std::max<std::size_t>(n, 1);
}

// One corrected step from (u, t) with step size h.
template <RhsFunction F>
Vector corrected_step(const F& f, std::span<const double> u, double t, double h, const StepMode& mode,
                      const ConstraintSpec* c, std::size_t step_index = 0) {
  if (const auto* s = std::get_if<Stabilized>(&mode); s && c && s->gamma != 0.0) {
    auto stabilized = [&](std::span<const double> x, double tt) {
      Vector v = f(x, tt);
      const Vector corr = stabilization_term(x, *c, tt, s->gamma);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += corr[i];
      return v;
    };
    return rk4_step(stabilized, u, t, h, step_index);
  }
  Vector next = rk4_step(f, u, t, h, step_index);
  if (const auto* p = std::get_if<Projected>(&mode); p && c) return project(next, *c, t + h, p->projection).z;
  return next;
}

// Integrates from t0 to t_end, recording t0, every `save_every`-th step and t_end.
template <RhsFunction F>
Trajectory integrate(const F& f, std::span<const double> u0, double t0, double t_end, const StepperConfig& cfg,
                     const ConstraintSpec* c, std::size_t save_every = 1) {
  cfg.validate();
  if (!(t_end > t0)) throw Error("integrate: t_end must exceed t0");
  if (save_every < 1) throw Error("integrate: save_every must be >= 1");
  if (const auto* p = std::get_if<Projected>(&cfg.mode); p && c && !c->empty()) {
    if (norm_inf(c->residual(u0, t0)) > p->projection.tolerance)
      throw Error("integrate: initial state is not on the constraint manifold");
  }

  const double h = cfg.step_size;
  const std::size_t steps = step_count(t0, t_end, h);
  Trajectory traj;
  traj.times.reserve(steps / save_every + 2);
  Vector u(u0.begin(), u0.end());
  traj.times.push_back(t0);
  traj.states.append_row(u);

  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * h;
    const bool last = k + 1 == steps;
    const double t_next = last ? t_end : t0 + static_cast<double>(k + 1) * h;
    u = corrected_step(f, u, t, t_next - t, cfg.mode, c, k);
    if (!all_finite(u)) throw BlowUpError(k, "integrate: non-finite state");
    if (norm_inf(u) > cfg.max_state_norm) throw BlowUpError(k, "integrate: state norm exceeded bound");
    if ((k + 1) % save_every == 0 || last) {
      traj.times.push_back(t_next);
      traj.states.append_row(u);
    }
  }
  return traj;
}

// Empirical order from successive halving of the step size: least-squares slope
// of log2(error) against log2(h). `exact` gives the reference end state; when it
// is empty the reference is the same scheme run at the smallest h / 16.
template <RhsFunction F>
double convergence_order(const F& f, std::span<const double> u0, double t_end, StepMode mode,
                         const ConstraintSpec* c, std::span<const double> step_sizes,
                         const std::function<Vector(double)>& exact = {}) {
  if (step_sizes.size() < 2) throw Error("convergence_order: need at least two step sizes");
  auto end_state = [&](double h) {
    StepperConfig cfg{h, mode};
    const Trajectory tr = integrate(f, u0, 0.0, t_end, cfg, c, step_count(0.0, t_end, h));
    const auto last = tr.state(tr.size() - 1);
    return Vector(last.begin(), last.end());
  };
  Vector reference;
  if (exact) {
    reference = exact(t_end);
  } else {
    double hmin = step_sizes[0];
    for (double h : step_sizes) hmin = std::min(hmin, h);
    reference = end_state(hmin / 16.0);
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(step_sizes.size());
  for (double h : step_sizes) {
    const double err = norm2(subtract(end_state(h), reference));
    const double x = std::log2(h);
    const double y = std::log2(err);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace pnode
