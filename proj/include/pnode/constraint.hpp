#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>

#include "pnode/error.hpp"
#include "pnode/numeric.hpp"

namespace pnode {

// Algebraic constraint g(u, t) = C(u, t) - reference_level, with C an invariant
// (conserved quantity or kinematic expression) of dimension m.
//
// Besides the residual and its Jacobian the spec carries the contraction of the
// constraint Hessians with a weight vector, sum_i w_i d^2 g_i / du^2, which is
// what implicit differentiation of the projection needs.
class ConstraintSpec {
 public:
  using InvariantFn = std::function<Vector(std::span<const double> u, double t)>;
  using JacobianFn = std::function<Matrix(std::span<const double> u, double t)>;
  using WeightedHessianFn =
      std::function<Matrix(std::span<const double> u, double t, std::span<const double> weights)>;

  ConstraintSpec() = default;  // no constraints (m = 0)

  ConstraintSpec(std::size_t state_dim, InvariantFn invariant, JacobianFn jacobian,
                 WeightedHessianFn weighted_hessian, Vector reference_level)
      : state_dim_(state_dim),
        invariant_(std::move(invariant)),
        jacobian_(std::move(jacobian)),
        hessian_(std::move(weighted_hessian)),
        reference_(std::move(reference_level)) {}

  // Builds the spec with the reference level taken from C(u0, t0).
  static ConstraintSpec anchored(std::size_t state_dim, InvariantFn invariant, JacobianFn jacobian,
                                 WeightedHessianFn weighted_hessian, std::span<const double> u0, double t0) {
    Vector ref = invariant(u0, t0);
    return ConstraintSpec(state_dim, std::move(invariant), std::move(jacobian), std::move(weighted_hessian),
                          std::move(ref));
  }

  std::size_t count() const noexcept { return reference_.size(); }
  std::size_t state_dim() const noexcept { return state_dim_; }
  bool empty() const noexcept { return reference_.empty(); }
  const Vector& reference_level() const noexcept { return reference_; }

  Vector residual(std::span<const double> u, double t) const {
    if (empty()) return {};
    check(u);
    Vector g = invariant_(u, t);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= reference_[i];
    return g;
  }

  Matrix jacobian(std::span<const double> u, double t) const {
    if (empty()) return Matrix(0, u.size());
    check(u);
    return jacobian_(u, t);
  }

  Matrix weighted_hessian(std::span<const double> u, double t, std::span<const double> weights) const {
    if (empty()) return Matrix(u.size(), u.size());
    check(u);
    if (weights.size() != count()) throw DimensionError("weighted_hessian: weight count != constraint count");
    return hessian_(u, t, weights);
  }

 private:
  void check(std::span<const double> u) const {
    if (u.size() != state_dim_) throw DimensionError("ConstraintSpec: state dimension mismatch");
  }

  std::size_t state_dim_ = 0;
  InvariantFn invariant_;
  JacobianFn jacobian_;
  WeightedHessianFn hessian_;
  Vector reference_;
};

}  // namespace pnode
