#pragma once

// Projection of an integrator update onto the constraint manifold
// {u : g(u, t) = 0}, the stabilization term that relaxes it, and the
// vector-Jacobian products used to backpropagate through both.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>

#include "pnode/constraint.hpp"
#include "pnode/error.hpp"
#include "pnode/numeric.hpp"

namespace pnode {

enum class ProjectionVariant { robust, fast };

struct ProjectionConfig {
  double tolerance = 1e-12;  // accepted max-norm of g
  std::size_t max_iterations = 50;
  ProjectionVariant variant = ProjectionVariant::robust;
  // On non-convergence of the fast variant, retry with the robust one.
  bool fallback = false;

  static ProjectionConfig robust() { return {1e-12, 50, ProjectionVariant::robust, false}; }
  static ProjectionConfig fast(bool fallback = false) { return {1e-12, 20, ProjectionVariant::fast, fallback}; }

  void validate() const {
    if (!(tolerance > 0.0)) throw Error("ProjectionConfig: tolerance must be positive");
    if (max_iterations < 1) throw Error("ProjectionConfig: max_iterations must be >= 1");
  }
};

struct ProjectionResult {
  Vector z;
  Vector lambda;
  std::size_t iterations = 0;
  double residual_norm = 0.0;
  ProjectionVariant variant = ProjectionVariant::robust;
  std::size_t jacobian_evaluations = 0;
  std::size_t factorizations = 0;
};

namespace detail {

inline Vector plus_jt_lambda(std::span<const double> base, const Matrix& j, std::span<const double> lambda) {
  Vector z(base.begin(), base.end());
  const Vector shift = matvec_transposed(j, lambda);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += shift[i];
  return z;
}

inline ProjectionResult trivial_projection(std::span<const double> u_tilde, ProjectionVariant v) {
  ProjectionResult r;
  r.z.assign(u_tilde.begin(), u_tilde.end());
  r.variant = v;
  return r;
}

}  // namespace detail

// Closest point on the manifold: solves z = u~ + J(z)^T lambda, g(z) = 0.
//
// Each iteration re-evaluates and re-factorizes J(z) J(z)^T and takes a
// Gauss-Newton step on the coupled system with the Hessian term dropped:
//   J J^T dlambda = -g(z) + J (z - u~ - J^T lambda),  z <- u~ + J^T (lambda + dlambda).
inline ProjectionResult project_robust(std::span<const double> u_tilde, const ConstraintSpec& c, double t,
                                       const ProjectionConfig& cfg) {
  cfg.validate();
  if (c.empty()) return detail::trivial_projection(u_tilde, ProjectionVariant::robust);
  if (u_tilde.size() != c.state_dim()) throw DimensionError("project_robust: state dimension mismatch");

  ProjectionResult r;
  r.variant = ProjectionVariant::robust;
  r.z.assign(u_tilde.begin(), u_tilde.end());
  r.lambda.assign(c.count(), 0.0);
  Matrix j = c.jacobian(r.z, t);
  ++r.jacobian_evaluations;
  Vector g = c.residual(r.z, t);

  // Once g is within tolerance, further steps only polish the stationarity defect
  // and are kept while they reduce it without losing feasibility.
  std::optional<ProjectionResult> feasible;
  double feasible_defect = 0.0;
  for (;;) {
    r.residual_norm = norm_inf(g);
    if (!std::isfinite(r.residual_norm)) {
      if (feasible) break;
      throw NonConvergenceError(r.residual_norm, r.iterations, "project_robust: non-finite residual");
    }
    // Stationarity defect z - u~ - J(z)^T lambda; zero after one step only when J is constant.
    const Vector defect = subtract(r.z, detail::plus_jt_lambda(u_tilde, j, r.lambda));
    const double defect_norm = norm_inf(defect);
    if (feasible && (r.residual_norm > cfg.tolerance || defect_norm >= feasible_defect)) break;
    if (r.residual_norm <= cfg.tolerance) {
      if (defect_norm <= cfg.tolerance * std::max(1.0, norm_inf(r.z))) return r;
      feasible = r;
      feasible_defect = defect_norm;
    }
    if (r.iterations >= cfg.max_iterations) {
      if (feasible) break;
      throw NonConvergenceError(r.residual_norm, r.iterations, "project_robust: iteration budget exhausted");
    }

    Vector rhs = matvec(j, defect);
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] -= g[i];

    const Vector step = solve_spd(multiply_abt(j, j), rhs);
    ++r.factorizations;
    for (std::size_t i = 0; i < step.size(); ++i) r.lambda[i] += step[i];
    r.z = detail::plus_jt_lambda(u_tilde, j, r.lambda);
    ++r.iterations;

    j = c.jacobian(r.z, t);
    ++r.jacobian_evaluations;
    g = c.residual(r.z, t);
  }
  feasible->iterations = r.iterations;
  feasible->factorizations = r.factorizations;
  feasible->jacobian_evaluations = r.jacobian_evaluations;
  return *feasible;
}

// Fixed-Jacobian variant: J0 = dg/du(u~) is evaluated and J0 J0^T factorized once;
// Newton iterations on g(u~ + J0^T lambda) = 0 reuse that factorization.
inline ProjectionResult project_fast(std::span<const double> u_tilde, const ConstraintSpec& c, double t,
                                     const ProjectionConfig& cfg) {
  cfg.validate();
  if (c.empty()) return detail::trivial_projection(u_tilde, ProjectionVariant::fast);
  if (u_tilde.size() != c.state_dim()) throw DimensionError("project_fast: state dimension mismatch");

  ProjectionResult r;
  r.variant = ProjectionVariant::fast;
  r.z.assign(u_tilde.begin(), u_tilde.end());
  r.lambda.assign(c.count(), 0.0);
  const Matrix j0 = c.jacobian(u_tilde, t);
  r.jacobian_evaluations = 1;
  Vector g = c.residual(u_tilde, t);

  std::optional<Cholesky> normal;
  std::size_t growth = 0;
  double previous = 0.0;
  for (;;) {
    r.residual_norm = norm_inf(g);
    if (!std::isfinite(r.residual_norm))
      throw NonConvergenceError(r.residual_norm, r.iterations, "project_fast: non-finite residual");
    if (r.residual_norm <= cfg.tolerance) return r;
    if (r.iterations > 0) {
      growth = r.residual_norm > previous ? growth + 1 : 0;
      if (growth >= 3) throw DivergenceError(r.residual_norm, r.iterations, "project_fast: residual grew 3 times in a row");
    }
    if (r.iterations >= cfg.max_iterations)
      throw NonConvergenceError(r.residual_norm, r.iterations, "project_fast: iteration budget exhausted");
    previous = r.residual_norm;

    if (!normal) {
      normal.emplace(multiply_abt(j0, j0));
      r.factorizations = 1;
    }
    for (double& v : g) v = -v;
    const Vector step = normal->solve(g);
    for (std::size_t i = 0; i < step.size(); ++i) r.lambda[i] += step[i];
    r.z = detail::plus_jt_lambda(u_tilde, j0, r.lambda);
    ++r.iterations;
    g = c.residual(r.z, t);
  }
}

inline ProjectionResult project(std::span<const double> u_tilde, const ConstraintSpec& c, double t,
                                const ProjectionConfig& cfg) {
  if (cfg.variant == ProjectionVariant::robust) return project_robust(u_tilde, c, t, cfg);
  if (!cfg.fallback) return project_fast(u_tilde, c, t, cfg);
  try {
    return project_fast(u_tilde, c, t, cfg);
  } catch (const NonConvergenceError&) {
    ProjectionConfig robust = ProjectionConfig::robust();
    robust.tolerance = cfg.tolerance;
    return project_robust(u_tilde, c, t, robust);
  } catch (const SingularMatrixError&) {
    ProjectionConfig robust = ProjectionConfig::robust();
    robust.tolerance = cfg.tolerance;
    return project_robust(u_tilde, c, t, robust);
  }
}

// (dz/du~)^T cotangent by implicit differentiation of the stationarity system
// the variant actually solved, evaluated at the converged (z, lambda).
//
// robust:  z = u~ + J(z)^T lambda, g(z) = 0
//   (I - H) dz - J^T dlambda = du~,  J dz = 0,   H = sum_i lambda_i d^2 g_i(z)
//   dz/du~ = M^-1 - M^-1 J^T (J M^-1 J^T)^-1 J M^-1 with M = I - H (symmetric).
// fast:    z = u~ + J(u~)^T lambda, g(z) = 0
//   dz/du~ = (I - J0^T (Jz J0^T)^-1 Jz) (I + H0),   H0 = sum_i lambda_i d^2 g_i(u~).
inline Vector projection_vjp(std::span<const double> u_tilde, const ProjectionResult& result,
                             const ConstraintSpec& c, double t, std::span<const double> cotangent) {
  if (c.empty()) return Vector(cotangent.begin(), cotangent.end());
  const std::size_t n = c.state_dim();
  if (cotangent.size() != n || u_tilde.size() != n) throw DimensionError("projection_vjp: dimension mismatch");

  if (result.variant == ProjectionVariant::robust) {
    const Matrix j = c.jacobian(result.z, t);
    Matrix m = c.weighted_hessian(result.z, t, result.lambda);
    for (double& v : m.entries()) v = -v;
    for (std::size_t i = 0; i < n; ++i) m(i, i) += 1.0;
    const Cholesky mc(m);
    const Vector a = mc.solve(cotangent);
    Matrix b(n, c.count());  // M^-1 J^T
    for (std::size_t k = 0; k < c.count(); ++k) {
      const Vector col = mc.solve(j.row(k));
      for (std::size_t i = 0; i < n; ++i) b(i, k) = col[i];
    }
    Matrix schur = multiply(j, b);
    for (std::size_t p = 0; p < schur.rows(); ++p)
      for (std::size_t q = 0; q < p; ++q) schur(p, q) = schur(q, p) = 0.5 * (schur(p, q) + schur(q, p));
    const Vector mult = solve_spd(schur, matvec(j, a));
    Vector v = a;
    const Vector corr = matvec(b, mult);
    for (std::size_t i = 0; i < n; ++i) v[i] -= corr[i];
    return v;
  }

  const Matrix j0 = c.jacobian(u_tilde, t);
  const Matrix jz = c.jacobian(result.z, t);
  // P^T c = c - Jz^T (J0 Jz^T)^-1 J0 c
  const Vector mult = solve_general(multiply_abt(j0, jz), matvec(j0, cotangent));
  Vector pc(cotangent.begin(), cotangent.end());
  const Vector corr = matvec_transposed(jz, mult);
  for (std::size_t i = 0; i < n; ++i) pc[i] -= corr[i];
  Vector v = pc;
  const Vector hv = matvec(c.weighted_hessian(u_tilde, t, result.lambda), pc);
  for (std::size_t i = 0; i < n; ++i) v[i] += hv[i];
  return v;
}

// -gamma J^T (J J^T)^-1 g(u, t)
inline Vector stabilization_term(std::span<const double> u, const ConstraintSpec& c, double t, double gamma) {
  Vector out(u.size(), 0.0);
  if (c.empty() || gamma == 0.0) return out;
  const Matrix j = c.jacobian(u, t);
  const Vector y = solve_spd(multiply_abt(j, j), c.residual(u, t));
  const Vector jty = matvec_transposed(j, y);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -gamma * jty[i];
  return out;
}

// (d stabilization_term / du)^T cotangent. With y = (J J^T)^-1 g and w = (J J^T)^-1 J c:
//   -gamma [ H(y) c + J^T w - H(w) J^T y - H(y) J^T w ],  H(a) = sum_i a_i d^2 g_i.
inline Vector stabilization_vjp(std::span<const double> u, const ConstraintSpec& c, double t, double gamma,
                                std::span<const double> cotangent) {
  const std::size_t n = u.size();
  if (cotangent.size() != n) throw DimensionError("stabilization_vjp: dimension mismatch");
  Vector out(n, 0.0);
  if (c.empty() || gamma == 0.0) return out;
  const Matrix j = c.jacobian(u, t);
  const Cholesky normal(multiply_abt(j, j));
  const Vector y = normal.solve(c.residual(u, t));
  const Vector w = normal.solve(matvec(j, cotangent));
  const Matrix hy = c.weighted_hessian(u, t, y);
  const Matrix hw = c.weighted_hessian(u, t, w);
  const Vector jty = matvec_transposed(j, y);
  const Vector jtw = matvec_transposed(j, w);
  const Vector t1 = matvec(hy, cotangent);
  const Vector t3 = matvec(hw, jty);
  const Vector t4 = matvec(hy, jtw);
  for (std::size_t i = 0; i < n; ++i) out[i] = -gamma * (t1[i] + jtw[i] - t3[i] - t4[i]);
  return out;
}

}  // namespace pnode
