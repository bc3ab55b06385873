#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace pnode;
using testing_util::max_abs_diff;

namespace {

const ProjectionConfig kRobust = ProjectionConfig::robust();
const ProjectionConfig kFast = ProjectionConfig::fast();

// On-manifold state of `sys` plus a random offset of norm `radius`.
struct Perturbed {
  ConstraintSpec c;
  Vector u_tilde;
  double t;
};

Perturbed perturbed_state(const DynamicalSystem& sys, std::mt19937_64& rng, double radius) {
  const Vector u0 = sys.sample_initial_condition(rng);
  const ConstraintSpec c = sys.constraints(u0, 0.0);
  std::uniform_real_distribution<double> td(0.0, 2.0);
  const double t = sys.time_dependent ? td(rng) : 0.0;
  // advance along the true flow so the base point is not the anchor itself
  StepperConfig cfg;
  cfg.step_size = 1e-3;
  const Trajectory tr = integrate(sys.true_rhs, u0, 0.0, t + 0.5, cfg, nullptr, 1);
  const auto base = tr.state(tr.size() - 1);
  Vector dir = testing_util::random_vector(rng, sys.dim);
  const double scale = std::uniform_real_distribution<double>(0.0, radius)(rng) / norm2(dir);
  Vector u(base.begin(), base.end());
  axpy(scale, dir, u);
  return {c, u, tr.times.back()};
}

}  // namespace

TEST(ProjectRobust, MassSpringRadial) {
  const auto c = testing_util::half_norm_constraint(2, 0.5);
  const auto r = project_robust(Vector{1.1, 0}, c, 0.0, kRobust);
  // closed form: u * sqrt(2 E0) / |u|
  EXPECT_NEAR(r.z[0], 1.0, 1e-12);
  EXPECT_NEAR(r.z[1], 0.0, 1e-15);
}

TEST(ProjectRobust, OnManifoldFixedPoint) {
  const auto c = testing_util::half_norm_constraint(2, 0.5);
  const auto r = project_robust(Vector{0.6, 0.8}, c, 0.0, kRobust);
  EXPECT_LE(r.iterations, 1u);
  EXPECT_LT(max_abs_diff(r.z, Vector{0.6, 0.8}), 1e-15);
  EXPECT_LT(std::abs(r.lambda[0]), 1e-15);
}

TEST(ProjectRobust, Hyperplane) {
  const auto r = project_robust(Vector{1, 1}, testing_util::linear_constraint({1, 1}, 1), 0.0, kRobust);
  EXPECT_NEAR(r.z[0], 0.5, 1e-15);
  EXPECT_NEAR(r.z[1], 0.5, 1e-15);
  EXPECT_EQ(r.iterations, 1u);
}

TEST(ProjectFast, HyperplaneOneIteration) {
  const auto r = project_fast(Vector{1, 1}, testing_util::linear_constraint({1, 1}, 1), 0.0, kFast);
  EXPECT_NEAR(r.z[0], 0.5, 1e-15);
  EXPECT_NEAR(r.z[1], 0.5, 1e-15);
  EXPECT_EQ(r.iterations, 1u);
  EXPECT_EQ(r.factorizations, 1u);
}

TEST(ProjectFast, MassSpringRadial) {
  const auto c = testing_util::half_norm_constraint(2, 0.5);
  const auto r = project_fast(Vector{1.1, 0}, c, 0.0, kFast);
  EXPECT_LE(std::abs(0.5 * dot(r.z, r.z) - 0.5), 1e-12);
  EXPECT_NEAR(r.z[0], 1.0, 1e-10);
  EXPECT_NEAR(r.z[1], 0.0, 1e-10);
  EXPECT_EQ(r.factorizations, 1u);
  EXPECT_EQ(r.jacobian_evaluations, 1u);
}

TEST(ProjectFast, OnManifold) {
  const auto c = testing_util::half_norm_constraint(2, 0.5);
  const auto r = project_fast(Vector{0.6, 0.8}, c, 0.0, kFast);
  EXPECT_LT(max_abs_diff(r.z, Vector{0.6, 0.8}), 1e-15);
  EXPECT_LT(std::abs(r.lambda[0]), 1e-15);
}

TEST(Project, EmptyConstraintIsIdentity) {
  const ConstraintSpec none;
  const auto r = project(Vector{1, 2, 3}, none, 0.0, kRobust);
  EXPECT_EQ(r.z, (Vector{1, 2, 3}));
  EXPECT_EQ(projection_vjp(Vector{1, 2, 3}, r, none, 0.0, Vector{4, 5, 6}), (Vector{4, 5, 6}));
}

TEST(Project, RankDeficientJacobianReported) {
  // g = |u|^2 - 1 has J = 0 at the origin
  EXPECT_THROW(project_robust(Vector{0, 0}, testing_util::unit_circle_constraint(), 0.0, kRobust),
               SingularMatrixError);
  EXPECT_THROW(project_fast(Vector{0, 0}, testing_util::unit_circle_constraint(), 0.0, kFast), SingularMatrixError);
}

TEST(Project, NonConvergenceReported) {
  ProjectionConfig cfg = kRobust;
  cfg.max_iterations = 1;
  try {
    project_robust(Vector{3, 0.2}, testing_util::unit_circle_constraint(), 0.0, cfg);
    FAIL() << "expected NonConvergenceError";
  } catch (const NonConvergenceError& e) {
    EXPECT_EQ(e.iterations(), 1u);
    EXPECT_GT(e.residual_norm(), cfg.tolerance);
  }
}

TEST(Project, FastFallsBackToRobust) {
  // far from the manifold the frozen Jacobian is poor
  const auto c = testing_util::unit_circle_constraint();
  ProjectionConfig cfg = ProjectionConfig::fast(true);
  cfg.max_iterations = 2;
  const auto r = project(Vector{5, 0.5}, c, 0.0, cfg);
  EXPECT_EQ(r.variant, ProjectionVariant::robust);
  EXPECT_LE(std::abs(c.residual(r.z, 0.0)[0]), 1e-12);
  cfg.fallback = false;
  EXPECT_THROW(project(Vector{5, 0.5}, c, 0.0, cfg), NonConvergenceError);
}

TEST(Project, InvalidConfigRejected) {
  ProjectionConfig cfg = kRobust;
  cfg.tolerance = 0.0;
  EXPECT_THROW(project(Vector{1, 1}, testing_util::linear_constraint({1, 1}, 1), 0.0, cfg), Error);
}

class SystemProjection : public ::testing::TestWithParam<std::string> {};

TEST_P(SystemProjection, FeasibleIdempotentAndOrthogonal) {
  const DynamicalSystem sys = make_system(GetParam());
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const Perturbed p = perturbed_state(sys, rng, 1e-2);
    for (const ProjectionConfig& cfg : {kRobust, kFast}) {
      const auto r = project(p.u_tilde, p.c, p.t, cfg);
      EXPECT_LE(norm_inf(p.c.residual(r.z, p.t)), 1e-11);
      const auto again = project(r.z, p.c, p.t, cfg);
      EXPECT_LT(max_abs_diff(again.z, r.z), 1e-12);
      // z - u~ lies in the row space of J: compare with its least-squares reconstruction
      const Matrix j = p.c.jacobian(cfg.variant == ProjectionVariant::robust ? r.z : p.u_tilde, p.t);
      const Vector d = subtract(r.z, p.u_tilde);
      const Vector coeff = solve_spd(multiply_abt(j, j), matvec(j, d));
      EXPECT_LT(max_abs_diff(matvec_transposed(j, coeff), d), 1e-10);
    }
  }
}

TEST_P(SystemProjection, VariantsAgreeNearManifold) {
  const DynamicalSystem sys = make_system(GetParam());
  std::mt19937_64 rng(202);
  for (int trial = 0; trial < 20; ++trial) {
    const Perturbed p = perturbed_state(sys, rng, 1e-4);
    const auto a = project(p.u_tilde, p.c, p.t, kRobust);
    const auto b = project(p.u_tilde, p.c, p.t, kFast);
    EXPECT_LT(max_abs_diff(a.z, b.z), 1e-8);
  }
}

TEST_P(SystemProjection, VjpMatchesFiniteDifferences) {
  const DynamicalSystem sys = make_system(GetParam());
  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 5; ++trial) {
    const Perturbed p = perturbed_state(sys, rng, 1e-2);
    const Vector cot = testing_util::random_vector(rng, sys.dim);
    for (const ProjectionConfig& cfg : {kRobust, kFast}) {
      const auto r = project(p.u_tilde, p.c, p.t, cfg);
      const Vector vjp = projection_vjp(p.u_tilde, r, p.c, p.t, cot);
      ProjectionConfig tight = cfg;
      tight.tolerance = 1e-14;
      tight.max_iterations = 100;
      const Matrix j = finite_diff_jacobian(
          [&](std::span<const double> u) { return project(u, p.c, p.t, tight).z; }, p.u_tilde, 1e-6);
      const Vector fd = matvec_transposed(j, cot);
      EXPECT_LT(max_abs_diff(vjp, fd), 1e-5 * norm_inf(fd) + 1e-8) << "variant " << int(cfg.variant);
    }
  }
}

TEST_P(SystemProjection, StabilizationVjpMatchesFiniteDifferences) {
  const DynamicalSystem sys = make_system(GetParam());
  std::mt19937_64 rng(404);
  const Perturbed p = perturbed_state(sys, rng, 1e-2);
  const Vector cot = testing_util::random_vector(rng, sys.dim);
  const Vector vjp = stabilization_vjp(p.u_tilde, p.c, p.t, 2.0, cot);
  const Matrix j = finite_diff_jacobian(
      [&](std::span<const double> u) { return stabilization_term(u, p.c, p.t, 2.0); }, p.u_tilde, 1e-6);
  const Vector fd = matvec_transposed(j, cot);
  EXPECT_LT(max_abs_diff(vjp, fd), 1e-6 * norm_inf(fd) + 1e-9);
}

INSTANTIATE_TEST_SUITE_P(AllSystems, SystemProjection, ::testing::ValuesIn(system_names()));

TEST(ProjectionVjp, HyperplaneProjector) {
  const auto c = testing_util::linear_constraint({1, 1}, 1);
  for (const ProjectionConfig& cfg : {kRobust, kFast}) {
    const auto r = project(Vector{1, 1}, c, 0.0, cfg);
    const Vector v = projection_vjp(Vector{1, 1}, r, c, 0.0, Vector{1, 0});
    EXPECT_NEAR(v[0], 0.5, 1e-15);
    EXPECT_NEAR(v[1], -0.5, 1e-15);
  }
}

TEST(ProjectionVjp, MassSpringMatchesFiniteDifferences) {
  const auto c = testing_util::half_norm_constraint(2, 0.5);
  const Vector u{1.1, 0};
  const auto r = project_robust(u, c, 0.0, kRobust);
  const Matrix j = finite_diff_jacobian([&](std::span<const double> x) { return project_robust(x, c, 0.0, kRobust).z; },
                                        u, 1e-6);
  for (const Vector& cot : {Vector{1, 0}, Vector{0, 1}, Vector{0.3, -0.7}}) {
    const Vector fd = matvec_transposed(j, cot);
    EXPECT_LT(max_abs_diff(projection_vjp(u, r, c, 0.0, cot), fd), 1e-6);
  }
}

TEST(StabilizationTerm, Circle) {
  const Vector s = stabilization_term(Vector{2, 0}, testing_util::unit_circle_constraint(), 0.0, 1.0);
  EXPECT_NEAR(s[0], -0.75, 1e-15);
  EXPECT_EQ(s[1], 0.0);
}

TEST(StabilizationTerm, OnManifoldIsZero) {
  const Vector s = stabilization_term(Vector{0.6, 0.8}, testing_util::unit_circle_constraint(), 0.0, 3.0);
  EXPECT_LT(norm_inf(s), 1e-15);
}

TEST(StabilizationTerm, Hyperplane) {
  const Vector s = stabilization_term(Vector{1, 1}, testing_util::linear_constraint({1, 1}, 1), 0.0, 2.0);
  EXPECT_NEAR(s[0], -1.0, 1e-15);
  EXPECT_NEAR(s[1], -1.0, 1e-15);
}

TEST(StabilizationTerm, ZeroGainOrNoConstraint) {
  EXPECT_EQ(stabilization_term(Vector{2, 0}, testing_util::unit_circle_constraint(), 0.0, 0.0), (Vector{0, 0}));
  EXPECT_EQ(stabilization_term(Vector{2, 0}, ConstraintSpec{}, 0.0, 1.0), (Vector{0, 0}));
}

// One Forward-Euler step u~ = u + h f(u), then a single fast Newton correction,
// equals u + h (f(u) + s(u~)) with s the stabilization term at gain 1/h.
TEST(SnodeReduction, LinearConstraintSingleCorrection) {
  std::mt19937_64 rng(9);
  const Vector a{0.7, -1.3, 0.4};
  const auto c = testing_util::linear_constraint(a, 0.25);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector u = testing_util::random_vector(rng, 3);
    const Vector f = testing_util::random_vector(rng, 3, 2.0);
    const double h = 0.01 * (trial + 1);
    Vector u_tilde = u;
    axpy(h, f, u_tilde);
    const auto r = project_fast(u_tilde, c, 0.0, kFast);
    EXPECT_EQ(r.iterations, 1u);
    Vector rhs = f;
    axpy(1.0, stabilization_term(u_tilde, c, 0.0, 1.0 / h), rhs);
    Vector euler = u;
    axpy(h, rhs, euler);
    EXPECT_LE(max_abs_diff(r.z, euler), 1e-14);
  }
}
