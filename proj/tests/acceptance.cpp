// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pnode.hpp"

using namespace pnode;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Vector random_direction(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd;
  Vector v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

// A point on the manifold through a sampled initial condition, moved off it by up to `radius`.
struct OffManifold {
  ConstraintSpec c;
  Vector u_tilde;
  double t;
};

OffManifold off_manifold(const DynamicalSystem& sys, std::mt19937_64& rng, double radius) {
  const Vector u0 = sys.sample_initial_condition(rng);
  const ConstraintSpec c = sys.constraints(u0, 0.0);
  const double t = sys.time_dependent ? std::uniform_real_distribution<double>(0.0, 2.0)(rng) : 0.0;
  StepperConfig cfg;
  cfg.step_size = 1e-3;
  const Trajectory tr = integrate(sys.true_rhs, u0, 0.0, t + 0.5, cfg, nullptr, 1);
  const auto base = tr.state(tr.size() - 1);
  Vector u(base.begin(), base.end());
  const Vector dir = random_direction(rng, sys.dim);
  axpy(std::uniform_real_distribution<double>(0.0, radius)(rng) / norm2(dir), dir, u);
  return {c, u, tr.times.back()};
}

Outcome feasibility() {
  double worst = 0.0;
  std::mt19937_64 rng(2024);
  for (const auto& name : system_names()) {
    const DynamicalSystem sys = make_system(name);
    for (int trial = 0; trial < 50; ++trial) {
      const OffManifold p = off_manifold(sys, rng, 1e-2);
      for (const ProjectionConfig& cfg : {ProjectionConfig::robust(), ProjectionConfig::fast(false)}) {
        const auto r = project(p.u_tilde, p.c, p.t, cfg);
        worst = std::max(worst, norm_inf(p.c.residual(r.z, p.t)));
      }
    }
  }
  return {worst <= 1e-11, "max |g|_inf = " + fmt(worst) + " over 6 systems x 50 states x 2 variants"};
}

Outcome snode_identity() {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 5;
    const std::size_t m = 1 + trial % (n - 1);
    // linear constraint A u = b, A Gaussian (full rank almost surely)
    Matrix a(m, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) a(i, j) = std::normal_distribution<double>()(rng);
    const Vector b = random_direction(rng, m);
    const ConstraintSpec c(
        n, [a](std::span<const double> u, double) { return matvec(a, u); },
        [a](std::span<const double>, double) { return a; },
        [n](std::span<const double>, double, std::span<const double>) { return Matrix(n, n); }, b);
    const Vector u = random_direction(rng, n);
    const Vector f = random_direction(rng, n);
    const double h = std::uniform_real_distribution<double>(1e-3, 0.2)(rng);
    Vector u_tilde = u;
    axpy(h, f, u_tilde);
    const auto r = project_fast(u_tilde, c, 0.0, ProjectionConfig::fast(false));
    Vector rhs = f;
    axpy(1.0, stabilization_term(u_tilde, c, 0.0, 1.0 / h), rhs);
    Vector euler = u;
    axpy(h, rhs, euler);
    worst = std::max(worst, max_abs_diff(r.z, euler) / std::max(1.0, norm_inf(euler)));
    if (r.iterations != 1) return {false, "fast correction took " + std::to_string(r.iterations) + " iterations"};
  }
  return {worst <= 1e-14, "max deviation = " + fmt(worst) + " over 100 random linear constraints"};
}

Outcome gradients() {
  double worst = 0.0;
  std::string where;
  for (const auto& name : system_names()) {
    const DynamicalSystem sys = make_system(name);
    GenerateOptions opt;
    opt.t_end = 1.0;
    const TrajectoryDataset ds = generate_dataset(sys, 1, 3, opt);
    const ConstraintSpec c = ds.constraint(sys, 0);
    const MlpDynamics m = make_model(sys, {8}, 5);
    const Trajectory& tr = ds.trajectories[0];
    for (TrainMode mode : all_train_modes()) {
      LossConfig cfg;
      cfg.mode = mode;
      cfg.step_size = 0.05;
      const auto wl = window_loss(m, tr, 2, 3, c, cfg);
      Vector theta(m.parameters().begin(), m.parameters().end());
      Vector fd(theta.size());
      MlpDynamics probe = m;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double x = theta[i];
        theta[i] = x + 1e-6;
        probe.set_parameters(theta);
        const double fp = window_loss_value(probe, tr, 2, 3, c, cfg);
        theta[i] = x - 1e-6;
        probe.set_parameters(theta);
        const double fm = window_loss_value(probe, tr, 2, 3, c, cfg);
        theta[i] = x;
        fd[i] = (fp - fm) / 2e-6;
      }
      const double rel = max_abs_diff(wl.gradient, fd) / norm_inf(fd);
      if (!(rel <= worst)) {
        worst = rel;
        where = name + "/" + to_string(mode);
      }
    }
  }
  return {worst <= 1e-4, "max relative deviation = " + fmt(worst) + " (" + where + "), 5 modes x 6 systems"};
}

Outcome order() {
  const DynamicalSystem sys = make_system("mass_spring");
  const Vector u0{1, 0};
  const ConstraintSpec c = sys.constraints(u0, 0.0);
  const Vector steps{0.2, 0.1, 0.05, 0.025};
  auto exact = [](double t) { return Vector{std::cos(t), -std::sin(t)}; };
  const double robust = convergence_order(sys.true_rhs, u0, 10.0, Projected{ProjectionConfig::robust()}, &c, steps, exact);
  const double fast = convergence_order(sys.true_rhs, u0, 10.0, Projected{ProjectionConfig::fast()}, &c, steps, exact);
  const bool pass = std::abs(robust - 4.0) <= 0.2 && std::abs(fast - 4.0) <= 0.2;
  return {pass, "order robust = " + fmt(robust) + ", fast = " + fmt(fast)};
}

ExperimentConfig desk_config(const std::string& system, TrainMode mode) {
  ExperimentConfig c;
  c.system = system;
  c.mode = mode;
  c.gamma = 0.5;
  c.seed = 1;
  c.n_trajectories = 16;
  c.timing = false;
  c.eval_n = 8;
  c.eval_horizon = 100.0;
  return c;
}

std::string report_line(const EvalReport& r) {
  if (r.diverged) return r.system + "/" + r.mode + " diverged (" + std::to_string(r.diverged_trajectories) + "/" +
                         std::to_string(r.n_eval) + ")";
  return r.system + "/" + r.mode + " rel = " + fmt(r.rel_state_error->mean) +
         ", sq constraint = " + fmt(r.sq_constraint_error->mean);
}

Outcome end_to_end() {
  const auto start = std::chrono::steady_clock::now();
  ExperimentConfig c = desk_config("lotka_volterra", TrainMode::pnode_fast);
  c.hidden = {64, 64};
  c.adam.epochs = 100;
  c.adam.lr = 3e-3;
  c.lbfgs.max_iterations = 50;
  const DynamicalSystem sys = system_for(c);
  const TrajectoryDataset ds = generate_for(c, sys);
  const RunOutcome r = run_experiment(c, sys, ds);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  const EvalReport& rep = r.evaluation.report;
  const bool pass = !rep.diverged && rep.sq_constraint_error->mean <= 1e-9 && rep.rel_state_error->mean <= 0.5 &&
                    minutes <= 30.0;
  return {pass, report_line(rep) + ", " + fmt(minutes) + " min"};
}

Outcome ordering() {
  bool pass = true;
  std::string detail;
  for (const std::string system : {"lotka_volterra", "mass_spring"}) {
    double cons[3] = {0, 0, 0};
    const TrainMode modes[3] = {TrainMode::pnode_fast, TrainMode::snode, TrainMode::node};
    const DynamicalSystem sys = make_system(system);
    const TrajectoryDataset ds = generate_for(desk_config(system, TrainMode::node), sys);
    for (int i = 0; i < 3; ++i) {
      ExperimentConfig c = desk_config(system, modes[i]);
      c.hidden = {32, 32};
      c.adam.epochs = 20;
      c.lbfgs.enabled = false;
      const EvalReport rep = run_experiment(c, sys, ds).evaluation.report;
      if (rep.diverged) {
        pass = false;
        cons[i] = std::nan("");
      } else {
        cons[i] = rep.sq_constraint_error->mean;
      }
    }
    pass = pass && cons[0] < cons[1] && cons[1] < cons[2] && cons[0] * 1e4 <= cons[1];
    detail += system + ": pnode " + fmt(cons[0]) + " < snode " + fmt(cons[1]) + " < node " + fmt(cons[2]) + "; ";
  }
  return {pass, detail.substr(0, detail.size() - 2)};
}

Outcome rigid_body_divergence() {
  ExperimentConfig c = desk_config("rigid_body", TrainMode::node);
  c.hidden = {32, 32};
  c.adam.epochs = 20;
  c.lbfgs.enabled = false;
  c.eval_horizon = 0.0;  // the full inference horizon
  const DynamicalSystem sys = system_for(c);
  const EvalReport rep = run_experiment(c, sys, generate_for(c, sys)).evaluation.report;
  const bool pass = rep.diverged || rep.rel_state_error->mean > 10.0;
  return {pass, report_line(rep) + " at horizon " + fmt(rep.horizon)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int cli(const std::string& args) {
  const std::string cmd = std::string(PNODE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "pnode_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << R"({"system": "mass_spring", "mode": "pnode_robust", "seed": 11,
    "n_trajectories": 3, "hidden": [16], "data": {"t_end": 2.0}, "adam": {"epochs": 3},
    "lbfgs": {"max_iterations": 5}, "eval": {"n": 3, "horizon": 20.0}})";
  const std::string config = "--config " + (dir / "config.json").string() + " --threads 1 --no-timing";
  for (const char* run : {"a", "b"}) {
    const fs::path out = dir / run;
    if (cli("generate " + config + " --out-dir " + (out / "gen").string()) != 0 ||
        cli("train " + config + " --out-dir " + (out / "train").string()) != 0 ||
        cli("evaluate " + config + " --checkpoint " + (out / "train" / "checkpoint.txt").string() + " --out-dir " +
            (out / "eval").string()) != 0)
      return {false, "CLI run failed"};
  }
  const std::vector<fs::path> files = {"gen/dataset.csv", "train/checkpoint.txt", "train/loss_history.csv",
                                       "eval/report.json", "eval/trajectories.csv"};
  for (const auto& f : files) {
    const std::string a = slurp(dir / "a" / f);
    if (a.empty() || a != slurp(dir / "b" / f)) return {false, f.string() + " differs between runs"};
  }
  return {true, std::to_string(files.size()) + " output files byte-identical across two runs"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"projection feasibility", feasibility},
      {"snode reduction identity", snode_identity},
      {"gradient correctness", gradients},
      {"order preservation", order},
      {"lotka-volterra end-to-end", end_to_end},
      {"constraint ordering", ordering},
      {"rigid body node divergence", rigid_body_divergence},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed ? 1 : 0;
}
