#pragma once

// Long-horizon evaluation: relative state error against reference trajectories,
// mean squared constraint violation, and batch inference time.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "pnode/dataset.hpp"
#include "pnode/io.hpp"
#include "pnode/odeint.hpp"
#include "pnode/systems.hpp"

namespace pnode {

// mean_k ||pred_k - truth_k||_2 / (||truth_k||_2 + 1e-8); empty when pred holds a
// non-finite value.
inline std::optional<double> mean_rel_state_error(const Trajectory& pred, const Trajectory& truth) {
  if (pred.size() != truth.size() || pred.states.cols() != truth.states.cols())
    throw DimensionError("mean_rel_state_error: trajectories have different shapes");
  for (std::size_t k = 0; k < pred.size(); ++k)
    if (std::abs(pred.times[k] - truth.times[k]) > 1e-9)
      throw DimensionError("mean_rel_state_error: time grids differ");
  if (!all_finite(pred.states.entries())) return std::nullopt;
  double sum = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k)
    sum += norm2(subtract(pred.state(k), truth.state(k))) / (norm2(truth.state(k)) + 1e-8);
  return sum / static_cast<double>(pred.size());
}

inline double max_rel_state_error(const Trajectory& pred, const Trajectory& truth) {
  double m = 0.0;
  for (std::size_t k = 0; k < std::min(pred.size(), truth.size()); ++k)
    m = std::max(m, norm2(subtract(pred.state(k), truth.state(k))) / (norm2(truth.state(k)) + 1e-8));
  return m;
}

// mean_k ||g(pred_k, t_k)||_2^2
inline double mean_sq_constraint_error(const Trajectory& pred, const ConstraintSpec& c) {
  if (pred.size() == 0) throw Error("mean_sq_constraint_error: empty trajectory");
  double sum = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const Vector g = c.residual(pred.state(k), pred.times[k]);
    sum += dot(g, g);
  }
  return sum / static_cast<double>(pred.size());
}

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation across trajectories

  bool operator==(const Summary&) const = default;
};

inline Summary summarize(std::span<const double> v) {
  Summary s;
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(v.size()));
  return s;
}

// One row of the results table. When `diverged` is set the error fields are empty.
struct EvalReport {
  std::string system;
  std::string mode;
  double gamma = 0.0;
  double horizon = 0.0;
  double step_size = 0.0;
  std::size_t n_eval = 0;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::size_t diverged_trajectories = 0;
  std::optional<Summary> rel_state_error;
  std::optional<Summary> sq_constraint_error;
  std::optional<double> max_rel_state_error;
  std::optional<double> inference_seconds_per_batch;

  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  std::size_t n_eval = 8;
  double horizon = 100.0;
  double step_size = 0.01;
  double save_interval = 0.1;
  double h_ref = 1e-3;
  std::uint64_t seed = 1;
  StepMode mode = Unconstrained{};
  bool timing = true;
  double max_state_norm = 1e6;
  unsigned threads = 1;  // ignored when timing: timed runs are single-threaded
};

struct EvalTrajectory {
  Trajectory truth;
  std::optional<Trajectory> prediction;  // empty when the rollout diverged
  ConstraintSpec constraint;
  std::optional<double> rel_error;
  double sq_constraint_error = 0.0;
};

struct EvalResult {
  EvalReport report;
  std::vector<EvalTrajectory> trajectories;
};

namespace detail {

inline std::size_t save_stride(double interval, double h) {
  const auto n = static_cast<std::size_t>(std::llround(interval / h));
  if (n < 1 || std::abs(static_cast<double>(n) * h - interval) > 1e-9 * interval)
    throw Error("evaluate: save interval must be a multiple of the step size");
  return n;
}

}  // namespace detail

// Rolls `model` out from fresh initial conditions (evaluation RNG stream) and
// scores it against reference integrations of the true dynamics. The batch is
// the whole evaluation set; one untimed warm-up pass over a short horizon
// precedes the timed pass.
template <RhsFunction F>
EvalResult evaluate(const F& model, const DynamicalSystem& sys, const EvalOptions& opt) {
  if (opt.n_eval < 1) throw Error("evaluate: need at least one evaluation trajectory");
  EvalResult res;
  EvalReport& rep = res.report;
  rep.system = sys.name;
  rep.horizon = opt.horizon;
  rep.step_size = opt.step_size;
  rep.n_eval = opt.n_eval;
  rep.seed = opt.seed;

  const std::size_t ref_stride = detail::save_stride(opt.save_interval, opt.h_ref);
  const std::size_t model_stride = detail::save_stride(opt.save_interval, opt.step_size);
  std::vector<Vector> ics;
  for (std::size_t i = 0; i < opt.n_eval; ++i) {
    auto rng = stream_rng(opt.seed, 1, i);
    ics.push_back(sys.sample_initial_condition(rng));
    EvalTrajectory et;
    et.constraint = sys.constraints(ics.back(), 0.0);
    et.truth = reference_trajectory(sys, ics.back(), opt.horizon, opt.h_ref, ref_stride);
    res.trajectories.push_back(std::move(et));
  }

  StepperConfig cfg;
  cfg.step_size = opt.step_size;
  cfg.mode = opt.mode;
  cfg.max_state_norm = opt.max_state_norm;
  auto rollout = [&](std::size_t i, double horizon, bool keep) {
    try {
      Trajectory tr = integrate(model, ics[i], 0.0, horizon, cfg, &res.trajectories[i].constraint, model_stride);
      if (keep) res.trajectories[i].prediction = std::move(tr);
    } catch (const BlowUpError&) {
    } catch (const NonConvergenceError&) {
    } catch (const SingularMatrixError&) {
    }
  };
  const unsigned threads = opt.timing ? 1u : std::max(1u, std::min<unsigned>(opt.threads, opt.n_eval));
  auto run_batch = [&](double horizon, bool keep) {
    if (threads == 1) {
      for (std::size_t i = 0; i < opt.n_eval; ++i) rollout(i, horizon, keep);
      return;
    }
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < opt.n_eval; i += threads) rollout(i, horizon, keep);
      });
  };
  run_batch(std::min(opt.horizon, 1.0), false);
  const auto start = std::chrono::steady_clock::now();
  run_batch(opt.horizon, true);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (opt.timing) rep.inference_seconds_per_batch = elapsed;

  std::vector<double> rel, sq;
  double max_rel = 0.0;
  for (auto& et : res.trajectories) {
    if (!et.prediction) {
      ++rep.diverged_trajectories;
      continue;
    }
    et.rel_error = mean_rel_state_error(*et.prediction, et.truth);
    if (!et.rel_error) {
      ++rep.diverged_trajectories;
      continue;
    }
    et.sq_constraint_error = mean_sq_constraint_error(*et.prediction, et.constraint);
    rel.push_back(*et.rel_error);
    sq.push_back(et.sq_constraint_error);
    max_rel = std::max(max_rel, max_rel_state_error(*et.prediction, et.truth));
  }
  rep.diverged = rep.diverged_trajectories > 0;
  if (!rep.diverged) {
    rep.rel_state_error = summarize(rel);
    rep.sq_constraint_error = summarize(sq);
    rep.max_rel_state_error = max_rel;
  }
  return res;
}

// Per-trajectory CSV: traj,source,t,u0..u<n-1>,g0..g<m-1>
// `source` is "truth" or "pred"; diverged predictions contribute no rows.
inline void write_trajectories(std::ostream& out, const EvalResult& res) {
  if (res.trajectories.empty()) return;
  const std::size_t n = res.trajectories.front().truth.states.cols();
  const std::size_t m = res.trajectories.front().constraint.count();
  out << "traj,source,t";
  for (std::size_t i = 0; i < n; ++i) out << ",u" << i;
  for (std::size_t i = 0; i < m; ++i) out << ",g" << i;
  out << "\n";
  auto rows = [&](std::size_t j, const char* source, const Trajectory& tr, const ConstraintSpec& c) {
    for (std::size_t k = 0; k < tr.size(); ++k) {
      out << j << ',' << source << ',' << io::format_double(tr.times[k]) << ',' << io::join(tr.state(k));
      const Vector g = c.residual(tr.state(k), tr.times[k]);
      if (!g.empty()) out << ',' << io::join(g);
      out << '\n';
    }
  };
  for (std::size_t j = 0; j < res.trajectories.size(); ++j) {
    const auto& et = res.trajectories[j];
    rows(j, "truth", et.truth, et.constraint);
    if (et.prediction) rows(j, "pred", *et.prediction, et.constraint);
  }
}

struct TrajectoryRow {
  std::size_t traj = 0;
  std::string source;
  double t = 0.0;
  Vector state;
  Vector residual;
};

inline std::vector<TrajectoryRow> read_trajectories(std::istream& in, std::size_t state_dim) {
  std::string line;
  if (!io::next_line(in, line) || line.rfind("traj,source,t", 0) != 0) throw FormatError("not a trajectories CSV");
  const std::size_t columns = io::split(line, ',').size();
  if (columns < 3 + state_dim) throw FormatError("trajectories CSV has too few columns");
  std::vector<TrajectoryRow> out;
  while (io::next_line(in, line)) {
    if (line.empty()) continue;
    const auto c = io::split(line, ',');
    if (c.size() != columns) throw FormatError("trajectories CSV row has wrong column count");
    TrajectoryRow r;
    r.traj = io::parse_uint(c[0]);
    r.source = std::string(c[1]);
    r.t = io::parse_double(c[2]);
    for (std::size_t i = 0; i < state_dim; ++i) r.state.push_back(io::parse_double(c[3 + i]));
    for (std::size_t i = 3 + state_dim; i < columns; ++i) r.residual.push_back(io::parse_double(c[i]));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace pnode
