#pragma once

// Training on overlapping trajectory windows.
//
// A window is an independent rollout from its first data point. The loss is the
// mean squared state error over the window's save points (plus an optional
// constraint penalty), and its gradient is the discrete adjoint of the unrolled
// RK4 steps. Projection and stabilization enter the tape as custom nodes whose
// backward rules are the implicit-function VJPs from projection.hpp.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include "pnode/autodiff.hpp"
#include "pnode/dataset.hpp"
#include "pnode/model.hpp"
#include "pnode/odeint.hpp"
#include "pnode/projection.hpp"

namespace pnode {

enum class TrainMode { node, node_soft, snode, pnode_fast, pnode_robust };

inline const std::vector<TrainMode>& all_train_modes() {
  static const std::vector<TrainMode> modes = {TrainMode::node, TrainMode::node_soft, TrainMode::snode,
                                               TrainMode::pnode_fast, TrainMode::pnode_robust};
  return modes;
}

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::node: return "node";
    case TrainMode::node_soft: return "node_soft";
    case TrainMode::snode: return "snode";
    case TrainMode::pnode_fast: return "pnode_fast";
    case TrainMode::pnode_robust: return "pnode_robust";
  }
  return "?";
}

inline TrainMode parse_train_mode(std::string_view s) {
  for (TrainMode m : all_train_modes())
    if (to_string(m) == s) return m;
  throw Error("unknown mode '" + std::string(s) + "'");
}

struct LossConfig {
  TrainMode mode = TrainMode::node;
  double gamma = 0.5;        // stabilization gain, snode only
  double soft_weight = 1.0;  // penalty weight, node_soft only
  double step_size = 0.01;
  double projection_tolerance = 1e-12;
  bool projection_fallback = true;

  void validate() const {
    if (!(soft_weight >= 0.0)) throw Error("LossConfig: soft_weight must be >= 0");
    if (!(step_size > 0.0)) throw Error("LossConfig: step size must be positive");
  }

  // Step mode used when rolling the trained model forward.
  StepMode step_mode() const {
    switch (mode) {
      case TrainMode::snode: return Stabilized{gamma};
      case TrainMode::pnode_fast: {
        ProjectionConfig p = ProjectionConfig::fast(projection_fallback);
        p.tolerance = projection_tolerance;
        return Projected{p};
      }
      case TrainMode::pnode_robust: {
        ProjectionConfig p = ProjectionConfig::robust();
        p.tolerance = projection_tolerance;
        return Projected{p};
      }
      default: return Unconstrained{};
    }
  }
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::size_t window = 10;
  std::size_t stride = 5;
  double target_loss = 0.0;  // stop once an epoch's mean loss drops below this (0 disables)
};

struct LbfgsConfig {
  bool enabled = true;
  std::size_t history = 10;
  std::size_t max_iterations = 200;
  double c1 = 1e-4;
  double shrink = 0.5;
  std::size_t max_backtracks = 40;
  double gradient_tolerance = 1e-12;
};

struct TrainConfig {
  LossConfig loss;
  AdamConfig adam;
  LbfgsConfig lbfgs;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  bool record_wall_time = true;
};

// ---------------------------------------------------------------------------
// Windows

struct Window {
  std::size_t trajectory = 0;
  std::size_t start = 0;
  std::size_t length = 0;
};

inline std::vector<Window> make_windows(const TrajectoryDataset& ds, std::size_t window, std::size_t stride) {
  if (window < 2) throw Error("make_windows: window length must be >= 2");
  if (stride < 1) throw Error("make_windows: stride must be >= 1");
  std::vector<Window> out;
  for (std::size_t j = 0; j < ds.trajectories.size(); ++j) {
    const std::size_t len = ds.trajectories[j].size();
    if (window > len) throw Error("make_windows: window longer than trajectory");
    for (std::size_t s = 0; s + window <= len; s += stride) out.push_back({j, s, window});
  }
  return out;
}

// Whole trajectories as single windows (L-BFGS fine-tuning).
inline std::vector<Window> full_windows(const TrajectoryDataset& ds) {
  std::vector<Window> out;
  for (std::size_t j = 0; j < ds.trajectories.size(); ++j) out.push_back({j, 0, ds.trajectories[j].size()});
  return out;
}

// ---------------------------------------------------------------------------
// Loss

class DivergedRollout : public Error {
 public:
  using Error::Error;
};

struct WindowLoss {
  double loss = 0.0;
  Vector gradient;  // d loss / d theta
};

namespace detail {

inline std::size_t substeps(double dt, double h) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(dt / h)));
}

class TapeRollout {
 public:
  TapeRollout(const MlpDynamics& model, const ConstraintSpec& c, const LossConfig& cfg, ad::Tape& tape)
      : model_(model), c_(c), cfg_(cfg), tape_(tape), tm_(record_parameters(model, tape)) {}

  const TapeModel& parameters() const { return tm_; }

  ad::NodeId rhs(ad::NodeId x, double t) {
    ad::NodeId f = forward_with_tape(model_, tm_, tape_, x, t);
    if (cfg_.mode != TrainMode::snode || c_.empty() || cfg_.gamma == 0.0) return f;
    const auto xv = tape_.value(x);
    Vector at(xv.begin(), xv.end());
    const Vector s = stabilization_term(at, c_, t, cfg_.gamma);
    const ConstraintSpec* c = &c_;
    const double gamma = cfg_.gamma;
    const ad::NodeId in[] = {x};
    const ad::NodeId sn = tape_.custom(in, s, [c, at, t, gamma](std::span<const double> cot) {
      return std::vector<Vector>{stabilization_vjp(at, *c, t, gamma, cot)};
    });
    return tape_.add(f, sn);
  }

  ad::NodeId step(ad::NodeId u, double t, double h) {
    const double half = h / 2.0;
    const ad::NodeId k1 = rhs(u, t);
    const ad::NodeId k2 = rhs(tape_.add(u, tape_.scale(k1, half)), t + half);
    const ad::NodeId k3 = rhs(tape_.add(u, tape_.scale(k2, half)), t + half);
    const ad::NodeId k4 = rhs(tape_.add(u, tape_.scale(k3, h)), t + h);
    const ad::NodeId sum =
        tape_.add(tape_.add(k1, tape_.scale(k2, 2.0)), tape_.add(tape_.scale(k3, 2.0), k4));
    ad::NodeId next = tape_.add(u, tape_.scale(sum, h / 6.0));
    if (!all_finite(tape_.value(next))) throw DivergedRollout("non-finite state in rollout");
    if (cfg_.mode != TrainMode::pnode_fast && cfg_.mode != TrainMode::pnode_robust) return next;
    if (c_.empty()) return next;

    const auto uv = tape_.value(next);
    Vector u_tilde(uv.begin(), uv.end());
    const StepMode step_mode = cfg_.step_mode();
    const auto& mode = std::get<Projected>(step_mode);
    ProjectionResult res;
    try {
      res = project(u_tilde, c_, t + h, mode.projection);
    } catch (const NonConvergenceError& e) {
      throw DivergedRollout(std::string("projection failed in rollout: ") + e.what());
    } catch (const SingularMatrixError& e) {
      throw DivergedRollout(std::string("projection failed in rollout: ") + e.what());
    }
    const ConstraintSpec* c = &c_;
    const double tp = t + h;
    const ad::NodeId in[] = {next};
    const Vector z = res.z;
    return tape_.custom(in, z, [c, u_tilde, res = std::move(res), tp](std::span<const double> cot) {
      return std::vector<Vector>{projection_vjp(u_tilde, res, *c, tp, cot)};
    });
  }

  ad::NodeId residual(ad::NodeId u, double t) {
    const auto uv = tape_.value(u);
    Vector at(uv.begin(), uv.end());
    const Vector g = c_.residual(at, t);
    const ConstraintSpec* c = &c_;
    const ad::NodeId in[] = {u};
    return tape_.custom(in, g, [c, at, t](std::span<const double> cot) {
      return std::vector<Vector>{matvec_transposed(c->jacobian(at, t), cot)};
    });
  }

 private:
  const MlpDynamics& model_;
  const ConstraintSpec& c_;
  const LossConfig& cfg_;
  ad::Tape& tape_;
  TapeModel tm_;
};

}  // namespace detail

// Loss and discrete-adjoint gradient for one window of one trajectory:
//   mean_k ||u_hat(t_k) - u(t_k)||^2  [+ soft_weight * mean_k ||g(u_hat(t_k))||^2 for node_soft]
// with the mean over all `length` save points of the window.
inline WindowLoss window_loss(const MlpDynamics& model, const Trajectory& tr, std::size_t start,
                              std::size_t length, const ConstraintSpec& c, const LossConfig& cfg) {
  cfg.validate();
  if (length < 1 || start + length > tr.size()) throw Error("window_loss: window out of range");
  ad::Tape tape;
  detail::TapeRollout roll(model, c, cfg, tape);
  ad::NodeId u = tape.constant(tr.state(start));
  ad::NodeId err_sum = tape.constant(Vector{0.0});
  ad::NodeId pen_sum = tape.constant(Vector{0.0});
  const bool soft = cfg.mode == TrainMode::node_soft && !c.empty();
  if (soft) {
    const ad::NodeId g = roll.residual(u, tr.times[start]);
    pen_sum = tape.add(pen_sum, tape.dot(g, g));
  }
  for (std::size_t k = start + 1; k < start + length; ++k) {
    const double t0 = tr.times[k - 1];
    const double dt = tr.times[k] - t0;
    const std::size_t n = detail::substeps(dt, cfg.step_size);
    const double h = dt / static_cast<double>(n);
    for (std::size_t s = 0; s < n; ++s) u = roll.step(u, t0 + static_cast<double>(s) * h, h);
    const auto target = tr.state(k);
    Vector neg(target.size());
    for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -target[i];
    const ad::NodeId d = tape.add(u, tape.constant(neg));
    err_sum = tape.add(err_sum, tape.dot(d, d));
    if (soft) {
      const ad::NodeId g = roll.residual(u, tr.times[k]);
      pen_sum = tape.add(pen_sum, tape.dot(g, g));
    }
  }
  const double inv = 1.0 / static_cast<double>(length);
  ad::NodeId loss = tape.scale(err_sum, inv);
  if (soft) loss = tape.add(loss, tape.scale(pen_sum, cfg.soft_weight * inv));

  WindowLoss out;
  out.loss = tape.scalar(loss);
  if (!std::isfinite(out.loss)) throw DivergedRollout("non-finite window loss");
  if (!tape.requires_grad(loss)) {
    out.gradient.assign(model.parameter_count(), 0.0);
    return out;
  }
  const ad::Adjoints adj = tape.backward(loss);
  out.gradient = gather_gradient(model, roll.parameters(), adj);
  if (!all_finite(out.gradient)) throw DivergedRollout("non-finite gradient");
  return out;
}

// Same loss evaluated with the plain integrator path (no tape). Used as the
// forward map for finite-difference gradient checks.
inline double window_loss_value(const MlpDynamics& model, const Trajectory& tr, std::size_t start,
                                std::size_t length, const ConstraintSpec& c, const LossConfig& cfg) {
  const StepMode mode = cfg.step_mode();
  const bool soft = cfg.mode == TrainMode::node_soft && !c.empty();
  Vector u(tr.state(start).begin(), tr.state(start).end());
  double err = 0.0, pen = 0.0;
  if (soft) {
    const Vector g = c.residual(u, tr.times[start]);
    pen += dot(g, g);
  }
  for (std::size_t k = start + 1; k < start + length; ++k) {
    const double t0 = tr.times[k - 1];
    const double dt = tr.times[k] - t0;
    const std::size_t n = detail::substeps(dt, cfg.step_size);
    const double h = dt / static_cast<double>(n);
    for (std::size_t s = 0; s < n; ++s) u = corrected_step(model, u, t0 + static_cast<double>(s) * h, h, mode, &c);
    const Vector d = subtract(u, tr.state(k));
    err += dot(d, d);
    if (soft) {
      const Vector g = c.residual(u, tr.times[k]);
      pen += dot(g, g);
    }
  }
  const double inv = 1.0 / static_cast<double>(length);
  return err * inv + (soft ? pen * cfg.soft_weight * inv : 0.0);
}

// ---------------------------------------------------------------------------
// Batched evaluation

struct BatchResult {
  double loss = 0.0;  // mean over windows
  Vector gradient;    // mean over windows
  bool diverged = false;
};

// Window losses are computed on `threads` workers into per-window slots and
// reduced in window order, so the result does not depend on the thread count.
inline BatchResult batch_loss(const MlpDynamics& model, const TrajectoryDataset& ds,
                              const std::vector<ConstraintSpec>& constraints, std::span<const Window> windows,
                              const LossConfig& cfg, std::size_t threads) {
  std::vector<WindowLoss> slots(windows.size());
  std::vector<char> failed(windows.size(), 0);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Window& w = windows[i];
      try {
        slots[i] = window_loss(model, ds.trajectories[w.trajectory], w.start, w.length, constraints[w.trajectory], cfg);
      } catch (const DivergedRollout&) {
        failed[i] = 1;
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, windows.size()));
  if (threads == 1) {
    work(0, windows.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (windows.size() + threads - 1) / threads;
    for (std::size_t k = 0; k < threads; ++k) {
      const std::size_t b = k * chunk, e = std::min(windows.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }
  BatchResult out;
  out.gradient.assign(model.parameter_count(), 0.0);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (failed[i]) {
      out.diverged = true;
      continue;
    }
    out.loss += slots[i].loss;
    for (std::size_t p = 0; p < out.gradient.size(); ++p) out.gradient[p] += slots[i].gradient[p];
  }
  const double inv = 1.0 / static_cast<double>(windows.size());
  out.loss *= inv;
  for (double& g : out.gradient) g *= inv;
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers

struct HistoryEntry {
  std::size_t epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_time = 0.0;
  std::string stage;  // "adam" or "lbfgs"
};

// Adam with bias correction.
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t n, const AdamConfig& cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> theta, std::span<const double> grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      theta[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }

 private:
  AdamConfig cfg_;
  Vector m_, v_;
  std::size_t t_ = 0;
};

// Objective returning (value, gradient). A non-finite value marks an infeasible point.
using Objective = std::function<std::pair<double, Vector>(std::span<const double>)>;

struct LbfgsIteration {
  double loss = 0.0;
  double grad_norm = 0.0;
  double step = 0.0;
  bool armijo = false;
};

struct LbfgsResult {
  Vector x;
  double loss = 0.0;
  Vector gradient;
  std::vector<LbfgsIteration> iterations;
  bool line_search_failed = false;
};

// Two-loop-recursion L-BFGS with backtracking Armijo line search. Returns the
// best iterate; accepted losses are non-increasing.
inline LbfgsResult lbfgs_minimize(const Objective& objective, std::span<const double> x0, const LbfgsConfig& cfg,
                                  const std::function<void(const LbfgsIteration&)>& on_iteration = {}) {
  LbfgsResult r;
  r.x.assign(x0.begin(), x0.end());
  std::tie(r.loss, r.gradient) = objective(r.x);
  if (!std::isfinite(r.loss)) throw Error("lbfgs: objective is not finite at the starting point");
  const std::size_t n = r.x.size();
  std::deque<Vector> s_hist, y_hist;
  std::deque<double> rho_hist;

  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    const double gnorm = norm2(r.gradient);
    if (gnorm <= cfg.gradient_tolerance) break;

    // Two-loop recursion: d = -H g.
    Vector q = r.gradient;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * dot(s_hist[k], q);
      axpy(-alpha[k], y_hist[k], q);
    }
    const double h0 = s_hist.empty() ? 1.0 / std::max(1.0, gnorm)
                                     : dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
    for (double& v : q) v *= h0;
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * dot(y_hist[k], q);
      axpy(alpha[k] - beta, s_hist[k], q);
    }
    Vector d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = -q[i];
    double slope = dot(r.gradient, d);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      for (std::size_t i = 0; i < n; ++i) d[i] = -r.gradient[i] / std::max(1.0, gnorm);
      slope = dot(r.gradient, d);
    }

    double step = 1.0;
    bool accepted = false;
    Vector x_new(n), g_new;
    double f_new = 0.0;
    for (std::size_t b = 0; b <= cfg.max_backtracks; ++b) {
      for (std::size_t i = 0; i < n; ++i) x_new[i] = r.x[i] + step * d[i];
      std::tie(f_new, g_new) = objective(x_new);
      if (std::isfinite(f_new) && f_new <= r.loss + cfg.c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= cfg.shrink;
    }
    if (!accepted) {
      r.line_search_failed = true;
      break;
    }

    LbfgsIteration rec{f_new, norm2(g_new), step, f_new <= r.loss + cfg.c1 * step * slope};
    Vector s = subtract(x_new, r.x);
    Vector y = subtract(g_new, r.gradient);
    const double sy = dot(s, y);
    if (sy > 1e-12 * norm2(s) * norm2(y)) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (s_hist.size() > cfg.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    r.x = std::move(x_new);
    r.loss = f_new;
    r.gradient = std::move(g_new);
    r.iterations.push_back(rec);
    if (on_iteration) on_iteration(rec);
  }
  return r;
}

struct TrainResult {
  MlpDynamics model;
  std::vector<HistoryEntry> history;
  std::size_t skipped_batches = 0;  // batches with a diverged rollout
  bool lbfgs_line_search_failed = false;
};

inline std::vector<ConstraintSpec> dataset_constraints(const DynamicalSystem& sys, const TrajectoryDataset& ds) {
  std::vector<ConstraintSpec> out;
  for (std::size_t j = 0; j < ds.trajectories.size(); ++j) out.push_back(ds.constraint(sys, j));
  return out;
}

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    if (!enabled_) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

// Adam over shuffled mini-batches of windows.
inline TrainResult train_adam(MlpDynamics model, const DynamicalSystem& sys, const TrajectoryDataset& ds,
                              const TrainConfig& cfg) {
  TrainResult res;
  const auto constraints = dataset_constraints(sys, ds);
  const std::vector<Window> windows = make_windows(ds, cfg.adam.window, cfg.adam.stride);
  if (cfg.adam.batch_size < 1) throw Error("train_adam: batch size must be >= 1");
  AdamOptimizer adam(model.parameter_count(), cfg.adam);
  std::mt19937_64 rng = stream_rng(cfg.seed, 2, 0);
  Stopwatch clock(cfg.record_wall_time);
  std::vector<std::size_t> order(windows.size());
  std::vector<Window> batch;

  for (std::size_t epoch = 1; epoch <= cfg.adam.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t counted = 0;
    Vector grad_sum(model.parameter_count(), 0.0);
    for (std::size_t b = 0; b < order.size(); b += cfg.adam.batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.adam.batch_size); ++i) batch.push_back(windows[order[i]]);
      const BatchResult br = batch_loss(model, ds, constraints, batch, cfg.loss, cfg.threads);
      if (br.diverged) {
        ++res.skipped_batches;
        continue;
      }
      adam.step(model.parameters(), br.gradient);
      loss_sum += br.loss * static_cast<double>(batch.size());
      counted += batch.size();
      axpy(static_cast<double>(batch.size()), br.gradient, grad_sum);
    }
    if (!all_finite(model.parameters()))
      throw Error("train_adam: non-finite parameters at epoch " + std::to_string(epoch));
    const double denom = std::max<std::size_t>(counted, 1);
    for (double& g : grad_sum) g /= denom;
    const double epoch_loss = counted ? loss_sum / denom : std::nan("");
    res.history.push_back({epoch, epoch_loss, norm2(grad_sum), clock.seconds(), "adam"});
    if (cfg.adam.target_loss > 0.0 && counted && epoch_loss < cfg.adam.target_loss) break;
  }
  res.model = std::move(model);
  return res;
}

// L-BFGS on the full-trajectory loss (one window per training trajectory).
inline TrainResult train_lbfgs(MlpDynamics model, const DynamicalSystem& sys, const TrajectoryDataset& ds,
                               const TrainConfig& cfg, std::size_t first_epoch = 1) {
  TrainResult res;
  const auto constraints = dataset_constraints(sys, ds);
  const std::vector<Window> windows = full_windows(ds);
  MlpDynamics probe = model;
  const Objective objective = [&](std::span<const double> theta) -> std::pair<double, Vector> {
    probe.set_parameters(theta);
    const BatchResult br = batch_loss(probe, ds, constraints, windows, cfg.loss, cfg.threads);
    if (br.diverged) return {std::numeric_limits<double>::infinity(), Vector(theta.size(), 0.0)};
    return {br.loss, br.gradient};
  };
  Stopwatch clock(cfg.record_wall_time);
  std::size_t epoch = first_epoch;
  const LbfgsResult lr = lbfgs_minimize(objective, model.parameters(), cfg.lbfgs, [&](const LbfgsIteration& it) {
    if (!it.armijo) throw Error("train_lbfgs: accepted step violates the Armijo condition");
    res.history.push_back({epoch++, it.loss, it.grad_norm, clock.seconds(), "lbfgs"});
  });
  res.lbfgs_line_search_failed = lr.line_search_failed;
  model.set_parameters(lr.x);
  res.model = std::move(model);
  return res;
}

// Adam pretraining on short windows, then optional L-BFGS fine-tuning.
inline TrainResult train(const MlpDynamics& initial, const DynamicalSystem& sys, const TrajectoryDataset& ds,
                         const TrainConfig& cfg) {
  TrainResult res = train_adam(initial, sys, ds, cfg);
  if (cfg.lbfgs.enabled && cfg.lbfgs.max_iterations > 0) {
    TrainResult fine;
    try {
      fine = train_lbfgs(res.model, sys, ds, cfg, res.history.size() + 1);
    } catch (const Error&) {
      // Pretrained model does not roll out stably over full trajectories; keep it.
      return res;
    }
    res.model = std::move(fine.model);
    res.history.insert(res.history.end(), fine.history.begin(), fine.history.end());
    res.lbfgs_line_search_failed = fine.lbfgs_line_search_failed;
  }
  return res;
}

// CSV: epoch,loss,grad_norm,wall_time,stage
inline void write_history(std::ostream& out, const std::vector<HistoryEntry>& history) {
  out << "epoch,loss,grad_norm,wall_time,stage\n";
  for (const auto& h : history)
    out << h.epoch << ',' << io::format_double(h.loss) << ',' << io::format_double(h.grad_norm) << ','
        << io::format_double(h.wall_time) << ',' << h.stage << '\n';
}

inline std::vector<HistoryEntry> read_history(std::istream& in) {
  std::string line;
  if (!io::next_line(in, line) || line != "epoch,loss,grad_norm,wall_time,stage")
    throw FormatError("not a loss history CSV");
  std::vector<HistoryEntry> out;
  while (io::next_line(in, line)) {
    if (line.empty()) continue;
    const auto c = io::split(line, ',');
    if (c.size() != 5) throw FormatError("loss history row has wrong column count");
    out.push_back({io::parse_uint(c[0]), io::parse_double(c[1]), io::parse_double(c[2]), io::parse_double(c[3]),
                   std::string(c[4])});
  }
  return out;
}

}  // namespace pnode
