#pragma once

// Experiment configuration and orchestration: generate -> train -> evaluate,
// the mode comparison matrix and the stabilization-gain sweep, plus the
// report JSON and comparison CSV formats.
//
// Config file (JSON). Every key is optional; defaults shown.
//
//   {
//     "system": "lotka_volterra",
//     "mode": "pnode_fast",            node | node_soft | snode | pnode_fast | pnode_robust
//     "gamma": 0.5,                    stabilization gain (snode)
//     "soft_weight": 1.0,              penalty weight (node_soft)
//     "seed": 1,
//     "n_trajectories": 16,
//     "step_size": 0.01,
//     "projection_tolerance": 1e-12,
//     "hidden": [64, 64],
//     "threads": 1,
//     "timing": true,                  false writes wall_time 0 and null inference time
//     "data":  {"h_ref": 0.001, "save_every": 10, "t_end": 0},         t_end 0 -> system default
//     "adam":  {"lr": 0.001, "epochs": 100, "batch_size": 32, "window": 10, "stride": 5,
//               "target_loss": 0},
//     "lbfgs": {"enabled": true, "max_iterations": 200, "history": 10},
//     "eval":  {"n": 8, "horizon": 0, "seed": 1001, "save_interval": 0.1}  horizon 0 -> system default
//   }

#include <algorithm>
#include <array>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pnode/dataset.hpp"
#include "pnode/metrics.hpp"
#include "pnode/model.hpp"
#include "pnode/systems.hpp"
#include "pnode/training.hpp"

namespace pnode {

struct ExperimentConfig {
  std::string system = "lotka_volterra";
  TrainMode mode = TrainMode::pnode_fast;
  double gamma = 0.5;
  double soft_weight = 1.0;
  std::uint64_t seed = 1;
  std::size_t n_trajectories = 16;
  double step_size = 0.01;
  double projection_tolerance = 1e-12;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t threads = 1;
  bool timing = true;
  GenerateOptions data;
  AdamConfig adam;
  LbfgsConfig lbfgs;
  std::size_t eval_n = 8;
  double eval_horizon = 0.0;
  std::uint64_t eval_seed = 1001;
  double eval_save_interval = 0.1;

  TrainConfig train_config() const {
    TrainConfig c;
    c.loss.mode = mode;
    c.loss.gamma = gamma;
    c.loss.soft_weight = soft_weight;
    c.loss.step_size = step_size;
    c.loss.projection_tolerance = projection_tolerance;
    c.adam = adam;
    c.lbfgs = lbfgs;
    c.seed = seed;
    c.threads = threads;
    c.record_wall_time = timing;
    return c;
  }

  EvalOptions eval_options(const DynamicalSystem& sys) const {
    EvalOptions o;
    o.n_eval = eval_n;
    o.horizon = eval_horizon > 0.0 ? eval_horizon : sys.inference_end;
    o.step_size = step_size;
    o.save_interval = eval_save_interval;
    o.seed = eval_seed;
    o.timing = timing;
    o.threads = static_cast<unsigned>(threads);
    return o;
  }
};

namespace detail {

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::read_key;
  static const std::array<const char*, 16> known = {"system", "mode", "gamma", "soft_weight", "seed",
                                                    "n_trajectories", "step_size", "projection_tolerance",
                                                    "hidden", "threads", "timing", "data", "adam", "lbfgs",
                                                    "eval", "comment"};
  if (!j.is_object()) throw FormatError("config: top level must be an object");
  for (const auto& [key, value] : j.items())
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end())
      throw FormatError("config: unknown key '" + key + "'");
  ExperimentConfig c;
  try {
    read_key(j, "system", c.system);
    if (j.contains("mode")) c.mode = parse_train_mode(j.at("mode").get<std::string>());
    read_key(j, "gamma", c.gamma);
    read_key(j, "soft_weight", c.soft_weight);
    read_key(j, "seed", c.seed);
    read_key(j, "n_trajectories", c.n_trajectories);
    read_key(j, "step_size", c.step_size);
    read_key(j, "projection_tolerance", c.projection_tolerance);
    read_key(j, "hidden", c.hidden);
    read_key(j, "threads", c.threads);
    read_key(j, "timing", c.timing);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      read_key(d, "h_ref", c.data.h_ref);
      read_key(d, "save_every", c.data.save_every);
      read_key(d, "t_end", c.data.t_end);
    }
    if (j.contains("adam")) {
      const auto& a = j.at("adam");
      read_key(a, "lr", c.adam.lr);
      read_key(a, "beta1", c.adam.beta1);
      read_key(a, "beta2", c.adam.beta2);
      read_key(a, "eps", c.adam.eps);
      read_key(a, "epochs", c.adam.epochs);
      read_key(a, "batch_size", c.adam.batch_size);
      read_key(a, "window", c.adam.window);
      read_key(a, "stride", c.adam.stride);
      read_key(a, "target_loss", c.adam.target_loss);
    }
    if (j.contains("lbfgs")) {
      const auto& l = j.at("lbfgs");
      read_key(l, "enabled", c.lbfgs.enabled);
      read_key(l, "max_iterations", c.lbfgs.max_iterations);
      read_key(l, "history", c.lbfgs.history);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      read_key(e, "n", c.eval_n);
      read_key(e, "horizon", c.eval_horizon);
      read_key(e, "seed", c.eval_seed);
      read_key(e, "save_interval", c.eval_save_interval);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  if (c.hidden.empty()) throw Error("config: need at least one hidden layer");
  if (c.n_trajectories < 1) throw Error("config: n_trajectories must be >= 1");
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config '" + path + "': " + e.what());
  }
  return parse_config(j);
}

inline DynamicalSystem system_for(const ExperimentConfig& c) { return make_system(c.system); }

inline TrajectoryDataset generate_for(const ExperimentConfig& c, const DynamicalSystem& sys) {
  return generate_dataset(sys, c.n_trajectories, c.seed, c.data);
}

inline Checkpoint to_checkpoint(const ExperimentConfig& c, MlpDynamics model) {
  Checkpoint ck;
  ck.system = c.system;
  ck.mode = to_string(c.mode);
  ck.gamma = c.gamma;
  ck.model = std::move(model);
  return ck;
}

inline TrainResult train_for(const ExperimentConfig& c, const DynamicalSystem& sys, const TrajectoryDataset& ds) {
  if (ds.system != sys.name) throw Error("dataset system '" + ds.system + "' does not match '" + sys.name + "'");
  return train(make_model(sys, c.hidden, c.seed), sys, ds, c.train_config());
}

// Rolls the checkpoint out in the step mode it was trained with.
inline EvalResult evaluate_checkpoint(const Checkpoint& ck, const DynamicalSystem& sys, EvalOptions opt,
                                      double projection_tolerance = 1e-12) {
  if (ck.system != sys.name)
    throw Error("checkpoint system '" + ck.system + "' does not match '" + sys.name + "'");
  if (ck.model.state_dim() != sys.dim) throw DimensionError("checkpoint state dimension does not match the system");
  LossConfig lc;
  lc.mode = parse_train_mode(ck.mode);
  lc.gamma = ck.gamma;
  lc.projection_tolerance = projection_tolerance;
  opt.mode = lc.step_mode();
  EvalResult r = evaluate(ck.model, sys, opt);
  r.report.mode = ck.mode;
  r.report.gamma = ck.gamma;
  return r;
}

// ---- report JSON (schema "pnode-eval-report/1") ----

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  auto opt_summary = [](const std::optional<Summary>& s) {
    return s ? nlohmann::ordered_json{{"mean", s->mean}, {"std", s->stddev}} : nlohmann::ordered_json(nullptr);
  };
  auto opt_value = [](const std::optional<double>& v) {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["schema"] = "pnode-eval-report/1";
  j["system"] = r.system;
  j["mode"] = r.mode;
  j["gamma"] = r.gamma;
  j["horizon"] = r.horizon;
  j["step_size"] = r.step_size;
  j["n_eval"] = r.n_eval;
  j["seed"] = r.seed;
  j["diverged"] = r.diverged;
  j["diverged_trajectories"] = r.diverged_trajectories;
  j["mean_rel_state_error"] = opt_summary(r.rel_state_error);
  j["mean_sq_constraint_error"] = opt_summary(r.sq_constraint_error);
  j["max_rel_state_error"] = opt_value(r.max_rel_state_error);
  j["inference_seconds_per_batch"] = opt_value(r.inference_seconds_per_batch);
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<std::string>() != "pnode-eval-report/1") throw FormatError("unsupported report schema");
    auto opt_summary = [](const nlohmann::json& v) -> std::optional<Summary> {
      if (v.is_null()) return std::nullopt;
      return Summary{v.at("mean").get<double>(), v.at("std").get<double>()};
    };
    auto opt_value = [](const nlohmann::json& v) -> std::optional<double> {
      if (v.is_null()) return std::nullopt;
      return v.get<double>();
    };
    EvalReport r;
    r.system = j.at("system").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.gamma = j.at("gamma").get<double>();
    r.horizon = j.at("horizon").get<double>();
    r.step_size = j.at("step_size").get<double>();
    r.n_eval = j.at("n_eval").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.diverged = j.at("diverged").get<bool>();
    r.diverged_trajectories = j.at("diverged_trajectories").get<std::size_t>();
    r.rel_state_error = opt_summary(j.at("mean_rel_state_error"));
    r.sq_constraint_error = opt_summary(j.at("mean_sq_constraint_error"));
    r.max_rel_state_error = opt_value(j.at("max_rel_state_error"));
    r.inference_seconds_per_batch = opt_value(j.at("inference_seconds_per_batch"));
    if (r.diverged && (r.rel_state_error || r.sq_constraint_error))
      throw FormatError("diverged report carries error values");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

inline void write_report(std::ostream& out, const EvalReport& r) { out << report_to_json(r).dump(2) << "\n"; }

inline EvalReport read_report(std::istream& in) {
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

// ---- comparison CSV: one row per (system, mode, gamma); empty error cells when diverged ----

inline constexpr const char* compare_header =
    "system,train_time_end,inf_time_end,mode,gamma,mean_rel_state_error,rel_state_error_std,"
    "mean_sq_constraint_error,sq_constraint_error_std,inference_seconds_per_batch,diverged";

struct CompareRow {
  EvalReport report;
  double train_time_end = 0.0;

  bool operator==(const CompareRow&) const = default;
};

inline void write_compare(std::ostream& out, const std::vector<CompareRow>& rows) {
  auto cell = [](const std::optional<double>& v) { return v ? io::format_double(*v) : std::string(); };
  out << compare_header << "\n";
  for (const auto& row : rows) {
    const EvalReport& r = row.report;
    const auto& rel = r.rel_state_error;
    const auto& sq = r.sq_constraint_error;
    out << r.system << ',' << io::format_double(row.train_time_end) << ',' << io::format_double(r.horizon) << ','
        << r.mode << ',' << io::format_double(r.gamma) << ',' << cell(rel ? std::optional(rel->mean) : std::nullopt)
        << ',' << cell(rel ? std::optional(rel->stddev) : std::nullopt) << ','
        << cell(sq ? std::optional(sq->mean) : std::nullopt) << ','
        << cell(sq ? std::optional(sq->stddev) : std::nullopt) << ',' << cell(r.inference_seconds_per_batch) << ','
        << (r.diverged ? "true" : "false") << '\n';
  }
}

// Reads back the columns written by write_compare. Fields not in the CSV
// (step size, seed, counts) are left at their defaults.
inline std::vector<CompareRow> read_compare(std::istream& in) {
  std::string line;
  if (!io::next_line(in, line) || line != compare_header) throw FormatError("not a comparison CSV");
  auto cell = [](std::string_view s) -> std::optional<double> {
    if (s.empty()) return std::nullopt;
    return io::parse_double(s);
  };
  std::vector<CompareRow> rows;
  while (io::next_line(in, line)) {
    if (line.empty()) continue;
    const auto c = io::split(line, ',');
    if (c.size() != 11) throw FormatError("comparison row has wrong column count");
    CompareRow row;
    EvalReport& r = row.report;
    r.system = std::string(c[0]);
    row.train_time_end = io::parse_double(c[1]);
    r.horizon = io::parse_double(c[2]);
    r.mode = std::string(c[3]);
    r.gamma = io::parse_double(c[4]);
    const auto rel_mean = cell(c[5]), rel_std = cell(c[6]), sq_mean = cell(c[7]), sq_std = cell(c[8]);
    if (rel_mean && rel_std) r.rel_state_error = Summary{*rel_mean, *rel_std};
    if (sq_mean && sq_std) r.sq_constraint_error = Summary{*sq_mean, *sq_std};
    r.inference_seconds_per_batch = cell(c[9]);
    if (c[10] != "true" && c[10] != "false") throw FormatError("comparison row: bad diverged flag");
    r.diverged = c[10] == "true";
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- orchestration ----

struct RunOutcome {
  Checkpoint checkpoint;
  TrainResult training;
  EvalResult evaluation;
};

// Trains and evaluates one configuration on an existing dataset.
inline RunOutcome run_experiment(const ExperimentConfig& c, const DynamicalSystem& sys, const TrajectoryDataset& ds) {
  RunOutcome out;
  out.training = train_for(c, sys, ds);
  out.checkpoint = to_checkpoint(c, out.training.model);
  out.evaluation = evaluate_checkpoint(out.checkpoint, sys, c.eval_options(sys), c.projection_tolerance);
  return out;
}

inline CompareRow compare_row(const ExperimentConfig& c, const DynamicalSystem& sys, const EvalReport& r) {
  return {r, c.data.t_end > 0.0 ? c.data.t_end : sys.train_end};
}

// Every training mode on one shared dataset.
inline std::vector<RunOutcome> run_compare(const ExperimentConfig& base, const DynamicalSystem& sys,
                                           const TrajectoryDataset& ds) {
  std::vector<RunOutcome> out;
  for (TrainMode m : all_train_modes()) {
    ExperimentConfig c = base;
    c.mode = m;
    out.push_back(run_experiment(c, sys, ds));
  }
  return out;
}

inline const std::vector<double>& sweep_gammas() {
  static const std::vector<double> g = {0.5, 2.0, 10.0};
  return g;
}

// SNODE trained and evaluated at each stabilization gain.
inline std::vector<RunOutcome> run_gamma_sweep(const ExperimentConfig& base, const DynamicalSystem& sys,
                                               const TrajectoryDataset& ds,
                                               const std::vector<double>& gammas = sweep_gammas()) {
  std::vector<RunOutcome> out;
  for (double g : gammas) {
    ExperimentConfig c = base;
    c.mode = TrainMode::snode;
    c.gamma = g;
    out.push_back(run_experiment(c, sys, ds));
  }
  return out;
}

}  // namespace pnode
