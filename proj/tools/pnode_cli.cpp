// pnode: generate datasets, train, evaluate, compare modes, sweep the SNODE gain.
//
// Exit codes: 0 success, 1 run failure (JSON error object on stderr), 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <typeinfo>

#include <CLI11.hpp>
#include <json.hpp>

#include "pnode.hpp"

namespace fs = std::filesystem;
using namespace pnode;

namespace {

struct CommonFlags {
  std::string config;
  std::string system;
  std::string mode;
  double gamma = 0.0;
  std::uint64_t seed = 0;
  double h = 0.0;
  double horizon = 0.0;
  std::size_t n = 0;
  std::string out_dir = ".";
  bool timing = true;
  std::size_t threads = 0;

  CLI::Option* system_opt = nullptr;
  CLI::Option* mode_opt = nullptr;
  CLI::Option* gamma_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* h_opt = nullptr;
  CLI::Option* horizon_opt = nullptr;
  CLI::Option* n_opt = nullptr;
  CLI::Option* timing_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON experiment config")->check(CLI::ExistingFile);
  f.system_opt = cmd->add_option("--system", f.system, "benchmark system")
                     ->check(CLI::IsMember(system_names()));
  f.mode_opt = cmd->add_option("--mode", f.mode, "node | node_soft | snode | pnode_fast | pnode_robust");
  f.gamma_opt = cmd->add_option("--gamma", f.gamma, "SNODE stabilization gain");
  f.seed_opt = cmd->add_option("--seed", f.seed, "experiment seed");
  f.h_opt = cmd->add_option("--h", f.h, "model integrator step size");
  f.horizon_opt = cmd->add_option("--horizon", f.horizon, "evaluation horizon");
  f.n_opt = cmd->add_option("--n", f.n, "trajectory count (generate/train) or evaluation count (evaluate)");
  cmd->add_option("--out-dir", f.out_dir, "output directory");
  f.timing_opt = cmd->add_flag("--timing,!--no-timing", f.timing, "record wall-clock times");
  f.threads_opt = cmd->add_option("--threads", f.threads, "worker threads");
}

// Config file first, then explicit flags on top. `n_means_eval` routes --n to
// the evaluation count instead of the training trajectory count.
ExperimentConfig resolve(const CommonFlags& f, bool n_means_eval) {
  ExperimentConfig c = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (f.system_opt->count()) c.system = f.system;
  if (f.mode_opt->count()) c.mode = parse_train_mode(f.mode);
  if (f.gamma_opt->count()) c.gamma = f.gamma;
  if (f.seed_opt->count()) c.seed = f.seed;
  if (f.h_opt->count()) c.step_size = f.h;
  if (f.horizon_opt->count()) c.eval_horizon = f.horizon;
  if (f.n_opt->count()) (n_means_eval ? c.eval_n : c.n_trajectories) = f.n;
  if (f.timing_opt->count()) c.timing = f.timing;
  if (f.threads_opt->count()) c.threads = f.threads;
  return c;
}

fs::path prepare(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  return out;
}

std::ifstream open_in(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open '" + p + "'");
  return in;
}

TrajectoryDataset load_or_generate(const std::string& dataset, const ExperimentConfig& c, const DynamicalSystem& sys,
                                   const fs::path& out) {
  if (!dataset.empty()) {
    auto in = open_in(dataset);
    return read_dataset(in);
  }
  TrajectoryDataset ds = generate_for(c, sys);
  auto f = open_out(out / "dataset.csv");
  write_dataset(f, ds);
  return ds;
}

void write_outcome(const fs::path& dir, const RunOutcome& r) {
  fs::create_directories(dir);
  {
    auto f = open_out(dir / "checkpoint.txt");
    write_checkpoint(f, r.checkpoint);
  }
  {
    auto f = open_out(dir / "loss_history.csv");
    write_history(f, r.training.history);
  }
  {
    auto f = open_out(dir / "report.json");
    write_report(f, r.evaluation.report);
  }
  {
    auto f = open_out(dir / "trajectories.csv");
    write_trajectories(f, r.evaluation);
  }
}

void write_rows(const fs::path& p, const ExperimentConfig& c, const DynamicalSystem& sys,
                const std::vector<RunOutcome>& runs) {
  std::vector<CompareRow> rows;
  for (const auto& r : runs) rows.push_back(compare_row(c, sys, r.evaluation.report));
  auto f = open_out(p);
  write_compare(f, rows);
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const DivergenceError*>(&e)) return "DivergenceError";
  if (dynamic_cast<const NonConvergenceError*>(&e)) return "NonConvergenceError";
  if (dynamic_cast<const SingularMatrixError*>(&e)) return "SingularMatrixError";
  if (dynamic_cast<const BlowUpError*>(&e)) return "BlowUpError";
  if (dynamic_cast<const NonFiniteError*>(&e)) return "NonFiniteError";
  if (dynamic_cast<const DimensionError*>(&e)) return "DimensionError";
  if (dynamic_cast<const DataQualityError*>(&e)) return "DataQualityError";
  if (dynamic_cast<const FormatError*>(&e)) return "FormatError";
  if (dynamic_cast<const Error*>(&e)) return "Error";
  return "InternalError";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Projected neural ODEs: data generation, training and evaluation"};
  app.set_help_flag("--help", "print this help and exit");  // -h is taken by the step-size flag --h
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, eval_f, cmp_f, sweep_f;
  std::string train_dataset, eval_checkpoint, cmp_dataset, sweep_dataset;

  auto* gen = app.add_subcommand("generate", "write a reference trajectory dataset");
  add_common(gen, gen_f);
  auto* tr = app.add_subcommand("train", "train a model; writes checkpoint.txt and loss_history.csv");
  add_common(tr, train_f);
  tr->add_option("--dataset", train_dataset, "existing dataset file (default: generate one)")
      ->check(CLI::ExistingFile);
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint; writes report.json and trajectories.csv");
  add_common(ev, eval_f);
  ev->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  auto* cmp = app.add_subcommand("compare", "train and evaluate every mode; writes compare.csv");
  add_common(cmp, cmp_f);
  cmp->add_option("--dataset", cmp_dataset, "existing dataset file")->check(CLI::ExistingFile);
  auto* sweep = app.add_subcommand("sweep-gamma", "SNODE at gamma 0.5, 2, 10; writes sweep_gamma.csv");
  add_common(sweep, sweep_f);
  sweep->add_option("--dataset", sweep_dataset, "existing dataset file")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) {
      const ExperimentConfig c = resolve(gen_f, false);
      const DynamicalSystem sys = system_for(c);
      const fs::path out = prepare(gen_f.out_dir);
      const TrajectoryDataset ds = generate_for(c, sys);
      auto f = open_out(out / "dataset.csv");
      write_dataset(f, ds);
    } else if (*tr) {
      const ExperimentConfig c = resolve(train_f, false);
      const DynamicalSystem sys = system_for(c);
      const fs::path out = prepare(train_f.out_dir);
      const TrajectoryDataset ds = load_or_generate(train_dataset, c, sys, out);
      const TrainResult r = train_for(c, sys, ds);
      {
        auto f = open_out(out / "checkpoint.txt");
        write_checkpoint(f, to_checkpoint(c, r.model));
      }
      auto f = open_out(out / "loss_history.csv");
      write_history(f, r.history);
      if (r.skipped_batches)
        std::cerr << "warning: skipped " << r.skipped_batches << " batches with diverged rollouts\n";
    } else if (*ev) {
      auto in = open_in(eval_checkpoint);
      const Checkpoint ck = read_checkpoint(in);
      ExperimentConfig c = resolve(eval_f, true);
      if (!eval_f.system_opt->count()) c.system = ck.system;
      const DynamicalSystem sys = system_for(c);
      const fs::path out = prepare(eval_f.out_dir);
      const EvalResult r = evaluate_checkpoint(ck, sys, c.eval_options(sys), c.projection_tolerance);
      {
        auto f = open_out(out / "report.json");
        write_report(f, r.report);
      }
      auto f = open_out(out / "trajectories.csv");
      write_trajectories(f, r);
    } else if (*cmp) {
      const ExperimentConfig c = resolve(cmp_f, false);
      const DynamicalSystem sys = system_for(c);
      const fs::path out = prepare(cmp_f.out_dir);
      const TrajectoryDataset ds = load_or_generate(cmp_dataset, c, sys, out);
      const auto runs = run_compare(c, sys, ds);
      for (const auto& r : runs) write_outcome(out / r.checkpoint.mode, r);
      write_rows(out / "compare.csv", c, sys, runs);
    } else if (*sweep) {
      const ExperimentConfig c = resolve(sweep_f, false);
      const DynamicalSystem sys = system_for(c);
      const fs::path out = prepare(sweep_f.out_dir);
      const TrajectoryDataset ds = load_or_generate(sweep_dataset, c, sys, out);
      const auto runs = run_gamma_sweep(c, sys, ds);
      for (const auto& r : runs) write_outcome(out / ("snode_gamma_" + io::format_double(r.checkpoint.gamma)), r);
      write_rows(out / "sweep_gamma.csv", c, sys, runs);
    }
  } catch (const std::exception& e) {
    nlohmann::ordered_json err;
    err["error"] = error_kind(e);
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
