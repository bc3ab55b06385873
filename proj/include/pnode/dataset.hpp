#pragma once

// Reference trajectory datasets and their on-disk format.
//
// File format (pnode-dataset v1), UTF-8 text:
//
//   # pnode-dataset v1
//   # system=<name>
//   # params=lv_alpha=..;lv_beta=..;lv_gamma=..;lv_delta=..;rb_i1=..;rb_i2=..;rb_i3=..
//   # h_ref=<step>
//   # save_every=<steps>
//   # seed=<u64>
//   # trajectories=<count>
//   # dim=<n>
//   traj,t,u0,...,u<n-1>
//   <index>,<t>,<state...>          one row per save point, grouped by trajectory
//
// Numbers use shortest round-trip formatting.

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "pnode/io.hpp"
#include "pnode/numeric.hpp"
#include "pnode/odeint.hpp"
#include "pnode/systems.hpp"

namespace pnode {

struct TrajectoryDataset {
  std::string system;
  SystemParams params;
  double h_ref = 1e-3;
  std::size_t save_every = 10;
  std::uint64_t seed = 0;
  std::vector<Trajectory> trajectories;

  // Constraint of trajectory i, anchored at its own initial state.
  ConstraintSpec constraint(const DynamicalSystem& sys, std::size_t i) const {
    const Trajectory& tr = trajectories.at(i);
    return sys.constraints(tr.state(0), tr.times[0]);
  }
};

struct GenerateOptions {
  double h_ref = 1e-3;
  std::size_t save_every = 10;
  double t_end = 0.0;  // 0 -> the system's training horizon
  double drift_tolerance = 1e-7;
  std::uint64_t stream = 0;  // RNG purpose stream (0 = training, 1 = evaluation)
};

inline Trajectory reference_trajectory(const DynamicalSystem& sys, std::span<const double> u0, double t_end,
                                       double h_ref, std::size_t save_every) {
  StepperConfig cfg;
  cfg.step_size = h_ref;
  return integrate(sys.true_rhs, u0, 0.0, t_end, cfg, nullptr, save_every);
}

inline TrajectoryDataset generate_dataset(const DynamicalSystem& sys, std::size_t n_trajectories,
                                          std::uint64_t seed, const GenerateOptions& opt = {}) {
  if (n_trajectories < 1) throw Error("generate_dataset: need at least one trajectory");
  TrajectoryDataset ds;
  ds.system = sys.name;
  ds.params = sys.params;
  ds.h_ref = opt.h_ref;
  ds.save_every = opt.save_every;
  ds.seed = seed;
  const double t_end = opt.t_end > 0.0 ? opt.t_end : sys.train_end;
  for (std::size_t i = 0; i < n_trajectories; ++i) {
    auto rng = stream_rng(seed, opt.stream, i);
    const Vector u0 = sys.sample_initial_condition(rng);
    Trajectory tr = reference_trajectory(sys, u0, t_end, opt.h_ref, opt.save_every);
    const ConstraintSpec c = sys.constraints(u0, 0.0);
    for (std::size_t k = 0; k < tr.size(); ++k) {
      const double drift = norm_inf(c.residual(tr.state(k), tr.times[k]));
      if (!(drift <= opt.drift_tolerance))
        throw DataQualityError("generate_dataset: invariant drift " + io::format_double(drift) +
                               " in trajectory " + std::to_string(i) + " at t=" + io::format_double(tr.times[k]));
    }
    ds.trajectories.push_back(std::move(tr));
  }
  return ds;
}

inline std::string format_params(const SystemParams& p) {
  using io::format_double;
  return "lv_alpha=" + format_double(p.lv_alpha) + ";lv_beta=" + format_double(p.lv_beta) +
         ";lv_gamma=" + format_double(p.lv_gamma) + ";lv_delta=" + format_double(p.lv_delta) +
         ";rb_i1=" + format_double(p.rb_i1) + ";rb_i2=" + format_double(p.rb_i2) +
         ";rb_i3=" + format_double(p.rb_i3);
}

inline SystemParams parse_params(std::string_view s) {
  SystemParams p;
  for (auto item : io::split(s, ';')) {
    const auto kv = io::split(item, '=');
    if (kv.size() != 2) throw FormatError("bad parameter entry '" + std::string(item) + "'");
    const double v = io::parse_double(kv[1]);
    if (kv[0] == "lv_alpha") p.lv_alpha = v;
    else if (kv[0] == "lv_beta") p.lv_beta = v;
    else if (kv[0] == "lv_gamma") p.lv_gamma = v;
    else if (kv[0] == "lv_delta") p.lv_delta = v;
    else if (kv[0] == "rb_i1") p.rb_i1 = v;
    else if (kv[0] == "rb_i2") p.rb_i2 = v;
    else if (kv[0] == "rb_i3") p.rb_i3 = v;
    else throw FormatError("unknown parameter '" + std::string(kv[0]) + "'");
  }
  return p;
}

inline void write_dataset(std::ostream& out, const TrajectoryDataset& ds) {
  const std::size_t dim = ds.trajectories.empty() ? 0 : ds.trajectories.front().states.cols();
  out << "# pnode-dataset v1\n";
  out << "# system=" << ds.system << "\n";
  out << "# params=" << format_params(ds.params) << "\n";
  out << "# h_ref=" << io::format_double(ds.h_ref) << "\n";
  out << "# save_every=" << ds.save_every << "\n";
  out << "# seed=" << ds.seed << "\n";
  out << "# trajectories=" << ds.trajectories.size() << "\n";
  out << "# dim=" << dim << "\n";
  out << "traj,t";
  for (std::size_t i = 0; i < dim; ++i) out << ",u" << i;
  out << "\n";
  for (std::size_t j = 0; j < ds.trajectories.size(); ++j) {
    const Trajectory& tr = ds.trajectories[j];
    for (std::size_t k = 0; k < tr.size(); ++k)
      out << j << ',' << io::format_double(tr.times[k]) << ',' << io::join(tr.state(k)) << '\n';
  }
}

inline TrajectoryDataset read_dataset(std::istream& in) {
  std::string line;
  if (!io::next_line(in, line) || line != "# pnode-dataset v1") throw FormatError("not a pnode-dataset v1 file");
  TrajectoryDataset ds;
  ds.system = io::expect_header(in, "system");
  ds.params = parse_params(io::expect_header(in, "params"));
  ds.h_ref = io::parse_double(io::expect_header(in, "h_ref"));
  ds.save_every = io::parse_uint(io::expect_header(in, "save_every"));
  ds.seed = io::parse_uint(io::expect_header(in, "seed"));
  const std::size_t count = io::parse_uint(io::expect_header(in, "trajectories"));
  const std::size_t dim = io::parse_uint(io::expect_header(in, "dim"));
  if (!io::next_line(in, line) || line.rfind("traj,t", 0) != 0) throw FormatError("missing dataset column header");
  ds.trajectories.resize(count);
  Vector state(dim);
  while (io::next_line(in, line)) {
    if (line.empty()) continue;
    const auto cells = io::split(line, ',');
    if (cells.size() != dim + 2) throw FormatError("dataset row has wrong column count: '" + line + "'");
    const std::size_t j = io::parse_uint(cells[0]);
    if (j >= count) throw FormatError("dataset row references trajectory out of range");
    for (std::size_t i = 0; i < dim; ++i) state[i] = io::parse_double(cells[i + 2]);
    ds.trajectories[j].times.push_back(io::parse_double(cells[1]));
    ds.trajectories[j].states.append_row(state);
  }
  for (const auto& tr : ds.trajectories)
    if (tr.size() == 0) throw FormatError("dataset trajectory without rows");
  return ds;
}

}  // namespace pnode
