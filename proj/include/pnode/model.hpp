#pragma once

// Learned dynamics f(u, theta, t): a tanh MLP, optionally in second-order form
// where position derivatives are the observed velocities and the network only
// predicts accelerations.
//
// Checkpoint format (pnode-checkpoint v1), UTF-8 text:
//
//   # pnode-checkpoint v1
//   # system=<name>
//   # mode=<training mode>
//   # gamma=<stabilization gain>
//   # widths=<w0>,<w1>,...,<wL>
//   # state_dim=<n>
//   # positions=<i,j,...>        empty for first-order models
//   # velocities=<i,j,...>
//   # time_features=<0|1>
//   # parameters=<count>
//   <one parameter per line, shortest round-trip decimal>

#include <cmath>
#include <cstdint>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pnode/autodiff.hpp"
#include "pnode/io.hpp"
#include "pnode/numeric.hpp"
#include "pnode/systems.hpp"

namespace pnode {

class MlpDynamics {
 public:
  MlpDynamics() = default;

  // `widths` runs from the network input to its output. For second-order models
  // the output width is the number of velocity components.
  MlpDynamics(std::vector<std::size_t> widths, std::size_t state_dim, std::optional<SecondOrderSplit> second_order,
              bool time_features)
      : widths_(std::move(widths)),
        state_dim_(state_dim),
        second_order_(std::move(second_order)),
        time_features_(time_features) {
    if (widths_.size() < 2) throw Error("MlpDynamics: need at least input and output widths");
    const std::size_t in = state_dim_ + (time_features_ ? 2 : 0);
    if (widths_.front() != in) throw DimensionError("MlpDynamics: input width does not match state");
    const std::size_t out = second_order_ ? second_order_->velocities.size() : state_dim_;
    if (widths_.back() != out) throw DimensionError("MlpDynamics: output width does not match state");
    if (second_order_ && second_order_->positions.size() + second_order_->velocities.size() != state_dim_)
      throw DimensionError("MlpDynamics: second-order split does not cover the state");
    params_.assign(parameter_count(), 0.0);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) n += widths_[l] * widths_[l + 1] + widths_[l + 1];
    return n;
  }
  std::size_t layer_count() const noexcept { return widths_.size() - 1; }
  std::size_t state_dim() const noexcept { return state_dim_; }
  const std::vector<std::size_t>& widths() const noexcept { return widths_; }
  const std::optional<SecondOrderSplit>& second_order() const noexcept { return second_order_; }
  bool time_features() const noexcept { return time_features_; }

  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> parameters() noexcept { return params_; }
  void set_parameters(std::span<const double> theta) {
    if (theta.size() != params_.size()) throw DimensionError("MlpDynamics: parameter count mismatch");
    params_.assign(theta.begin(), theta.end());
  }

  // Offsets of layer l's weight matrix and bias inside the flat parameter vector.
  std::size_t weight_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t k = 0; k < l; ++k) off += widths_[k] * widths_[k + 1] + widths_[k + 1];
    return off;
  }
  std::size_t bias_offset(std::size_t l) const { return weight_offset(l) + widths_[l] * widths_[l + 1]; }

  // Glorot-uniform weights, zero biases.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const double limit = std::sqrt(6.0 / static_cast<double>(widths_[l] + widths_[l + 1]));
      std::uniform_real_distribution<double> dist(-limit, limit);
      const std::size_t w = weight_offset(l);
      for (std::size_t i = 0; i < widths_[l] * widths_[l + 1]; ++i) params_[w + i] = dist(rng);
      const std::size_t b = bias_offset(l);
      for (std::size_t i = 0; i < widths_[l + 1]; ++i) params_[b + i] = 0.0;
    }
  }

  Vector network_input(std::span<const double> u, double t) const {
    Vector x(u.begin(), u.end());
    if (time_features_) {
      x.push_back(std::sin(2.0 * std::numbers::pi * t));
      x.push_back(std::cos(2.0 * std::numbers::pi * t));
    }
    return x;
  }

  Vector forward(std::span<const double> u, double t) const {
    if (u.size() != state_dim_) throw DimensionError("MlpDynamics::forward: state dimension mismatch");
    Vector x = network_input(u, t);
    Vector y;
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const std::size_t in = widths_[l], out = widths_[l + 1];
      y.assign(out, 0.0);
      matvec_kernel(std::span<const double>(params_).subspan(weight_offset(l), in * out), out, in, x, y);
      const double* b = params_.data() + bias_offset(l);
      for (std::size_t i = 0; i < out; ++i) y[i] = y[i] + b[i];
      if (l + 1 < layer_count())
        for (double& v : y) v = std::tanh(v);
      x.swap(y);
    }
    if (!second_order_) return x;
    Vector du(state_dim_);
    const auto& split = *second_order_;
    for (std::size_t i = 0; i < split.positions.size(); ++i) du[split.positions[i]] = u[split.velocities[i]];
    for (std::size_t i = 0; i < split.velocities.size(); ++i) du[split.velocities[i]] = x[i];
    return du;
  }

  Vector operator()(std::span<const double> u, double t) const { return forward(u, t); }

 private:
  std::vector<std::size_t> widths_;
  std::size_t state_dim_ = 0;
  std::optional<SecondOrderSplit> second_order_;
  bool time_features_ = false;
  Vector params_;
};

// Parameter leaves of one model on one tape, plus the constant selection
// matrices used to compose the second-order and time-feature layouts from
// primitive operations.
struct TapeModel {
  std::vector<ad::NodeId> weights;
  std::vector<ad::NodeId> biases;
  std::optional<ad::NodeId> input_embed;    // (n + 2) x n, places u in front of the time features
  std::optional<ad::NodeId> velocity_copy;  // n x n, out[pos_i] = u[vel_i]
  std::optional<ad::NodeId> accel_place;    // n x (n/2), out[vel_i] = net[i]
};

inline TapeModel record_parameters(const MlpDynamics& model, ad::Tape& tape) {
  TapeModel tm;
  const auto theta = model.parameters();
  const auto& w = model.widths();
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    tm.weights.push_back(tape.variable(theta.subspan(model.weight_offset(l), w[l] * w[l + 1]), w[l + 1], w[l]));
    tm.biases.push_back(tape.variable(theta.subspan(model.bias_offset(l), w[l + 1]), w[l + 1], 1));
  }
  const std::size_t n = model.state_dim();
  if (model.time_features()) {
    Matrix e(n + 2, n);
    for (std::size_t i = 0; i < n; ++i) e(i, i) = 1.0;
    tm.input_embed = tape.constant(e.entries(), n + 2, n);
  }
  if (const auto& split = model.second_order()) {
    Matrix copy(n, n);
    for (std::size_t i = 0; i < split->positions.size(); ++i) copy(split->positions[i], split->velocities[i]) = 1.0;
    Matrix place(n, split->velocities.size());
    for (std::size_t i = 0; i < split->velocities.size(); ++i) place(split->velocities[i], i) = 1.0;
    tm.velocity_copy = tape.constant(copy.entries(), n, n);
    tm.accel_place = tape.constant(place.entries(), n, split->velocities.size());
  }
  return tm;
}

// Records f(u, theta, t) on the tape. Values are bit-identical to forward().
inline ad::NodeId forward_with_tape(const MlpDynamics& model, const TapeModel& tm, ad::Tape& tape, ad::NodeId u,
                                    double t) {
  ad::NodeId x = u;
  if (tm.input_embed) {
    Vector features(model.state_dim() + 2, 0.0);
    features[model.state_dim()] = std::sin(2.0 * std::numbers::pi * t);
    features[model.state_dim() + 1] = std::cos(2.0 * std::numbers::pi * t);
    x = tape.add(tape.matvec(*tm.input_embed, u), tape.constant(features));
  }
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    x = tape.add(tape.matvec(tm.weights[l], x), tm.biases[l]);
    if (l + 1 < model.layer_count()) x = tape.tanh(x);
  }
  if (!tm.velocity_copy) return x;
  return tape.add(tape.matvec(*tm.velocity_copy, u), tape.matvec(*tm.accel_place, x));
}

// Flattens the parameter-leaf adjoints into theta order.
inline Vector gather_gradient(const MlpDynamics& model, const TapeModel& tm, const ad::Adjoints& adj) {
  Vector grad(model.parameter_count());
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const auto gw = adj.wrt(tm.weights[l]);
    std::copy(gw.begin(), gw.end(), grad.begin() + static_cast<std::ptrdiff_t>(model.weight_offset(l)));
    const auto gb = adj.wrt(tm.biases[l]);
    std::copy(gb.begin(), gb.end(), grad.begin() + static_cast<std::ptrdiff_t>(model.bias_offset(l)));
  }
  return grad;
}

// Model for a benchmark system: second-order form when the system has one,
// time features only for explicitly time-dependent systems.
inline MlpDynamics make_model(const DynamicalSystem& sys, const std::vector<std::size_t>& hidden,
                              std::uint64_t seed) {
  std::vector<std::size_t> widths;
  widths.push_back(sys.dim + (sys.time_dependent ? 2 : 0));
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(sys.second_order ? sys.second_order->velocities.size() : sys.dim);
  MlpDynamics m(widths, sys.dim, sys.second_order, sys.time_dependent);
  m.initialize(seed);
  return m;
}

struct Checkpoint {
  std::string system;
  std::string mode;
  double gamma = 0.0;
  MlpDynamics model;
};

namespace detail {

inline std::string join_indices(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> parse_indices(std::string_view s) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  for (auto item : io::split(s, ',')) out.push_back(io::parse_uint(item));
  return out;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  const MlpDynamics& m = ck.model;
  out << "# pnode-checkpoint v1\n";
  out << "# system=" << ck.system << "\n";
  out << "# mode=" << ck.mode << "\n";
  out << "# gamma=" << io::format_double(ck.gamma) << "\n";
  out << "# widths=" << detail::join_indices(m.widths()) << "\n";
  out << "# state_dim=" << m.state_dim() << "\n";
  out << "# positions=" << (m.second_order() ? detail::join_indices(m.second_order()->positions) : "") << "\n";
  out << "# velocities=" << (m.second_order() ? detail::join_indices(m.second_order()->velocities) : "") << "\n";
  out << "# time_features=" << (m.time_features() ? 1 : 0) << "\n";
  out << "# parameters=" << m.parameter_count() << "\n";
  for (double v : m.parameters()) out << io::format_double(v) << "\n";
}

inline Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!io::next_line(in, line) || line != "# pnode-checkpoint v1") throw FormatError("not a pnode-checkpoint v1 file");
  Checkpoint ck;
  ck.system = io::expect_header(in, "system");
  ck.mode = io::expect_header(in, "mode");
  ck.gamma = io::parse_double(io::expect_header(in, "gamma"));
  const auto widths = detail::parse_indices(io::expect_header(in, "widths"));
  const std::size_t state_dim = io::parse_uint(io::expect_header(in, "state_dim"));
  const auto positions = detail::parse_indices(io::expect_header(in, "positions"));
  const auto velocities = detail::parse_indices(io::expect_header(in, "velocities"));
  const bool time_features = io::parse_uint(io::expect_header(in, "time_features")) != 0;
  const std::size_t count = io::parse_uint(io::expect_header(in, "parameters"));
  std::optional<SecondOrderSplit> split;
  if (!velocities.empty()) split = SecondOrderSplit{positions, velocities};
  ck.model = MlpDynamics(widths, state_dim, split, time_features);
  if (ck.model.parameter_count() != count) throw FormatError("checkpoint parameter count does not match widths");
  Vector theta;
  theta.reserve(count);
  while (io::next_line(in, line)) {
    if (line.empty()) continue;
    theta.push_back(io::parse_double(line));
  }
  if (theta.size() != count) throw FormatError("checkpoint has the wrong number of parameters");
  ck.model.set_parameters(theta);
  return ck;
}

}  // namespace pnode
