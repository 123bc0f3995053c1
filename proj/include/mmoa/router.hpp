#pragma once

// The recurrent gating module: fuse agent outputs, advance the LSTM, gate,
// and aggregate. Also top-k sparse selection and flat parameter views used
// by the optimizer and the gradient checker.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mmoa/numkit.hpp"

namespace mmoa {

struct RouterParams {
  std::size_t n_agents = 0;
  std::size_t agent_dim = 0;
  Matrix fusion_w;  // d_z x (n * d)
  Vector fusion_b;  // d_z
  LstmParams lstm;  // (d_z, d_h)
  Matrix gate_w;    // n x d_h
  Vector gate_b;    // n

  std::size_t fusion_dim() const noexcept { return lstm.input_dim; }
  std::size_t hidden_dim() const noexcept { return lstm.hidden_dim; }

  // d_z and d_h of 0 mean "same as agent_dim".
  static RouterParams zeros(std::size_t n_agents, std::size_t agent_dim, std::size_t d_z = 0, std::size_t d_h = 0) {
    if (n_agents == 0 || agent_dim == 0) throw ShapeError("router: n_agents and agent_dim must be positive");
    if (d_z == 0) d_z = agent_dim;
    if (d_h == 0) d_h = agent_dim;
    RouterParams p;
    p.n_agents = n_agents;
    p.agent_dim = agent_dim;
    p.fusion_w = Matrix(d_z, n_agents * agent_dim);
    p.fusion_b = Vector(d_z);
    p.lstm = LstmParams::zeros(d_z, d_h);
    p.gate_w = Matrix(n_agents, d_h);
    p.gate_b = Vector(n_agents);
    return p;
  }

  // Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases,
  // forget-gate bias 1.
  static RouterParams init(std::size_t n_agents, std::size_t agent_dim, std::uint64_t seed, std::size_t d_z = 0,
                           std::size_t d_h = 0) {
    auto p = zeros(n_agents, agent_dim, d_z, d_h);
    std::mt19937_64 rng(seed);
    init_uniform(p.fusion_w, rng);
    p.lstm = init_lstm(p.fusion_dim(), p.hidden_dim(), rng);
    init_uniform(p.gate_w, rng);
    return p;
  }

  void validate() const {
    if (n_agents == 0) throw ShapeError("router: n_agents must be >= 1");
    if (agent_dim == 0) throw ShapeError("router: agent_dim must be >= 1");
    lstm.validate();
    if (fusion_w.rows() != fusion_dim() || fusion_w.cols() != n_agents * agent_dim)
      throw ShapeError("fusion_w has shape " + shape_str(fusion_w));
    if (fusion_b.dim() != fusion_dim()) throw ShapeError("fusion_b has wrong dim");
    if (gate_w.rows() != n_agents || gate_w.cols() != hidden_dim())
      throw ShapeError("gate_w has shape " + shape_str(gate_w));
    if (gate_b.dim() != n_agents) throw ShapeError("gate_b has wrong dim");
  }

  bool operator==(const RouterParams&) const = default;
};

// Visits every tensor of the router in a fixed order with a dotted name.
// Works for const and non-const params; `fn(name, span)`.
template <typename Params, typename Fn>
  requires std::same_as<std::remove_const_t<Params>, RouterParams>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(std::string("fusion_w"), p.fusion_w.span());
  fn(std::string("fusion_b"), p.fusion_b.span());
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string gate = kLstmGateNames[g];
    fn("lstm." + gate + ".w_input", p.lstm.w_input[g].span());
    fn("lstm." + gate + ".w_recurrent", p.lstm.w_recurrent[g].span());
    fn("lstm." + gate + ".bias", p.lstm.bias[g].span());
  }
  fn(std::string("gate_w"), p.gate_w.span());
  fn(std::string("gate_b"), p.gate_b.span());
}

inline std::size_t parameter_count(const RouterParams& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::string&, auto span) { n += span.size(); });
  return n;
}

inline Vector flatten(const RouterParams& p) {
  std::vector<double> out;
  out.reserve(parameter_count(p));
  for_each_tensor(p, [&](const std::string&, auto span) { out.insert(out.end(), span.begin(), span.end()); });
  return Vector(std::move(out));
}

// Copies `flat` into a params object shaped like `shape`.
inline RouterParams unflatten(const RouterParams& shape, const Vector& flat) {
  RouterParams p = shape;
  if (flat.dim() != parameter_count(p)) throw ShapeError("unflatten: wrong parameter count");
  std::size_t at = 0;
  for_each_tensor(p, [&](const std::string&, std::span<double> span) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), span.size(), span.begin());
    at += span.size();
  });
  return p;
}

// Name of the tensor and the element offset within it for a flat index.
inline std::string parameter_name(const RouterParams& p, std::size_t flat_index) {
  std::string name;
  std::size_t at = 0;
  for_each_tensor(p, [&](const std::string& tensor, auto span) {
    if (name.empty() && flat_index < at + span.size()) name = tensor + "[" + std::to_string(flat_index - at) + "]";
    at += span.size();
  });
  return name;
}

// ---------------------------------------------------------------------------

// Probability distribution over agents.
class GateVector {
 public:
  GateVector() = default;
  explicit GateVector(Vector weights) : weights_(std::move(weights)) {
    if (weights_.empty()) throw ShapeError("gate vector must be non-empty");
    double sum = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw NumericError("gate weights must be finite and non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw NumericError("gate weights sum to " + std::to_string(sum));
  }

  static GateVector uniform(std::size_t n) { return GateVector(softmax(Vector(n))); }

  std::size_t size() const noexcept { return weights_.dim(); }
  double operator[](std::size_t i) const { return weights_[i]; }
  const Vector& weights() const noexcept { return weights_; }

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(weights_.begin(), weights_.end()) - weights_.begin());
  }

  bool operator==(const GateVector&) const = default;

 private:
  Vector weights_;
};

struct AgentOutput {
  Vector vec;
  std::optional<std::string> text;
  std::size_t agent_index = 0;
  double latency_ms = 0.0;
};

struct SparsePlan {
  std::size_t k = 0;
  std::vector<std::size_t> selected;  // ranked by gate weight, highest first
  Vector weights;                     // renormalized over `selected`, same order
};

// z = W_f concat(vec_0..vec_{n-1}) + b_f. outputs[i] must carry agent_index i.
inline Vector fuse(const RouterParams& params, std::span<const AgentOutput> outputs) {
  if (outputs.size() != params.n_agents)
    throw ShapeError("fuse: expected " + std::to_string(params.n_agents) + " outputs, got " +
                     std::to_string(outputs.size()));
  std::vector<double> stacked;
  stacked.reserve(params.n_agents * params.agent_dim);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].agent_index != i) throw ShapeError("fuse: outputs not ordered by agent index");
    if (outputs[i].vec.dim() != params.agent_dim)
      throw ShapeError("fuse: agent " + std::to_string(i) + " output has dim " + std::to_string(outputs[i].vec.dim()));
    stacked.insert(stacked.end(), outputs[i].vec.begin(), outputs[i].vec.end());
  }
  return add(matvec(params.fusion_w, Vector(std::move(stacked))), params.fusion_b);
}

inline LstmState recur(const RouterParams& params, const Vector& z, const LstmState& state) {
  return lstm_forward(params.lstm, z, state).state;
}

inline Vector gate_logits(const RouterParams& params, const Vector& h) {
  if (h.dim() != params.hidden_dim())
    throw ShapeError("gate: hidden dim " + std::to_string(h.dim()) + " != " + std::to_string(params.hidden_dim()));
  return add(matvec(params.gate_w, h), params.gate_b);
}

inline GateVector gate(const RouterParams& params, const Vector& h) {
  return GateVector(softmax(gate_logits(params, h)));
}

// y = sum_i weights_i * outputs_i.vec
inline Vector aggregate(const Vector& weights, std::span<const AgentOutput> outputs) {
  if (weights.dim() != outputs.size() || outputs.empty())
    throw ShapeError("aggregate: " + std::to_string(weights.dim()) + " weights for " +
                     std::to_string(outputs.size()) + " outputs");
  const std::size_t d = outputs.front().vec.dim();
  Vector y(d);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].vec.dim() != d) throw ShapeError("aggregate: inconsistent output dims");
    for (std::size_t j = 0; j < d; ++j) y[j] += weights[i] * outputs[i].vec[j];
  }
  return y;
}

inline Vector aggregate(const GateVector& g, std::span<const AgentOutput> outputs) {
  return aggregate(g.weights(), outputs);
}

// Agent indices ordered by gate weight descending; ties go to the lower index.
inline std::vector<std::size_t> rank_agents(const GateVector& g) {
  std::vector<std::size_t> order(g.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
  return order;
}

inline SparsePlan sparse_select(const GateVector& g, std::size_t k) {
  if (k < 1 || k > g.size())
    throw ParameterError("sparse_select: k=" + std::to_string(k) + " outside [1, " + std::to_string(g.size()) + "]");
  SparsePlan plan;
  plan.k = k;
  auto order = rank_agents(g);
  plan.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  double mass = 0.0;
  for (auto i : plan.selected) mass += g[i];
  plan.weights = Vector(k);
  for (std::size_t j = 0; j < k; ++j) plan.weights[j] = g[plan.selected[j]] / mass;
  return plan;
}

struct RouterStep {
  Vector y;
  GateVector gate;
  LstmState state;
};

inline RouterStep router_forward(const RouterParams& params, std::span<const AgentOutput> outputs,
                                 const LstmState& state) {
  const Vector z = fuse(params, outputs);
  LstmState next = recur(params, z, state);
  GateVector g = gate(params, next.h);
  Vector y = aggregate(g, outputs);
  return {std::move(y), std::move(g), std::move(next)};
}

}  // namespace mmoa
