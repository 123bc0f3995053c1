#pragma once

// Router objective: expected agent loss, an entropy term, and an optional
// load-balancing term, with exact gradients back through gate, LSTM and
// fusion (unrolled over however many layers a sample carries).

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mmoa/router.hpp"

namespace mmoa {

// bonus subtracts lambda*H(p) (rewards spread-out gates); penalty adds it.
enum class EntropyMode { bonus, penalty };

struct LossConfig {
  double lambda = 0.0;
  double gamma = 0.0;
  EntropyMode entropy_mode = EntropyMode::bonus;

  void validate() const {
    if (!std::isfinite(lambda) || lambda < 0.0) throw ParameterError("loss.lambda must be finite and >= 0");
    if (!std::isfinite(gamma) || gamma < 0.0) throw ParameterError("loss.gamma must be finite and >= 0");
  }
};

// Entropy in nats, 0 log 0 = 0.
inline double entropy(const Vector& p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}
inline double entropy(const GateVector& p) { return entropy(p.weights()); }

inline double load_balance(const Vector& p) {
  const double target = 1.0 / static_cast<double>(p.dim());
  double acc = 0.0;
  for (double x : p) acc += (x - target) * (x - target);
  return acc;
}
inline double load_balance(const GateVector& p) { return load_balance(p.weights()); }

inline double entropy_sign(EntropyMode mode) { return mode == EntropyMode::bonus ? -1.0 : 1.0; }

inline double router_loss(const Vector& p, const Vector& losses, const LossConfig& cfg) {
  if (p.dim() != losses.dim())
    throw ShapeError("router_loss: " + std::to_string(p.dim()) + " probabilities vs " +
                     std::to_string(losses.dim()) + " losses");
  double expected = 0.0;
  for (std::size_t i = 0; i < p.dim(); ++i) expected += p[i] * losses[i];
  double total = expected;
  if (cfg.lambda != 0.0) total += entropy_sign(cfg.entropy_mode) * cfg.lambda * entropy(p);
  if (cfg.gamma != 0.0) total += cfg.gamma * load_balance(p);
  return total;
}
inline double router_loss(const GateVector& p, const Vector& losses, const LossConfig& cfg) {
  return router_loss(p.weights(), losses, cfg);
}

// d router_loss / d p.
inline Vector router_loss_grad_p(const Vector& p, const Vector& losses, const LossConfig& cfg) {
  if (p.dim() != losses.dim()) throw ShapeError("router_loss_grad_p: length mismatch");
  const double sign = entropy_sign(cfg.entropy_mode);
  const double target = 1.0 / static_cast<double>(p.dim());
  Vector g(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i) {
    g[i] = losses[i];
    // p_i == 0 contributes nothing after the softmax Jacobian.
    if (cfg.lambda != 0.0 && p[i] > 0.0) g[i] += sign * cfg.lambda * -(std::log(p[i]) + 1.0);
    if (cfg.gamma != 0.0) g[i] += cfg.gamma * 2.0 * (p[i] - target);
  }
  return g;
}

// One training example. Each entry of agent_losses is one unrolled layer.
// agent_outputs, when present, holds n output vectors per layer; otherwise
// every agent slot is filled with `input` (requires input dim == agent_dim).
struct TrainSample {
  Vector input;
  std::vector<Vector> agent_losses;
  std::vector<std::vector<Vector>> agent_outputs;

  std::size_t layers() const noexcept { return agent_losses.size(); }
};

namespace detail {

inline std::vector<AgentOutput> layer_outputs(const RouterParams& params, const TrainSample& s, std::size_t layer) {
  std::vector<AgentOutput> outs(params.n_agents);
  for (std::size_t i = 0; i < params.n_agents; ++i) {
    outs[i].agent_index = i;
    if (s.agent_outputs.empty()) {
      outs[i].vec = s.input;
    } else {
      if (s.agent_outputs.size() != s.layers() || s.agent_outputs[layer].size() != params.n_agents)
        throw ShapeError("train sample: agent_outputs must hold n vectors per layer");
      outs[i].vec = s.agent_outputs[layer][i];
    }
  }
  return outs;
}

inline void check_sample(const RouterParams& params, const TrainSample& s) {
  if (s.layers() == 0) throw ShapeError("train sample: no agent losses");
  for (const auto& l : s.agent_losses) {
    if (l.dim() != params.n_agents)
      throw ShapeError("train sample: " + std::to_string(l.dim()) + " agent losses for " +
                       std::to_string(params.n_agents) + " agents");
    if (!l.all_finite()) throw NumericError("train sample: non-finite agent loss");
  }
}

}  // namespace detail

struct SampleForward {
  double loss = 0.0;          // summed over layers
  double entropy = 0.0;       // mean over layers
  double load_balance = 0.0;  // mean over layers
  std::vector<GateVector> gates;
};

inline SampleForward sample_forward(const RouterParams& params, const TrainSample& sample, const LstmState& state_in,
                                    const LossConfig& cfg) {
  detail::check_sample(params, sample);
  SampleForward out;
  LstmState state = state_in;
  for (std::size_t l = 0; l < sample.layers(); ++l) {
    const auto outs = detail::layer_outputs(params, sample, l);
    state = recur(params, fuse(params, outs), state);
    GateVector g = gate(params, state.h);
    out.loss += router_loss(g, sample.agent_losses[l], cfg);
    out.entropy += entropy(g);
    out.load_balance += load_balance(g);
    out.gates.push_back(std::move(g));
  }
  out.entropy /= static_cast<double>(sample.layers());
  out.load_balance /= static_cast<double>(sample.layers());
  return out;
}

struct LossGradient {
  RouterParams grad;  // same shapes as the params
  SampleForward forward;
};

// Exact gradient of the summed per-layer loss w.r.t. every router parameter.
// Agents are frozen: per-layer outputs are inputs, not functions of the gate.
inline LossGradient router_loss_grad(const RouterParams& params, const TrainSample& sample, const LstmState& state_in,
                                     const LossConfig& cfg) {
  detail::check_sample(params, sample);
  const std::size_t L = sample.layers();

  struct LayerTape {
    Vector stacked;
    CellCache cache;
    Vector h;
    Vector p;
  };
  std::vector<LayerTape> tape(L);

  LossGradient out;
  LstmState state = state_in;
  for (std::size_t l = 0; l < L; ++l) {
    const auto outs = detail::layer_outputs(params, sample, l);
    std::vector<Vector> vecs;
    for (const auto& o : outs) vecs.push_back(o.vec);
    tape[l].stacked = concat(vecs);
    const Vector z = fuse(params, outs);
    auto step = lstm_forward(params.lstm, z, state);
    state = step.state;
    tape[l].cache = std::move(step.cache);
    tape[l].h = state.h;
    GateVector g = gate(params, state.h);
    tape[l].p = g.weights();
    out.forward.loss += router_loss(g, sample.agent_losses[l], cfg);
    out.forward.entropy += entropy(g);
    out.forward.load_balance += load_balance(g);
    out.forward.gates.push_back(std::move(g));
  }
  out.forward.entropy /= static_cast<double>(L);
  out.forward.load_balance /= static_cast<double>(L);

  RouterParams& grad = out.grad;
  grad = RouterParams::zeros(params.n_agents, params.agent_dim, params.fusion_dim(), params.hidden_dim());
  Vector dh_next(params.hidden_dim());
  Vector dc_next(params.hidden_dim());
  for (std::size_t l = L; l-- > 0;) {
    const auto& t = tape[l];
    const Vector d_logits = softmax_backward(t.p, router_loss_grad_p(t.p, sample.agent_losses[l], cfg));
    add_outer(grad.gate_w, d_logits, t.h);
    add_into(grad.gate_b, d_logits);
    Vector dh = matvec_t(params.gate_w, d_logits);
    add_into(dh, dh_next);

    auto cell = lstm_backward(params.lstm, t.cache, dh, dc_next);
    for (std::size_t g = 0; g < 4; ++g) {
      add_into(grad.lstm.bias[g], cell.params.bias[g]);
      for (std::size_t k = 0; k < grad.lstm.w_input[g].span().size(); ++k)
        grad.lstm.w_input[g].span()[k] += cell.params.w_input[g].span()[k];
      for (std::size_t k = 0; k < grad.lstm.w_recurrent[g].span().size(); ++k)
        grad.lstm.w_recurrent[g].span()[k] += cell.params.w_recurrent[g].span()[k];
    }
    add_outer(grad.fusion_w, cell.z, t.stacked);
    add_into(grad.fusion_b, cell.z);
    dh_next = std::move(cell.state_in.h);
    dc_next = std::move(cell.state_in.c);
  }

  for_each_tensor(grad, [](const std::string& name, std::span<const double> span) {
    for (double v : span)
      if (!std::isfinite(v)) throw NumericError("router_loss_grad: non-finite gradient in " + name);
  });
  return out;
}

// Fixed per-agent losses on every sample, random inputs of dimension `dim`.
inline std::vector<TrainSample> make_fixed_loss_dataset(std::size_t count, std::size_t dim, const Vector& losses,
                                                        std::uint64_t seed, std::size_t layers = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<TrainSample> data(count);
  for (auto& s : data) {
    s.input = Vector(dim);
    for (auto& v : s.input) v = normal(rng);
    s.agent_losses.assign(layers, losses);
  }
  return data;
}

// Layer-averaged gate over a dataset (first layer of each sample by default).
inline Vector mean_gate(const RouterParams& params, const std::vector<TrainSample>& data, std::size_t layer = 0) {
  Vector acc(params.n_agents);
  const LossConfig plain;
  for (const auto& s : data) add_into(acc, sample_forward(params, s, LstmState::zeros(params.hidden_dim()), plain).gates.at(layer).weights());
  for (auto& v : acc) v /= static_cast<double>(data.size());
  return acc;
}

}  // namespace mmoa
