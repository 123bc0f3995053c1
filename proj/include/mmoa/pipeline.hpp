#pragma once

// Layered orchestration. Each layer fans the current input out to agents,
// joins, then fuses / recurs / gates / aggregates; the aggregate becomes the
// next layer's input. Modes:
//   dense            every agent every layer (n*L calls)
//   sparse           layer 1 dense; later layers pick the top-k agents from the
//                    gate of the previous hidden state before invoking anyone
//                    (n + (L-1)*k calls)
//   static_moa       uniform weights, no router state
//   linear_ablation  the LSTM is replaced by h = tanh(W_a z + b_a), no carried state
//
// Failure policy: a failed agent contributes a zero vector to fusion and is
// dropped from aggregation with the remaining weights renormalized. In sparse
// layers a failed pick is replaced by the next-ranked agent not yet tried.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmoa/agents.hpp"
#include "mmoa/router.hpp"

namespace mmoa {

enum class Mode { dense, sparse, static_moa, linear_ablation };

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::dense: return "dense";
    case Mode::sparse: return "sparse";
    case Mode::static_moa: return "static_moa";
    case Mode::linear_ablation: return "linear_ablation";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  if (s == "dense") return Mode::dense;
  if (s == "sparse") return Mode::sparse;
  if (s == "static_moa") return Mode::static_moa;
  if (s == "linear_ablation") return Mode::linear_ablation;
  throw ConfigError("unknown pipeline mode '" + s + "'");
}

struct PipelineConfig {
  std::size_t n_layers = 1;
  Mode mode = Mode::dense;
  std::size_t k = 1;            // sparse only
  std::size_t concurrency = 0;  // max in-flight agent calls per layer, 0 = unbounded
};

// Stateless replacement for the recurrent cell in the linear ablation.
struct AblationParams {
  Matrix weight;  // d_h x d_z
  Vector bias;    // d_h

  // Reuses the LSTM's candidate input block, i.e. the cell with its
  // recurrence and gates removed.
  static AblationParams from_router(const RouterParams& p) {
    return {p.lstm.w_input[kCandidate], p.lstm.bias[kCandidate]};
  }
};

struct LayerTrace {
  std::size_t layer = 0;  // 1-based
  std::vector<std::size_t> invoked;  // every agent called at this layer, ascending
  std::vector<std::size_t> failed;   // subset of invoked
  GateVector gate;                   // g^(l) over all n agents
  std::optional<GateVector> predicted_gate;  // sparse layers >= 2: gate used for selection
  Vector weights;                    // effective aggregation weights (zero for non-contributors)
  std::vector<double> latencies_ms;  // per agent, 0 when not invoked
  Vector output;                     // y^(l)
  std::optional<std::string> text;   // text of the highest-weight contributor
  Vector hidden;                     // h^(l); empty in static mode
};

struct RunReport {
  Mode mode = Mode::dense;
  std::size_t n_agents = 0;
  std::size_t n_layers = 0;
  std::size_t k = 0;
  Vector output;
  std::optional<std::string> text;
  std::vector<LayerTrace> traces;
  std::size_t total_calls = 0;
  double wall_ms = 0.0;
};

namespace detail {

// Invokes `targets` with at most `limit` concurrent calls. Unavailable agents
// yield nullopt; any other exception is rethrown after all workers join.
inline std::vector<std::optional<AgentOutput>> fan_out(const AgentPool& pool, const std::vector<std::size_t>& targets,
                                                       const AgentRequest& base, std::size_t limit) {
  std::vector<std::optional<AgentOutput>> results(targets.size());
  std::vector<std::exception_ptr> errors(targets.size());
  auto work = [&](std::size_t j) {
    AgentRequest req = base;
    req.request_id = base.request_id + "-a" + std::to_string(targets[j]);
    try {
      results[j] = pool.invoke(targets[j], req);
    } catch (const AgentUnavailable&) {
      results[j].reset();
    } catch (...) {
      errors[j] = std::current_exception();
    }
  };

  const std::size_t workers = std::min(limit == 0 ? targets.size() : limit, targets.size());
  if (workers <= 1) {
    for (std::size_t j = 0; j < targets.size(); ++j) work(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
      threads.emplace_back([&] {
        for (std::size_t j = next++; j < targets.size(); j = next++) work(j);
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

}  // namespace detail

class Pipeline {
 public:
  Pipeline(const AgentPool& pool, const RouterParams& params, PipelineConfig cfg)
      : pool_(pool), params_(params), cfg_(cfg), ablation_(AblationParams::from_router(params)) {
    if (cfg_.n_layers < 1) throw ConfigError("pipeline: n_layers must be >= 1");
    if (params_.n_agents != pool_.size())
      throw ConfigError("pipeline: router expects " + std::to_string(params_.n_agents) + " agents, pool has " +
                        std::to_string(pool_.size()));
    if (params_.agent_dim != pool_.dim())
      throw ConfigError("pipeline: router agent_dim " + std::to_string(params_.agent_dim) + " != pool dim " +
                        std::to_string(pool_.dim()));
    if (cfg_.mode == Mode::sparse && (cfg_.k < 1 || cfg_.k > pool_.size()))
      throw ConfigError("pipeline: sparse k=" + std::to_string(cfg_.k) + " outside [1, " +
                        std::to_string(pool_.size()) + "]");
  }

  void set_ablation(AblationParams a) {
    if (a.weight.rows() != params_.hidden_dim() || a.weight.cols() != params_.fusion_dim() ||
        a.bias.dim() != params_.hidden_dim())
      throw ConfigError("pipeline: ablation layer shape does not match router dims");
    ablation_ = std::move(a);
  }

  // Optional per-layer agent pools (A_i^(l)); entry l-1 serves layer l, the
  // base pool covers any layer without an entry. Shapes must match.
  void set_layer_pools(std::vector<const AgentPool*> pools) {
    for (const auto* p : pools)
      if (p == nullptr || p->size() != pool_.size() || p->dim() != pool_.dim())
        throw ConfigError("pipeline: layer pool shape does not match the base pool");
    layer_pools_ = std::move(pools);
  }

  const PipelineConfig& config() const noexcept { return cfg_; }

  RunReport run(const Vector& x, const std::string& prompt = "") const {
    if (x.dim() != pool_.dim())
      throw ShapeError("pipeline: input dim " + std::to_string(x.dim()) + " != agent dim " +
                       std::to_string(pool_.dim()));
    const auto start = std::chrono::steady_clock::now();
    const std::size_t n = pool_.size();

    RunReport report;
    report.mode = cfg_.mode;
    report.n_agents = n;
    report.n_layers = cfg_.n_layers;
    report.k = cfg_.mode == Mode::sparse ? cfg_.k : n;

    LstmState state = LstmState::zeros(params_.hidden_dim());
    Vector current = x;
    std::vector<std::string> prior_text;
    const std::string run_id = "run-" + std::to_string(detail::hash_vector(x, 0) % 1000000007ULL);

    for (std::size_t l = 1; l <= cfg_.n_layers; ++l) {
      const AgentPool& pool = l - 1 < layer_pools_.size() ? *layer_pools_[l - 1] : pool_;
      LayerTrace trace;
      trace.layer = l;
      trace.latencies_ms.assign(n, 0.0);

      AgentRequest req;
      req.input = current;
      req.layer = static_cast<int>(l);
      req.prompt = prompt;
      req.prior_text = prior_text;
      req.request_id = run_id + "-l" + std::to_string(l);

      // Invocation.
      std::vector<std::optional<AgentOutput>> got(n);
      std::vector<std::size_t> targets;
      std::vector<std::size_t> ranking;
      const bool predictive = cfg_.mode == Mode::sparse && l >= 2;
      if (predictive) {
        trace.predicted_gate = gate(params_, state.h);
        ranking = rank_agents(*trace.predicted_gate);
        targets.assign(ranking.begin(), ranking.begin() + static_cast<std::ptrdiff_t>(cfg_.k));
      } else {
        targets.resize(n);
        for (std::size_t i = 0; i < n; ++i) targets[i] = i;
      }
      std::size_t next_rank = targets.size();
      while (!targets.empty()) {
        auto results = detail::fan_out(pool, targets, req, cfg_.concurrency);
        std::size_t lost = 0;
        for (std::size_t j = 0; j < targets.size(); ++j) {
          trace.invoked.push_back(targets[j]);
          if (results[j]) {
            trace.latencies_ms[targets[j]] = results[j]->latency_ms;
            got[targets[j]] = std::move(results[j]);
          } else {
            trace.failed.push_back(targets[j]);
            ++lost;
          }
        }
        targets.clear();
        if (predictive)
          while (lost-- > 0 && next_rank < ranking.size()) targets.push_back(ranking[next_rank++]);
      }
      std::sort(trace.invoked.begin(), trace.invoked.end());
      std::sort(trace.failed.begin(), trace.failed.end());
      report.total_calls += trace.invoked.size();

      std::vector<AgentOutput> outputs(n);
      std::size_t contributors = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (got[i]) {
          outputs[i] = std::move(*got[i]);
          ++contributors;
        } else {
          outputs[i].vec = Vector(pool.dim());
        }
        outputs[i].agent_index = i;
      }
      if (contributors == 0)
        throw PipelineError("layer " + std::to_string(l) + ": every invoked agent failed");

      // Routing.
      switch (cfg_.mode) {
        case Mode::static_moa:
          trace.gate = GateVector::uniform(n);
          break;
        case Mode::dense:
        case Mode::sparse:
          state = recur(params_, fuse(params_, outputs), state);
          trace.gate = gate(params_, state.h);
          trace.hidden = state.h;
          break;
        case Mode::linear_ablation: {
          Vector h = add(matvec(ablation_.weight, fuse(params_, outputs)), ablation_.bias);
          for (auto& v : h) v = std::tanh(v);
          trace.gate = gate(params_, h);
          trace.hidden = std::move(h);
          break;
        }
      }

      // Aggregation over contributors; the gate is used verbatim when every agent delivered.
      if (contributors == n) {
        trace.weights = trace.gate.weights();
      } else {
        double mass = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          if (got[i]) mass += trace.gate[i];
        trace.weights = Vector(n);
        for (std::size_t i = 0; i < n; ++i)
          if (got[i]) trace.weights[i] = trace.gate[i] / mass;
      }
      trace.output = aggregate(trace.weights, outputs);

      std::vector<std::size_t> by_weight;
      for (auto i : rank_agents(GateVector(trace.weights)))
        if (got[i]) by_weight.push_back(i);
      prior_text.clear();
      for (auto i : by_weight)
        if (outputs[i].text) {
          if (!trace.text) trace.text = outputs[i].text;
          prior_text.push_back(*outputs[i].text);
        }

      current = trace.output;
      report.traces.push_back(std::move(trace));
    }

    report.output = current;
    report.text = report.traces.back().text;
    report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return report;
  }

 private:
  const AgentPool& pool_;
  const RouterParams& params_;
  PipelineConfig cfg_;
  AblationParams ablation_;
  std::vector<const AgentPool*> layer_pools_;
};

inline RunReport run_mode(Mode mode, const AgentPool& pool, const RouterParams& params, PipelineConfig cfg,
                          const Vector& x) {
  cfg.mode = mode;
  return Pipeline(pool, params, cfg).run(x);
}

inline RunReport run_dense(const AgentPool& pool, const RouterParams& params, const PipelineConfig& cfg,
                           const Vector& x) {
  return run_mode(Mode::dense, pool, params, cfg, x);
}
inline RunReport run_sparse(const AgentPool& pool, const RouterParams& params, const PipelineConfig& cfg,
                            const Vector& x) {
  return run_mode(Mode::sparse, pool, params, cfg, x);
}
inline RunReport run_static_moa(const AgentPool& pool, const RouterParams& params, const PipelineConfig& cfg,
                                const Vector& x) {
  return run_mode(Mode::static_moa, pool, params, cfg, x);
}
inline RunReport run_linear_ablation(const AgentPool& pool, const RouterParams& params, const PipelineConfig& cfg,
                                     const Vector& x) {
  return run_mode(Mode::linear_ablation, pool, params, cfg, x);
}

struct CallAccount {
  std::size_t calls = 0;
  std::vector<std::size_t> calls_per_layer;
  double relative_to_dense = 0.0;
};

inline CallAccount account_calls(const RunReport& r) {
  CallAccount a;
  for (const auto& t : r.traces) {
    a.calls_per_layer.push_back(t.invoked.size());
    a.calls += t.invoked.size();
  }
  a.relative_to_dense = static_cast<double>(a.calls) / static_cast<double>(r.n_agents * r.n_layers);
  return a;
}

// Call-count law.
inline std::size_t expected_calls(Mode mode, std::size_t n, std::size_t k, std::size_t layers) {
  return mode == Mode::sparse ? n + (layers - 1) * k : n * layers;
}

// ---------------------------------------------------------------------------
// Report serialization

inline constexpr int kReportSchema = 1;

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json traces = nlohmann::json::array();
  for (const auto& t : r.traces) {
    nlohmann::json jt = {{"layer", t.layer},
                         {"invoked", t.invoked},
                         {"failed", t.failed},
                         {"gate", t.gate.weights().values()},
                         {"weights", t.weights.values()},
                         {"latencies_ms", t.latencies_ms},
                         {"output", t.output.values()},
                         {"hidden", t.hidden.values()}};
    jt["predicted_gate"] = t.predicted_gate ? nlohmann::json(t.predicted_gate->weights().values()) : nlohmann::json();
    jt["text"] = t.text ? nlohmann::json(*t.text) : nlohmann::json();
    traces.push_back(std::move(jt));
  }
  nlohmann::json doc = {{"report_schema", kReportSchema},
                        {"mode", to_string(r.mode)},
                        {"n_agents", r.n_agents},
                        {"n_layers", r.n_layers},
                        {"k", r.k},
                        {"total_calls", r.total_calls},
                        {"wall_ms", r.wall_ms},
                        {"traces", std::move(traces)}};
  doc["final"] = {{"vector", r.output.values()}, {"text", r.text ? nlohmann::json(*r.text) : nlohmann::json()}};
  return doc;
}

namespace detail {

template <typename T>
T report_field(const nlohmann::json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) throw DeserializationError(path + key, "missing field");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DeserializationError(path + key, e.what());
  }
}

inline std::optional<std::string> optional_text(const nlohmann::json& obj, const std::string& key,
                                                const std::string& path) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return report_field<std::string>(obj, key, path);
}

}  // namespace detail

inline RunReport report_from_json(const nlohmann::json& doc) {
  using detail::report_field;
  if (report_field<int>(doc, "report_schema", "") != kReportSchema)
    throw DeserializationError("report_schema", "unsupported schema");
  RunReport r;
  try {
    r.mode = parse_mode(report_field<std::string>(doc, "mode", ""));
  } catch (const ConfigError& e) {
    throw DeserializationError("mode", e.what());
  }
  r.n_agents = report_field<std::size_t>(doc, "n_agents", "");
  r.n_layers = report_field<std::size_t>(doc, "n_layers", "");
  r.k = report_field<std::size_t>(doc, "k", "");
  r.total_calls = report_field<std::size_t>(doc, "total_calls", "");
  r.wall_ms = report_field<double>(doc, "wall_ms", "");
  const auto final_doc = report_field<nlohmann::json>(doc, "final", "");
  r.output = Vector(report_field<std::vector<double>>(final_doc, "vector", "final."));
  r.text = detail::optional_text(final_doc, "text", "final.");

  const auto traces = report_field<nlohmann::json>(doc, "traces", "");
  if (!traces.is_array() || traces.size() != r.n_layers)
    throw DeserializationError("traces", "expected one trace per layer");
  std::size_t calls = 0;
  for (std::size_t l = 0; l < traces.size(); ++l) {
    const auto& jt = traces[l];
    const std::string path = "traces[" + std::to_string(l) + "].";
    LayerTrace t;
    t.layer = report_field<std::size_t>(jt, "layer", path);
    t.invoked = report_field<std::vector<std::size_t>>(jt, "invoked", path);
    t.failed = report_field<std::vector<std::size_t>>(jt, "failed", path);
    for (auto i : t.invoked)
      if (i >= r.n_agents) throw DeserializationError(path + "invoked", "agent index out of range");
    try {
      t.gate = GateVector(Vector(report_field<std::vector<double>>(jt, "gate", path)));
      if (jt.contains("predicted_gate") && !jt["predicted_gate"].is_null())
        t.predicted_gate = GateVector(Vector(report_field<std::vector<double>>(jt, "predicted_gate", path)));
    } catch (const Error& e) {
      if (dynamic_cast<const DeserializationError*>(&e)) throw;
      throw DeserializationError(path + "gate", e.what());
    }
    if (t.gate.size() != r.n_agents) throw DeserializationError(path + "gate", "length != n_agents");
    t.weights = Vector(report_field<std::vector<double>>(jt, "weights", path));
    t.latencies_ms = report_field<std::vector<double>>(jt, "latencies_ms", path);
    t.output = Vector(report_field<std::vector<double>>(jt, "output", path));
    t.hidden = Vector(report_field<std::vector<double>>(jt, "hidden", path));
    t.text = detail::optional_text(jt, "text", path);
    calls += t.invoked.size();
    r.traces.push_back(std::move(t));
  }
  if (calls != r.total_calls) throw DeserializationError("total_calls", "does not equal the sum of invoked sets");
  return r;
}

inline void write_report(const RunReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << report_to_json(r).dump(1) << '\n';
  if (!out) throw Error("write to '" + path + "' failed");
}

inline constexpr const char* kTraceCsvHeader = "layer,agent_index,invoked,gate_weight,latency_ms";

inline void write_trace_csv(const RunReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << kTraceCsvHeader << '\n';
  out.precision(17);
  for (const auto& t : r.traces)
    for (std::size_t i = 0; i < r.n_agents; ++i) {
      const bool invoked = std::binary_search(t.invoked.begin(), t.invoked.end(), i);
      out << t.layer << ',' << i << ',' << (invoked ? "true" : "false") << ',' << t.gate[i] << ','
          << t.latencies_ms[i] << '\n';
    }
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace mmoa
