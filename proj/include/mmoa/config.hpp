#pragma once

// Declarative run configuration. Every section is optional at parse time;
// commands check for the sections they need. Unknown keys and wrongly typed
// values are rejected with their dotted location.

#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmoa/agents.hpp"
#include "mmoa/bench.hpp"
#include "mmoa/loss.hpp"
#include "mmoa/pipeline.hpp"
#include "mmoa/train.hpp"

namespace mmoa {

struct GeneratedAgents {
  TaskGenerator suite = TaskGenerator::linear_skill;
  std::size_t count = 6;
  std::size_t dim = 8;
  std::uint64_t seed = 42;
};

struct AgentsSection {
  std::vector<AgentSpec> specs;
  std::optional<GeneratedAgents> generated;
};

struct RouterSection {
  std::optional<std::size_t> n_agents;
  std::optional<std::size_t> agent_dim;
  std::size_t d_z = 0;
  std::size_t d_h = 0;
  std::optional<std::string> weights;
  std::optional<std::uint64_t> init_seed;
};

struct DatasetSection {
  std::string kind = "fixed_loss";  // fixed_loss | linear_skill
  std::size_t count = 16;
  Vector losses{1.0, 0.2, 0.8};
  std::size_t layers = 1;
  std::uint64_t seed = 42;
};

struct TrainSection {
  TrainConfig cfg;
  DatasetSection dataset;
  std::string weights_out = "weights.json";
  std::string curve_out = "curve.csv";
};

struct BenchSection {
  SuiteConfig suite;
  std::vector<std::size_t> timing_n{1, 2, 4, 6};
  std::size_t timing_layers = 4;
  LatencyModel latency;
  std::string output = "bench";
};

struct GradcheckSection {
  double eps = 1e-5;
  std::uint64_t seed = 1000;
  std::vector<double> lambdas;  // empty: the loss section's value
  std::vector<double> gammas;
};

struct AppConfig {
  std::uint64_t seed = 42;
  std::optional<AgentsSection> agents;
  std::optional<RouterSection> router;
  std::optional<PipelineConfig> pipeline;
  std::optional<LossConfig> loss;
  std::optional<TrainSection> train;
  std::optional<BenchSection> bench;
  std::optional<GradcheckSection> gradcheck;
};

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

// Reads an object while recording which keys were consumed.
class ConfigObject {
 public:
  ConfigObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? "<root>" : path_) + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }
  std::string where(const std::string& key) const { return join_path(path_, key); }

  template <class T>
  std::optional<T> opt(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return read<T>(j_.at(key), where(key));
  }
  template <class T>
  T get(const std::string& key, T fallback) {
    auto v = opt<T>(key);
    return v ? *v : fallback;
  }
  template <class T>
  T require(const std::string& key) {
    auto v = opt<T>(key);
    if (!v) throw ConfigError(where(key) + ": required");
    return *v;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(where(key) + ": unknown key");
  }

  template <class T>
  static T read(const nlohmann::json& v, const std::string& at) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw ConfigError(at + ": expected a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, Vector>) {
      if (!v.is_array()) throw ConfigError(at + ": expected an array of numbers");
      Vector out(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) out[i] = read<double>(v[i], at + "[" + std::to_string(i) + "]");
      return out;
    } else if constexpr (std::is_same_v<T, Matrix>) {
      if (!v.is_array() || v.empty()) throw ConfigError(at + ": expected a non-empty array of rows");
      std::vector<Vector> rows;
      for (std::size_t r = 0; r < v.size(); ++r) rows.push_back(read<Vector>(v[r], at + "[" + std::to_string(r) + "]"));
      Matrix m(rows.size(), rows[0].dim());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].dim() != m.cols()) throw ConfigError(at + "[" + std::to_string(r) + "]: ragged matrix row");
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
      }
      return m;
    } else {
      if (!v.is_array()) throw ConfigError(at + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(read<typename T::value_type>(v[i], at + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline AgentKind parse_agent_kind(const std::string& s, const std::string& at) {
  for (auto k : {AgentKind::mock_linear, AgentKind::mock_noisy, AgentKind::text_echo, AgentKind::http})
    if (s == to_string(k)) return k;
  throw ConfigError(at + ": unknown agent kind '" + s + "'");
}

inline AgentSpec parse_agent(const nlohmann::json& j, const std::string& at) {
  ConfigObject o(j, at);
  AgentSpec s;
  s.id = o.require<std::string>("id");
  s.kind = parse_agent_kind(o.require<std::string>("kind"), o.where("kind"));
  if (auto w = o.opt<Matrix>("weight")) s.mock.weight = std::move(*w);
  if (auto b = o.opt<Vector>("bias")) s.mock.bias = std::move(*b);
  s.dim = o.get<std::size_t>("dim", s.mock.weight.rows());
  if (s.dim == 0) throw ConfigError(o.where("dim") + ": required (or give a weight matrix)");
  s.mock.noise_stddev = o.get<double>("noise_stddev", 0.0);
  s.mock.seed = o.get<std::uint64_t>("seed", 0);
  s.mock.latency_ms = o.get<double>("latency_ms", 0.0);
  s.mock.fail_from_layer = o.opt<int>("fail_from_layer");
  s.http.url = o.get<std::string>("url", "");
  s.http.timeout_ms = o.get<int>("timeout_ms", s.http.timeout_ms);
  s.http.retries = o.get<int>("retries", 0);
  s.http.auth_header = o.get<std::string>("auth_header", "");
  s.persona = o.get<std::string>("persona", "");
  s.embedding_seed = o.get<std::uint64_t>("embedding_seed", s.embedding_seed);
  o.finish();
  return s;
}

inline AgentsSection parse_agents(const nlohmann::json& j, std::uint64_t seed) {
  AgentsSection a;
  if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) a.specs.push_back(parse_agent(j[i], "agents[" + std::to_string(i) + "]"));
    if (a.specs.empty()) throw ConfigError("agents: empty list");
    return a;
  }
  ConfigObject o(j, "agents");
  GeneratedAgents g;
  g.suite = parse_generator(o.require<std::string>("generate"));
  if (g.suite != TaskGenerator::linear_skill) throw ConfigError("agents.generate: only linear_skill defines agents");
  g.count = o.get<std::size_t>("count", g.count);
  g.dim = o.get<std::size_t>("dim", g.dim);
  g.seed = o.get<std::uint64_t>("seed", seed);
  o.finish();
  a.specs = make_task_space(g.suite, g.count, g.dim, g.seed).agents;
  a.generated = g;
  return a;
}

inline RouterSection parse_router(const nlohmann::json& j) {
  ConfigObject o(j, "router");
  RouterSection r;
  r.n_agents = o.opt<std::size_t>("n_agents");
  r.agent_dim = o.opt<std::size_t>("agent_dim");
  r.d_z = o.get<std::size_t>("d_z", 0);
  r.d_h = o.get<std::size_t>("d_h", 0);
  r.weights = o.opt<std::string>("weights");
  r.init_seed = o.opt<std::uint64_t>("init_seed");
  o.finish();
  return r;
}

inline PipelineConfig parse_pipeline(const nlohmann::json& j) {
  ConfigObject o(j, "pipeline");
  PipelineConfig p;
  p.n_layers = o.get<std::size_t>("layers", p.n_layers);
  if (auto m = o.opt<std::string>("mode")) p.mode = parse_mode(*m);
  p.k = o.get<std::size_t>("k", p.k);
  p.concurrency = o.get<std::size_t>("concurrency", p.concurrency);
  o.finish();
  if (p.n_layers < 1) throw ConfigError("pipeline.layers: must be >= 1");
  return p;
}

inline EntropyMode parse_entropy_mode(const std::string& s, const std::string& at) {
  if (s == "bonus") return EntropyMode::bonus;
  if (s == "penalty") return EntropyMode::penalty;
  throw ConfigError(at + ": expected 'bonus' or 'penalty'");
}

inline LossConfig parse_loss(const nlohmann::json& j) {
  ConfigObject o(j, "loss");
  LossConfig l;
  l.lambda = o.get<double>("lambda", l.lambda);
  l.gamma = o.get<double>("gamma", l.gamma);
  if (auto m = o.opt<std::string>("entropy_mode")) l.entropy_mode = parse_entropy_mode(*m, o.where("entropy_mode"));
  o.finish();
  try {
    l.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return l;
}

inline Optimizer parse_optimizer(const std::string& s, const std::string& at) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw ConfigError(at + ": expected 'sgd' or 'adam'");
}

inline TrainSection parse_train(const nlohmann::json& j, std::uint64_t seed) {
  ConfigObject o(j, "train");
  TrainSection t;
  t.cfg.seed = seed;
  if (auto opt = o.opt<std::string>("optimizer")) t.cfg.optimizer = parse_optimizer(*opt, o.where("optimizer"));
  t.cfg.learning_rate = o.get<double>("learning_rate", t.cfg.learning_rate);
  t.cfg.steps = o.get<std::size_t>("steps", t.cfg.steps);
  t.cfg.batch_size = o.get<std::size_t>("batch_size", 0);
  t.cfg.seed = o.get<std::uint64_t>("seed", t.cfg.seed);
  t.cfg.beta1 = o.get<double>("beta1", t.cfg.beta1);
  t.cfg.beta2 = o.get<double>("beta2", t.cfg.beta2);
  t.weights_out = o.get<std::string>("weights_out", t.weights_out);
  t.curve_out = o.get<std::string>("curve_out", t.curve_out);
  t.dataset.seed = t.cfg.seed;
  if (o.has("dataset")) {
    ConfigObject d(o.raw("dataset"), "train.dataset");
    t.dataset.kind = d.get<std::string>("kind", t.dataset.kind);
    if (t.dataset.kind != "fixed_loss" && t.dataset.kind != "linear_skill")
      throw ConfigError("train.dataset.kind: expected 'fixed_loss' or 'linear_skill'");
    t.dataset.count = d.get<std::size_t>("count", t.dataset.count);
    t.dataset.losses = d.get<Vector>("losses", t.dataset.losses);
    t.dataset.layers = d.get<std::size_t>("layers", t.dataset.layers);
    t.dataset.seed = d.get<std::uint64_t>("seed", t.dataset.seed);
    d.finish();
    if (t.dataset.count < 1) throw ConfigError("train.dataset.count: must be >= 1");
    if (t.dataset.layers < 1) throw ConfigError("train.dataset.layers: must be >= 1");
  }
  o.finish();
  if (t.cfg.steps < 1) throw ConfigError("train.steps: must be >= 1");
  if (!(t.cfg.learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be > 0");
  return t;
}

inline BenchSection parse_bench(const nlohmann::json& j, std::uint64_t seed) {
  ConfigObject o(j, "bench");
  BenchSection b;
  b.suite.seed = seed;
  const auto suite = o.get<std::string>("suite", "linear_skill");
  if (suite != "linear_skill") throw ConfigError("bench.suite: only 'linear_skill' is available");
  b.suite.n = o.get<std::size_t>("n", b.suite.n);
  b.suite.dim = o.get<std::size_t>("dim", b.suite.dim);
  b.suite.layers = o.get<std::size_t>("layers", b.suite.layers);
  b.suite.k = o.get<std::size_t>("k", b.suite.k);
  b.suite.train_tasks = o.get<std::size_t>("train_tasks", b.suite.train_tasks);
  b.suite.eval_tasks = o.get<std::size_t>("eval_tasks", b.suite.eval_tasks);
  b.suite.repeats = o.get<std::size_t>("repeats", b.suite.repeats);
  b.suite.train.steps = o.get<std::size_t>("train_steps", b.suite.train.steps);
  b.suite.train.learning_rate = o.get<double>("learning_rate", b.suite.train.learning_rate);
  b.timing_n = o.get<std::vector<std::size_t>>("timing_n", b.timing_n);
  b.timing_layers = o.get<std::size_t>("timing_layers", b.timing_layers);
  b.latency.latency_ms = o.get<double>("latency_ms", b.latency.latency_ms);
  b.latency.concurrency = o.get<std::size_t>("concurrency", b.latency.concurrency);
  b.output = o.get<std::string>("output", b.output);
  o.finish();
  const auto& s = b.suite;
  if (s.n < 1 || s.dim < 1 || s.layers < 1 || s.train_tasks < 1 || s.eval_tasks < 1 || s.repeats < 1 ||
      s.train.steps < 1)
    throw ConfigError("bench: n, dim, layers, train_tasks, eval_tasks, repeats and train_steps must be >= 1");
  if (s.k > s.n) throw ConfigError("bench.k: must be <= n");
  if (b.timing_layers < 1) throw ConfigError("bench.timing_layers: must be >= 1");
  for (auto n : b.timing_n)
    if (n < 1) throw ConfigError("bench.timing_n: entries must be >= 1");
  return b;
}

inline GradcheckSection parse_gradcheck(const nlohmann::json& j) {
  ConfigObject o(j, "gradcheck");
  GradcheckSection g;
  g.eps = o.get<double>("eps", g.eps);
  g.seed = o.get<std::uint64_t>("seed", g.seed);
  g.lambdas = o.get<std::vector<double>>("lambdas", {});
  g.gammas = o.get<std::vector<double>>("gammas", {});
  o.finish();
  if (!(g.eps > 0.0 && g.eps <= 1e-3)) throw ConfigError("gradcheck.eps: must be in (0, 1e-3]");
  return g;
}

}  // namespace detail

inline AppConfig parse_config(const nlohmann::json& doc) {
  detail::ConfigObject o(doc, "");
  AppConfig c;
  c.seed = o.get<std::uint64_t>("seed", c.seed);
  if (o.has("agents")) c.agents = detail::parse_agents(o.raw("agents"), c.seed);
  if (o.has("router")) c.router = detail::parse_router(o.raw("router"));
  if (o.has("pipeline")) c.pipeline = detail::parse_pipeline(o.raw("pipeline"));
  if (o.has("loss")) c.loss = detail::parse_loss(o.raw("loss"));
  if (o.has("train")) c.train = detail::parse_train(o.raw("train"), c.seed);
  if (o.has("bench")) c.bench = detail::parse_bench(o.raw("bench"), c.seed);
  if (o.has("gradcheck")) c.gradcheck = detail::parse_gradcheck(o.raw("gradcheck"));
  o.finish();
  return c;
}

inline AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

// Router dimensions: from the agent pool when present, otherwise router.n_agents / agent_dim.
inline std::pair<std::size_t, std::size_t> router_dims(const AppConfig& c) {
  std::optional<std::size_t> n, d;
  if (c.router) {
    n = c.router->n_agents;
    d = c.router->agent_dim;
  }
  if (c.agents) {
    const std::size_t an = c.agents->specs.size(), ad = c.agents->specs.front().dim;
    if (n && *n != an) throw ConfigError("router.n_agents: " + std::to_string(*n) + " but agents lists " + std::to_string(an));
    if (d && *d != ad) throw ConfigError("router.agent_dim: " + std::to_string(*d) + " but agents have dim " + std::to_string(ad));
    n = an;
    d = ad;
  }
  if (!n || !d) throw ConfigError("router: n_agents and agent_dim are required when no agents section is given");
  if (*n < 1 || *d < 1) throw ConfigError("router: n_agents and agent_dim must be >= 1");
  return {*n, *d};
}

inline nlohmann::json agent_to_json(const AgentSpec& s) {
  nlohmann::json j = {{"id", s.id}, {"kind", to_string(s.kind)}, {"dim", s.dim}};
  switch (s.kind) {
    case AgentKind::mock_linear:
    case AgentKind::mock_noisy: {
      if (s.mock.weight.rows()) {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t r = 0; r < s.mock.weight.rows(); ++r) {
          auto row = s.mock.weight.row(r);
          rows.push_back(std::vector<double>(row.begin(), row.end()));
        }
        j["weight"] = rows;
      }
      if (!s.mock.bias.empty()) j["bias"] = s.mock.bias.values();
      j["noise_stddev"] = s.mock.noise_stddev;
      j["seed"] = s.mock.seed;
      j["latency_ms"] = s.mock.latency_ms;
      if (s.mock.fail_from_layer) j["fail_from_layer"] = *s.mock.fail_from_layer;
      break;
    }
    case AgentKind::text_echo:
      j["persona"] = s.persona;
      j["embedding_seed"] = s.embedding_seed;
      break;
    case AgentKind::http:
      j["url"] = s.http.url;
      j["timeout_ms"] = s.http.timeout_ms;
      j["retries"] = s.http.retries;
      j["auth_header"] = s.http.auth_header.empty() ? "" : "<set>";
      j["embedding_seed"] = s.embedding_seed;
      break;
  }
  return j;
}

// Effective values of every present section, for the startup echo.
inline nlohmann::json config_to_json(const AppConfig& c) {
  nlohmann::json j = {{"seed", c.seed}};
  if (c.agents) {
    if (c.agents->generated) {
      const auto& g = *c.agents->generated;
      j["agents"] = {{"generate", to_string(g.suite)}, {"count", g.count}, {"dim", g.dim}, {"seed", g.seed}};
    } else {
      j["agents"] = nlohmann::json::array();
      for (const auto& s : c.agents->specs) j["agents"].push_back(agent_to_json(s));
    }
  }
  if (c.router) {
    auto& r = j["router"];
    r = {{"d_z", c.router->d_z}, {"d_h", c.router->d_h}};
    if (c.router->n_agents) r["n_agents"] = *c.router->n_agents;
    if (c.router->agent_dim) r["agent_dim"] = *c.router->agent_dim;
    if (c.router->weights) r["weights"] = *c.router->weights;
    if (c.router->init_seed) r["init_seed"] = *c.router->init_seed;
  }
  if (c.pipeline)
    j["pipeline"] = {{"layers", c.pipeline->n_layers},
                     {"mode", to_string(c.pipeline->mode)},
                     {"k", c.pipeline->k},
                     {"concurrency", c.pipeline->concurrency}};
  if (c.loss)
    j["loss"] = {{"lambda", c.loss->lambda},
                 {"gamma", c.loss->gamma},
                 {"entropy_mode", c.loss->entropy_mode == EntropyMode::bonus ? "bonus" : "penalty"}};
  if (c.train) {
    const auto& t = *c.train;
    j["train"] = {{"optimizer", t.cfg.optimizer == Optimizer::sgd ? "sgd" : "adam"},
                  {"learning_rate", t.cfg.learning_rate},
                  {"steps", t.cfg.steps},
                  {"batch_size", t.cfg.batch_size},
                  {"seed", t.cfg.seed},
                  {"beta1", t.cfg.beta1},
                  {"beta2", t.cfg.beta2},
                  {"weights_out", t.weights_out},
                  {"curve_out", t.curve_out},
                  {"dataset",
                   {{"kind", t.dataset.kind},
                    {"count", t.dataset.count},
                    {"losses", t.dataset.losses.values()},
                    {"layers", t.dataset.layers},
                    {"seed", t.dataset.seed}}}};
  }
  if (c.bench) {
    const auto& b = *c.bench;
    j["bench"] = {{"suite", "linear_skill"},
                  {"n", b.suite.n},
                  {"dim", b.suite.dim},
                  {"layers", b.suite.layers},
                  {"k", b.suite.effective_k()},
                  {"train_tasks", b.suite.train_tasks},
                  {"eval_tasks", b.suite.eval_tasks},
                  {"repeats", b.suite.repeats},
                  {"train_steps", b.suite.train.steps},
                  {"learning_rate", b.suite.train.learning_rate},
                  {"timing_n", b.timing_n},
                  {"timing_layers", b.timing_layers},
                  {"latency_ms", b.latency.latency_ms},
                  {"concurrency", b.latency.concurrency},
                  {"output", b.output}};
  }
  if (c.gradcheck)
    j["gradcheck"] = {{"eps", c.gradcheck->eps},
                      {"seed", c.gradcheck->seed},
                      {"lambdas", c.gradcheck->lambdas},
                      {"gammas", c.gradcheck->gammas}};
  return j;
}

}  // namespace mmoa
