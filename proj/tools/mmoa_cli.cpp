// mmoa: train / run / bench / gradcheck / compare over a JSON config.
//
// Exit codes: 0 ok, 1 unexpected error, 2 config error, 3 training
// divergence, 4 agent failure, 5 gradient mismatch.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmoa/bench.hpp"
#include "mmoa/config.hpp"
#include "mmoa/gradcheck.hpp"
#include "mmoa/pipeline.hpp"
#include "mmoa/serialize.hpp"
#include "mmoa/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmoa;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kConfig = 2, kDiverged = 3, kAgentFailure = 4, kGradMismatch = 5 };

enum class LogLevel { error, warn, info, debug };
LogLevel g_log_level = LogLevel::error;

void log(LogLevel level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= g_log_level) std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

LogLevel parse_log_level(const std::string& s) {
  if (s == "error") return LogLevel::error;
  if (s == "warn") return LogLevel::warn;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  throw ConfigError("MMOA_LOG_LEVEL: expected error, warn, info or debug, got '" + s + "'");
}

struct GradientMismatch : Error {
  using Error::Error;
};

struct Options {
  std::string config;
  std::string output_dir;
  // train
  std::optional<std::size_t> steps;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> weights_out, curve_out;
  // run
  std::string input;
  std::optional<std::string> mode;
  std::optional<std::size_t> k, layers, concurrency;
  std::optional<std::string> weights, report, trace_csv;
  bool zero_init = false;
  // bench / compare
  std::optional<std::string> bench_output;
  std::string mode_a = "sparse", mode_b = "dense";
  // gradcheck
  bool sweep = false;
  bool corrupt_gradient = false;
};

std::string resolve(const Options& o, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute() || o.output_dir.empty()) return p.string();
  return (fs::path(o.output_dir) / p).string();
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void echo(const std::string& command, const AppConfig& cfg, const Options& o) {
  json line = {{"command", command}, {"config", config_to_json(cfg)}, {"output_dir", o.output_dir}};
  std::cout << json{{"effective", line}}.dump() << std::endl;
}

void require(bool present, const std::string& section) {
  if (!present) throw ConfigError("missing section '" + section + "'");
}

RouterParams initial_params(const AppConfig& cfg, std::size_t n, std::size_t d) {
  const auto& r = cfg.router ? *cfg.router : RouterSection{};
  if (r.weights) {
    auto p = load_params(*r.weights);
    if (p.n_agents != n || p.agent_dim != d)
      throw ConfigError("router.weights: file is for n=" + std::to_string(p.n_agents) + " d=" +
                        std::to_string(p.agent_dim) + ", config needs n=" + std::to_string(n) +
                        " d=" + std::to_string(d));
    return p;
  }
  return RouterParams::init(n, d, r.init_seed.value_or(cfg.seed), r.d_z, r.d_h);
}

int cmd_train(AppConfig cfg, const Options& o) {
  require(cfg.train.has_value(), "train");
  auto& t = *cfg.train;
  if (o.steps) t.cfg.steps = *o.steps;
  if (o.lr) t.cfg.learning_rate = *o.lr;
  if (o.seed) t.cfg.seed = *o.seed;
  if (o.weights_out) t.weights_out = *o.weights_out;
  if (o.curve_out) t.curve_out = *o.curve_out;
  if (t.cfg.steps < 1) throw ConfigError("train.steps: must be >= 1");
  if (!(t.cfg.learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be > 0");
  echo("train", cfg, o);

  const auto [n, d] = router_dims(cfg);
  const auto init = initial_params(cfg, n, d);
  std::vector<TrainSample> data;
  if (t.dataset.kind == "fixed_loss") {
    if (t.dataset.losses.dim() != n)
      throw ConfigError("train.dataset.losses: has " + std::to_string(t.dataset.losses.dim()) + " entries for " +
                        std::to_string(n) + " agents");
    data = make_fixed_loss_dataset(t.dataset.count, d, t.dataset.losses, t.dataset.seed, t.dataset.layers);
  } else {
    if (!cfg.agents || !cfg.agents->generated)
      throw ConfigError("train.dataset.kind 'linear_skill' needs agents.generate = 'linear_skill'");
    const auto& g = *cfg.agents->generated;
    const auto space = make_task_space(g.suite, g.count, g.dim, g.seed);
    data = skill_training_set(space, gen_tasks(space, t.dataset.count, t.dataset.seed), t.dataset.layers);
  }
  log(LogLevel::info, "training on " + std::to_string(data.size()) + " samples");
  const auto result = train_router(init, data, t.cfg, cfg.loss.value_or(LossConfig{}));

  const auto weights_path = resolve(o, t.weights_out);
  const auto curve_path = resolve(o, t.curve_out);
  ensure_parent(weights_path);
  ensure_parent(curve_path);
  save_params(result.params, weights_path);
  write_curve_csv(result.curve, curve_path);
  std::cout << json{{"weights", weights_path},
                    {"curve", curve_path},
                    {"final_loss", result.curve.back().mean_loss},
                    {"mean_gate", mean_gate(result.params, data).values()}}
                   .dump()
            << std::endl;
  return kOk;
}

// A JSON array of numbers is a vector input; anything else is a prompt.
std::pair<Vector, std::string> parse_input(const std::string& raw, std::size_t d, std::uint64_t seed) {
  try {
    const auto j = json::parse(raw);
    if (j.is_array()) {
      Vector x = detail::ConfigObject::read<Vector>(j, "--input");
      if (x.dim() != d)
        throw ConfigError("--input: has " + std::to_string(x.dim()) + " entries, agents have dim " + std::to_string(d));
      return {x, ""};
    }
  } catch (const json::parse_error&) {
  }
  return {embed_text(EmbeddingConfig{d, seed}, raw), raw};
}

int cmd_run(AppConfig cfg, const Options& o) {
  require(cfg.agents.has_value(), "agents");
  if (!cfg.pipeline) cfg.pipeline = PipelineConfig{};
  auto& p = *cfg.pipeline;
  if (o.mode) p.mode = parse_mode(*o.mode);
  if (o.k) p.k = *o.k;
  if (o.layers) p.n_layers = *o.layers;
  if (o.concurrency) p.concurrency = *o.concurrency;
  if (!cfg.router) cfg.router = RouterSection{};
  if (o.weights) cfg.router->weights = *o.weights;
  if (o.seed) cfg.seed = *o.seed;
  echo("run", cfg, o);

  const auto [n, d] = router_dims(cfg);
  RouterParams params;
  if (cfg.router->weights || cfg.router->init_seed)
    params = initial_params(cfg, n, d);
  else if (o.zero_init)
    params = RouterParams::zeros(n, d, cfg.router->d_z, cfg.router->d_h);
  else
    throw ConfigError("router: set router.weights or router.init_seed, or pass --zero-init");

  const auto pool = build_pool(cfg.agents->specs);
  const auto [x, prompt] = parse_input(o.input, d, cfg.seed);
  Pipeline pipeline(pool, params, p);
  const auto report = pipeline.run(x, prompt);
  if (o.report) {
    const auto path = resolve(o, *o.report);
    ensure_parent(path);
    write_report(report, path);
  }
  if (o.trace_csv) {
    const auto path = resolve(o, *o.trace_csv);
    ensure_parent(path);
    write_trace_csv(report, path);
  }
  json out = {{"output", report.output.values()}, {"calls", report.total_calls}};
  out["text"] = report.text ? json(*report.text) : json(nullptr);
  std::cout << out.dump() << std::endl;
  return kOk;
}

json win_rate_summary(const std::vector<SuiteRun>& runs, std::size_t comparison) {
  std::vector<double> rates;
  json per_seed = json::array();
  for (const auto& run : runs) {
    const auto& r = run.results[comparison];
    rates.push_back(r.win_rate_a());
    per_seed.push_back({{"seed", run.seed}, {"win_rate", r.win_rate_a()}, {"calls_a", r.a.calls}, {"calls_b", r.b.calls}});
  }
  const auto ms = mean_std(rates);
  const auto& first = runs.front().results[comparison];
  return {{"a", to_string(first.a.mode)},
          {"b", to_string(first.b.mode)},
          {"win_rate_mean", ms.mean},
          {"win_rate_stddev", ms.stddev},
          {"per_seed", per_seed}};
}

int cmd_bench(AppConfig cfg, const Options& o) {
  require(cfg.bench.has_value(), "bench");
  auto& b = *cfg.bench;
  if (o.seed) b.suite.seed = *o.seed;
  if (o.bench_output) b.output = *o.bench_output;
  if (cfg.loss) b.suite.loss = *cfg.loss;
  echo("bench", cfg, o);

  const auto runs = run_skill_suite(b.suite);
  BenchReport rep;
  rep.seed = b.suite.seed;
  for (const auto& run : runs)
    for (const auto& r : run.results) rep.results.push_back(r);
  log(LogLevel::info, "timing table");
  rep.timing = timing_table(b.timing_n, half_rounded_up, b.timing_layers, b.latency, b.suite.seed);

  const auto dir = resolve(o, b.output);
  fs::create_directories(dir);
  const auto at = [&](const char* name) { return (fs::path(dir) / name).string(); };
  emit_report(rep, at("bench.json"), ReportFormat::json);
  emit_report(rep, at("bench.csv"), ReportFormat::csv);
  emit_report(rep, at("bench.md"), ReportFormat::markdown);
  emit_timing(rep.timing, at("timing.csv"), ReportFormat::csv);
  emit_timing(rep.timing, at("timing.md"), ReportFormat::markdown);

  json summary = json::array();
  for (std::size_t c = 0; c < b.suite.comparisons.size(); ++c) summary.push_back(win_rate_summary(runs, c));
  std::cout << json{{"output", dir}, {"comparisons", summary}}.dump() << std::endl;
  return kOk;
}

int cmd_compare(AppConfig cfg, const Options& o) {
  require(cfg.bench.has_value(), "bench");
  auto& b = *cfg.bench;
  if (o.seed) b.suite.seed = *o.seed;
  if (cfg.loss) b.suite.loss = *cfg.loss;
  b.suite.comparisons = {{parse_mode(o.mode_a), parse_mode(o.mode_b)}};
  echo("compare", cfg, o);
  const auto runs = run_skill_suite(b.suite);
  std::cout << win_rate_summary(runs, 0).dump() << std::endl;
  return kOk;
}

int cmd_gradcheck(AppConfig cfg, const Options& o) {
  require(cfg.loss.has_value(), "loss");
  require(cfg.router.has_value(), "router");
  if (!cfg.gradcheck) cfg.gradcheck = GradcheckSection{};
  auto& g = *cfg.gradcheck;
  if (o.seed) g.seed = *o.seed;
  if (o.sweep) g.lambdas = g.gammas = {0.0, 0.1, 1.0};
  echo("gradcheck", cfg, o);

  const auto [n, d] = router_dims(cfg);
  const std::size_t layers = cfg.pipeline ? cfg.pipeline->n_layers : 1;
  const auto lambdas = g.lambdas.empty() ? std::vector<double>{cfg.loss->lambda} : g.lambdas;
  const auto gammas = g.gammas.empty() ? std::vector<double>{cfg.loss->gamma} : g.gammas;

  std::vector<GradCheckCase> cases;
  for (double lam : lambdas)
    for (double gam : gammas) {
      for (auto mode : {EntropyMode::bonus, EntropyMode::penalty})
        for (std::uint64_t s = 0; s < 2; ++s)
          cases.push_back({n, d, layers, g.seed + cases.size(), LossConfig{lam, gam, mode}});
      if (o.sweep)
        for (auto& c : gradcheck_grid(lam, gam, g.seed + 7919 * cases.size())) cases.push_back(c);
    }

  std::function<void(Vector&)> tamper;
  if (o.corrupt_gradient) tamper = [](Vector& v) { v[0] += 1.0; };
  std::optional<GradCheckResult> worst;
  for (const auto& c : cases) {
    auto r = check_gradient(c, g.eps, tamper);
    log(LogLevel::debug, "gradcheck rel_error " + std::to_string(r.relative_error));
    if (!worst || r.relative_error > worst->relative_error) worst = std::move(r);
  }
  const auto& w = *worst;
  const json worst_json = {{"parameter", w.worst_name},
                           {"analytic", w.worst_analytic},
                           {"numeric", w.worst_numeric},
                           {"n", w.config.n},
                           {"dim", w.config.dim},
                           {"layers", w.config.layers},
                           {"seed", w.config.seed},
                           {"lambda", w.config.loss.lambda},
                           {"gamma", w.config.loss.gamma},
                           {"entropy_mode", w.config.loss.entropy_mode == EntropyMode::bonus ? "bonus" : "penalty"}};
  const bool pass = w.relative_error < 1e-5;
  std::cout << json{{"cases", cases.size()}, {"max_relative_error", w.relative_error}, {"pass", pass}, {"worst", worst_json}}
                   .dump()
            << std::endl;
  if (!pass)
    throw GradientMismatch("gradient mismatch: relative error " + std::to_string(w.relative_error) + ", worst coordinate " +
                           w.worst_name);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent-gated mixture of agents"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--output-dir", o.output_dir, "Directory for relative output paths (env MMOA_OUTPUT_DIR)");

  auto add_config = [&](CLI::App* sub) { sub->add_option("-c,--config", o.config, "JSON config file")->required(); };

  auto* train = app.add_subcommand("train", "Train router weights");
  add_config(train);
  train->add_option("--steps", o.steps);
  train->add_option("--lr", o.lr);
  train->add_option("--seed", o.seed);
  train->add_option("--weights-out", o.weights_out);
  train->add_option("--curve-out", o.curve_out);

  auto* run = app.add_subcommand("run", "Run the pipeline on one input");
  add_config(run);
  run->add_option("--input", o.input, "JSON array of numbers, or a text prompt")->required();
  run->add_option("--mode", o.mode, "dense | sparse | static_moa | linear_ablation");
  run->add_option("--k", o.k);
  run->add_option("--layers", o.layers);
  run->add_option("--concurrency", o.concurrency);
  run->add_option("--weights", o.weights);
  run->add_option("--seed", o.seed);
  run->add_flag("--zero-init", o.zero_init, "Use all-zero router parameters");
  run->add_option("--report", o.report, "Write the run report JSON");
  run->add_option("--trace-csv", o.trace_csv, "Write the per-layer trace CSV");

  auto* bench = app.add_subcommand("bench", "Run the benchmark suite and timing table");
  add_config(bench);
  bench->add_option("--seed", o.seed);
  bench->add_option("--output", o.bench_output, "Report directory");

  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  add_config(gradcheck);
  gradcheck->add_option("--seed", o.seed);
  gradcheck->add_flag("--sweep", o.sweep, "Sweep lambda and gamma over {0, 0.1, 1} and the full dims grid");
  gradcheck->add_flag("--corrupt-gradient", o.corrupt_gradient)->group("");

  auto* compare = app.add_subcommand("compare", "Win rate of one mode against another on the bench suite");
  add_config(compare);
  compare->add_option("--a", o.mode_a);
  compare->add_option("--b", o.mode_b);
  compare->add_option("--seed", o.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (const char* level = std::getenv("MMOA_LOG_LEVEL"); level && *level) g_log_level = parse_log_level(level);
    if (o.output_dir.empty())
      if (const char* dir = std::getenv("MMOA_OUTPUT_DIR"); dir && *dir) o.output_dir = dir;
    const auto cfg = load_config(o.config);
    if (*train) return cmd_train(cfg, o);
    if (*run) return cmd_run(cfg, o);
    if (*bench) return cmd_bench(cfg, o);
    if (*gradcheck) return cmd_gradcheck(cfg, o);
    return cmd_compare(cfg, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DeserializationError& e) {
    std::cerr << "config error: " << e.field() << ": " << e.what() << '\n';
    return kConfig;
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const TrainingError& e) {
    std::cerr << "training diverged at step " << e.step() << ": " << e.what() << '\n';
    return kDiverged;
  } catch (const PipelineError& e) {
    std::cerr << "agent failure: " << e.what() << '\n';
    return kAgentFailure;
  } catch (const AgentUnavailable& e) {
    std::cerr << "agent failure: " << e.what() << '\n';
    return kAgentFailure;
  } catch (const GradientMismatch& e) {
    std::cerr << e.what() << '\n';
    return kGradMismatch;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUnexpected;
  }
}
