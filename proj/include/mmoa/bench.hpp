#pragma once

// Synthetic evaluation: task generators, distance judging between pipeline
// modes, call/latency tables and report files.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmoa/agents.hpp"
#include "mmoa/loss.hpp"
#include "mmoa/pipeline.hpp"
#include "mmoa/train.hpp"

namespace mmoa {

enum class TaskGenerator { linear_skill, clustered };

inline const char* to_string(TaskGenerator g) { return g == TaskGenerator::linear_skill ? "linear_skill" : "clustered"; }

inline TaskGenerator parse_generator(const std::string& s) {
  if (s == "linear_skill") return TaskGenerator::linear_skill;
  if (s == "clustered") return TaskGenerator::clustered;
  throw ConfigError("unknown task generator '" + s + "'");
}

struct SyntheticTask {
  Vector input;
  Vector target;
  std::size_t region = 0;  // linear_skill: index of the agent whose map produced the target
  double difficulty = 0.0;  // distance of the input from its region center
};

// The fixed world a suite samples from: region centers and, for
// linear_skill, one affine agent per region.
//
// linear_skill agent i is A_i(v) = P_i v + (I - P_i) u_i with P_i the
// orthogonal projector onto a random dim/2 subspace. A_i is idempotent, so the
// right agent maps the right answer to itself at every layer.
struct TaskSpace {
  TaskGenerator generator = TaskGenerator::linear_skill;
  std::size_t dim = 0;
  double radius = 3.0;
  double spread = 0.3;
  std::vector<Vector> centers;
  std::vector<AgentSpec> agents;  // empty for clustered
};

namespace detail {

inline Vector random_direction(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector v(dim);
  double norm = 0.0;
  while (norm < 1e-6) {
    for (auto& x : v) x = normal(rng);
    norm = l2_norm(v);
  }
  for (auto& x : v) x /= norm;
  return v;
}

// Orthonormal basis of a random `rank`-dimensional subspace (Gram-Schmidt).
inline std::vector<Vector> random_basis(std::size_t dim, std::size_t rank, std::mt19937_64& rng) {
  std::vector<Vector> basis;
  while (basis.size() < rank) {
    Vector v = random_direction(dim, rng);
    for (const auto& q : basis) add_into(v, q, -dot(v, q));
    const double norm = l2_norm(v);
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

inline AgentSpec skill_agent(std::size_t i, std::size_t dim, std::mt19937_64& rng) {
  const auto basis = random_basis(dim, std::max<std::size_t>(1, dim / 2), rng);
  Matrix p(dim, dim);
  for (const auto& q : basis) add_outer(p, q, q);
  Vector u = random_direction(dim, rng);
  for (auto& x : u) x *= 2.0;
  Vector b = u;
  add_into(b, matvec(p, u), -1.0);
  return mock_linear_agent("skill" + std::to_string(i), std::move(p), std::move(b));
}

}  // namespace detail

inline TaskSpace make_task_space(TaskGenerator generator, std::size_t regions, std::size_t dim, std::uint64_t seed) {
  if (regions < 1 || dim < 1) throw ParameterError("task space needs regions >= 1 and dim >= 1");
  TaskSpace s;
  s.generator = generator;
  s.dim = dim;
  std::mt19937_64 rng(detail::mix64(seed ^ 0x7A5C0000ULL));
  for (std::size_t r = 0; r < regions; ++r) {
    Vector c = detail::random_direction(dim, rng);
    for (auto& x : c) x *= s.radius;
    s.centers.push_back(std::move(c));
  }
  if (generator == TaskGenerator::linear_skill)
    for (std::size_t r = 0; r < regions; ++r) s.agents.push_back(detail::skill_agent(r, dim, rng));
  return s;
}

inline std::vector<SyntheticTask> gen_tasks(const TaskSpace& space, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw ParameterError("gen_tasks: count must be >= 1");
  std::mt19937_64 rng(detail::mix64(seed ^ 0x7A5C0001ULL));
  std::normal_distribution<double> normal(0.0, space.spread);
  std::uniform_int_distribution<std::size_t> pick(0, space.centers.size() - 1);
  std::vector<SyntheticTask> tasks(count);
  for (auto& t : tasks) {
    t.region = pick(rng);
    t.input = space.centers[t.region];
    Vector noise(space.dim);
    for (auto& x : noise) x = normal(rng);
    add_into(t.input, noise);
    t.difficulty = l2_norm(noise);
    if (space.generator == TaskGenerator::linear_skill) {
      const auto& m = space.agents[t.region].mock;
      t.target = add(matvec(m.weight, t.input), m.bias);
    } else {
      t.target = space.centers[t.region];
    }
  }
  return tasks;
}

inline std::vector<SyntheticTask> gen_tasks(std::size_t count, std::size_t dim, std::uint64_t seed,
                                            TaskGenerator generator, std::size_t regions = 1) {
  return gen_tasks(make_task_space(generator, regions, dim, seed), count, seed);
}

inline double mean_sq_distance(const Vector& a, const Vector& b) {
  const double d = l2_distance(a, b);
  return d * d / static_cast<double>(a.dim());
}

// Teacher-forced router training data: layer 1 sees the task input, later
// layers see the target (what a perfect previous layer would have produced).
// Each agent's loss is its mean squared distance to the target.
inline std::vector<TrainSample> skill_training_set(const TaskSpace& space, const std::vector<SyntheticTask>& tasks,
                                                   std::size_t layers) {
  if (space.agents.empty()) throw ParameterError("skill_training_set needs a linear_skill space");
  std::vector<TrainSample> data;
  data.reserve(tasks.size());
  for (const auto& t : tasks) {
    TrainSample s;
    s.input = t.input;
    for (std::size_t l = 0; l < layers; ++l) {
      const Vector& in = l == 0 ? t.input : t.target;
      std::vector<Vector> outs;
      Vector losses(space.agents.size());
      for (std::size_t i = 0; i < space.agents.size(); ++i) {
        const auto& m = space.agents[i].mock;
        outs.push_back(add(matvec(m.weight, in), m.bias));
        losses[i] = mean_sq_distance(outs.back(), t.target);
      }
      s.agent_outputs.push_back(std::move(outs));
      s.agent_losses.push_back(std::move(losses));
    }
    data.push_back(std::move(s));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Judging

enum class Verdict { a, b, tie };

inline Verdict judge(const Vector& a, const Vector& b, const Vector& target) {
  const double da = l2_distance(a, target);
  const double db = l2_distance(b, target);
  if (std::abs(da - db) < 1e-9) return Verdict::tie;
  return da < db ? Verdict::a : Verdict::b;
}

struct ModeStats {
  Mode mode = Mode::dense;
  double wins = 0.0;  // ties count 0.5
  double mean_distance = 0.0;
  std::size_t calls = 0;
  double mean_wall_ms = 0.0;
};

struct BenchResult {
  std::string suite;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t layers = 0;
  std::size_t tasks = 0;
  std::size_t ties = 0;
  ModeStats a;
  ModeStats b;

  double win_rate_a() const { return a.wins / static_cast<double>(tasks); }
};

struct ModeRunner {
  const AgentPool* pool = nullptr;
  const RouterParams* params = nullptr;
  PipelineConfig cfg;
};

// Runs both modes over every task and judges each pair. Run errors are
// rethrown as PipelineError naming the task.
inline BenchResult compare_modes(const ModeRunner& runner, Mode x, Mode y, const std::vector<SyntheticTask>& tasks) {
  BenchResult r;
  r.n = runner.pool->size();
  r.k = runner.cfg.k;
  r.layers = runner.cfg.n_layers;
  r.tasks = tasks.size();
  r.a.mode = x;
  r.b.mode = y;
  std::size_t half_wins_a = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    RunReport rx, ry;
    try {
      rx = run_mode(x, *runner.pool, *runner.params, runner.cfg, tasks[t].input);
      ry = run_mode(y, *runner.pool, *runner.params, runner.cfg, tasks[t].input);
    } catch (const Error& e) {
      throw PipelineError("task " + std::to_string(t) + ": " + e.what());
    }
    switch (judge(rx.output, ry.output, tasks[t].target)) {
      case Verdict::a: half_wins_a += 2; break;
      case Verdict::tie: half_wins_a += 1; ++r.ties; break;
      case Verdict::b: break;
    }
    r.a.mean_distance += l2_distance(rx.output, tasks[t].target);
    r.b.mean_distance += l2_distance(ry.output, tasks[t].target);
    r.a.calls += rx.total_calls;
    r.b.calls += ry.total_calls;
    r.a.mean_wall_ms += rx.wall_ms;
    r.b.mean_wall_ms += ry.wall_ms;
  }
  const double count = static_cast<double>(tasks.size());
  r.a.wins = static_cast<double>(half_wins_a) / 2.0;
  r.b.wins = static_cast<double>(2 * tasks.size() - half_wins_a) / 2.0;
  for (auto* m : {&r.a, &r.b}) {
    m->mean_distance /= count;
    m->mean_wall_ms /= count;
  }
  return r;
}

inline double win_rate(const ModeRunner& runner, Mode x, Mode y, const std::vector<SyntheticTask>& tasks) {
  return compare_modes(runner, x, y, tasks).win_rate_a();
}

// ---------------------------------------------------------------------------
// Skill suite: train a router per seed, then compare modes on fresh tasks.

struct SuiteConfig {
  std::size_t n = 6;
  std::size_t dim = 8;
  std::size_t layers = 3;
  std::size_t k = 0;  // 0: ceil(n / 2)
  std::size_t train_tasks = 200;
  std::size_t eval_tasks = 200;
  std::size_t repeats = 3;
  std::uint64_t seed = 42;
  LossConfig loss;
  TrainConfig train{0.05, 300, 0, Optimizer::adam};
  std::vector<std::pair<Mode, Mode>> comparisons = {{Mode::sparse, Mode::dense},
                                                    {Mode::sparse, Mode::static_moa},
                                                    {Mode::dense, Mode::static_moa},
                                                    {Mode::dense, Mode::linear_ablation}};

  std::size_t effective_k() const { return k == 0 ? (n + 1) / 2 : k; }
};

struct SuiteRun {
  std::uint64_t seed = 0;
  RouterParams params;
  std::vector<BenchResult> results;
};

inline std::uint64_t repeat_seed(std::uint64_t seed, std::size_t r) { return seed + r; }

inline SuiteRun run_skill_suite_once(const SuiteConfig& cfg, std::uint64_t seed) {
  const auto space = make_task_space(TaskGenerator::linear_skill, cfg.n, cfg.dim, seed);
  const auto train_tasks = gen_tasks(space, cfg.train_tasks, detail::mix64(seed) ^ 1);
  const auto eval_tasks = gen_tasks(space, cfg.eval_tasks, detail::mix64(seed) ^ 2);
  auto tc = cfg.train;
  tc.seed = seed;
  SuiteRun run;
  run.seed = seed;
  run.params = train_router(RouterParams::init(cfg.n, cfg.dim, seed), skill_training_set(space, train_tasks, cfg.layers),
                            tc, cfg.loss)
                   .params;
  const auto pool = build_pool(space.agents);
  ModeRunner runner{&pool, &run.params, PipelineConfig{cfg.layers, Mode::dense, cfg.effective_k(), 1}};
  for (const auto& [x, y] : cfg.comparisons) {
    auto r = compare_modes(runner, x, y, eval_tasks);
    r.suite = "linear_skill";
    r.seed = seed;
    run.results.push_back(std::move(r));
  }
  return run;
}

inline std::vector<SuiteRun> run_skill_suite(const SuiteConfig& cfg) {
  std::vector<SuiteRun> runs;
  for (std::size_t r = 0; r < cfg.repeats; ++r) runs.push_back(run_skill_suite_once(cfg, repeat_seed(cfg.seed, r)));
  return runs;
}

// ---------------------------------------------------------------------------
// Timing

struct LatencyModel {
  double latency_ms = 4.0;    // fixed per call
  std::size_t concurrency = 1;  // pinned for every timed run
  std::size_t dim = 4;
};

struct TimingRow {
  std::size_t n = 0;
  std::size_t k = 0;
  std::size_t layers = 0;
  std::string label;        // "multiple-proposer" or "single-proposer"
  double relative_time = 0.0;  // measured wall time / dense(n) wall time
  double call_ratio = 0.0;     // predicted by the call law
  double latency_ms = 0.0;
  std::size_t concurrency = 0;
};

inline std::vector<AgentSpec> latency_agents(std::size_t n, const LatencyModel& lm) {
  std::vector<AgentSpec> specs;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix w = Matrix::identity(lm.dim);
    for (std::size_t j = 0; j < lm.dim; ++j) w(j, j) = 1.0 / static_cast<double>(i + 2);
    auto s = mock_linear_agent("timed" + std::to_string(i), std::move(w));
    s.mock.latency_ms = lm.latency_ms;
    specs.push_back(std::move(s));
  }
  return specs;
}

// Wall time of one pipeline run over mocks with fixed per-call latency.
inline double timed_run(Mode mode, std::size_t n, std::size_t k, std::size_t layers, const LatencyModel& lm,
                        std::uint64_t seed) {
  const auto pool = build_pool(latency_agents(n, lm));
  const auto params = RouterParams::init(n, lm.dim, seed);
  Vector x(lm.dim);
  for (std::size_t j = 0; j < lm.dim; ++j) x[j] = 1.0 + static_cast<double>(j);
  return run_mode(mode, pool, params, PipelineConfig{layers, mode, k, lm.concurrency}, x).wall_ms;
}

// Per n: multiple-proposer = sparse(n, k_rule(n)) against dense(n);
// single-proposer = dense(1) against dense(n). A configuration identical to
// the baseline reuses the baseline measurement.
inline std::vector<TimingRow> timing_table(const std::vector<std::size_t>& n_values,
                                           const std::function<std::size_t(std::size_t)>& k_rule, std::size_t layers,
                                           const LatencyModel& lm, std::uint64_t seed = 42) {
  std::vector<TimingRow> rows;
  for (std::size_t n : n_values) {
    const std::size_t k = k_rule(n);
    const double base = timed_run(Mode::dense, n, n, layers, lm, seed);
    const bool sparse_is_dense = k == n;
    const double sparse = sparse_is_dense ? base : timed_run(Mode::sparse, n, k, layers, lm, seed);
    const double single = n == 1 ? base : timed_run(Mode::dense, 1, 1, layers, lm, seed);
    const double dense_calls = static_cast<double>(expected_calls(Mode::dense, n, n, layers));
    rows.push_back({n, k, layers, "multiple-proposer", sparse / base,
                    static_cast<double>(expected_calls(Mode::sparse, n, k, layers)) / dense_calls, lm.latency_ms,
                    lm.concurrency});
    rows.push_back({n, 1, layers, "single-proposer", single / base,
                    static_cast<double>(expected_calls(Mode::dense, 1, 1, layers)) / dense_calls, lm.latency_ms,
                    lm.concurrency});
  }
  return rows;
}

inline std::size_t half_rounded_up(std::size_t n) { return (n + 1) / 2; }

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { json, csv, markdown };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  if (s == "markdown" || s == "md") return ReportFormat::markdown;
  throw ConfigError("unknown report format '" + s + "'");
}

struct BenchReport {
  std::uint64_t seed = 0;
  std::vector<BenchResult> results;
  std::vector<TimingRow> timing;
};

inline constexpr int kBenchSchema = 1;
inline constexpr const char* kResultsCsvHeader =
    "suite,seed,n,k,layers,tasks,mode_a,mode_b,win_rate_a,wins_a,wins_b,ties,mean_distance_a,mean_distance_b,"
    "calls_a,calls_b,mean_wall_ms_a,mean_wall_ms_b";
inline constexpr const char* kTimingCsvHeader =
    "n,k,layers,label,relative_time,call_ratio,latency_ms,concurrency";

namespace detail {

inline std::string sig6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::vector<std::string> result_cells(const BenchResult& r) {
  return {r.suite,
          std::to_string(r.seed),
          std::to_string(r.n),
          std::to_string(r.k),
          std::to_string(r.layers),
          std::to_string(r.tasks),
          to_string(r.a.mode),
          to_string(r.b.mode),
          sig6(r.win_rate_a()),
          sig6(r.a.wins),
          sig6(r.b.wins),
          std::to_string(r.ties),
          sig6(r.a.mean_distance),
          sig6(r.b.mean_distance),
          std::to_string(r.a.calls),
          std::to_string(r.b.calls),
          sig6(r.a.mean_wall_ms),
          sig6(r.b.mean_wall_ms)};
}

inline std::vector<std::string> timing_cells(const TimingRow& t) {
  return {std::to_string(t.n),   std::to_string(t.k), std::to_string(t.layers), t.label,
          sig6(t.relative_time), sig6(t.call_ratio), sig6(t.latency_ms), std::to_string(t.concurrency)};
}

inline std::vector<std::string> split_header(const std::string& header) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  for (std::size_t pos; (pos = header.find(',', start)) != std::string::npos; start = pos + 1)
    cols.push_back(header.substr(start, pos - start));
  cols.push_back(header.substr(start));
  return cols;
}

inline std::string join(const std::vector<std::string>& cells, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? sep : "") + cells[i];
  return out;
}

inline std::ofstream open_report(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write report '" + path + "'");
  return out;
}

inline void check_written(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw std::runtime_error("failed writing report '" + path + "'");
}

template <class Row, class Cells>
void write_table(std::ostream& out, const std::string& header, const std::vector<Row>& rows, ReportFormat f,
                 Cells cells) {
  if (f == ReportFormat::csv) {
    out << header << '\n';
    for (const auto& r : rows) out << join(cells(r), ",") << '\n';
    return;
  }
  const auto cols = split_header(header);
  out << "| " << join(cols, " | ") << " |\n|" << join(std::vector<std::string>(cols.size(), "---"), "|") << "|\n";
  for (const auto& r : rows) out << "| " << join(cells(r), " | ") << " |\n";
}

inline nlohmann::json mode_to_json(const ModeStats& m) {
  return {{"mode", to_string(m.mode)},
          {"wins", m.wins},
          {"mean_distance", m.mean_distance},
          {"calls", m.calls},
          {"mean_wall_ms", m.mean_wall_ms}};
}

template <class T>
T field(const nlohmann::json& obj, const std::string& key, const std::string& where) {
  const std::string name = where.empty() ? key : where + "." + key;
  if (!obj.is_object() || !obj.contains(key)) throw DeserializationError(name, "missing field");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DeserializationError(name, e.what());
  }
}

inline ModeStats mode_from_json(const nlohmann::json& j, const std::string& where) {
  ModeStats m;
  try {
    m.mode = parse_mode(field<std::string>(j, "mode", where));
  } catch (const ConfigError& e) {
    throw DeserializationError(where + ".mode", e.what());
  }
  m.wins = field<double>(j, "wins", where);
  m.mean_distance = field<double>(j, "mean_distance", where);
  m.calls = field<std::size_t>(j, "calls", where);
  m.mean_wall_ms = field<double>(j, "mean_wall_ms", where);
  return m;
}

}  // namespace detail

inline nlohmann::json bench_to_json(const BenchReport& rep) {
  nlohmann::json results = nlohmann::json::array(), timing = nlohmann::json::array();
  for (const auto& r : rep.results)
    results.push_back({{"suite", r.suite},
                       {"seed", r.seed},
                       {"n", r.n},
                       {"k", r.k},
                       {"layers", r.layers},
                       {"tasks", r.tasks},
                       {"ties", r.ties},
                       {"win_rate_a", r.win_rate_a()},
                       {"a", detail::mode_to_json(r.a)},
                       {"b", detail::mode_to_json(r.b)}});
  for (const auto& t : rep.timing)
    timing.push_back({{"n", t.n},
                      {"k", t.k},
                      {"layers", t.layers},
                      {"label", t.label},
                      {"relative_time", t.relative_time},
                      {"call_ratio", t.call_ratio},
                      {"latency_ms", t.latency_ms},
                      {"concurrency", t.concurrency}});
  return {{"bench_schema", kBenchSchema}, {"seed", rep.seed}, {"results", results}, {"timing", timing}};
}

inline BenchReport bench_from_json(const nlohmann::json& doc) {
  using detail::field;
  if (field<int>(doc, "bench_schema", "") != kBenchSchema)
    throw DeserializationError("bench_schema", "unsupported schema");
  BenchReport rep;
  rep.seed = field<std::uint64_t>(doc, "seed", "");
  const auto results = field<nlohmann::json>(doc, "results", "");
  const auto timing = field<nlohmann::json>(doc, "timing", "");
  if (!results.is_array()) throw DeserializationError("results", "expected array");
  if (!timing.is_array()) throw DeserializationError("timing", "expected array");
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& j = results[i];
    const std::string where = "results[" + std::to_string(i) + "]";
    BenchResult r;
    r.suite = field<std::string>(j, "suite", where);
    r.seed = field<std::uint64_t>(j, "seed", where);
    r.n = field<std::size_t>(j, "n", where);
    r.k = field<std::size_t>(j, "k", where);
    r.layers = field<std::size_t>(j, "layers", where);
    r.tasks = field<std::size_t>(j, "tasks", where);
    r.ties = field<std::size_t>(j, "ties", where);
    r.a = detail::mode_from_json(field<nlohmann::json>(j, "a", where), where + ".a");
    r.b = detail::mode_from_json(field<nlohmann::json>(j, "b", where), where + ".b");
    if (r.a.wins + r.b.wins != static_cast<double>(r.tasks))
      throw DeserializationError(where + ".a.wins", "win counts do not sum to the task count");
    rep.results.push_back(std::move(r));
  }
  for (std::size_t i = 0; i < timing.size(); ++i) {
    const auto& j = timing[i];
    const std::string where = "timing[" + std::to_string(i) + "]";
    TimingRow t;
    t.n = field<std::size_t>(j, "n", where);
    t.k = field<std::size_t>(j, "k", where);
    t.layers = field<std::size_t>(j, "layers", where);
    t.label = field<std::string>(j, "label", where);
    t.relative_time = field<double>(j, "relative_time", where);
    t.call_ratio = field<double>(j, "call_ratio", where);
    t.latency_ms = field<double>(j, "latency_ms", where);
    t.concurrency = field<std::size_t>(j, "concurrency", where);
    rep.timing.push_back(std::move(t));
  }
  return rep;
}

// json holds everything; csv and markdown hold the result table only (see
// emit_timing for the timing table).
inline void emit_report(const BenchReport& rep, const std::string& path, ReportFormat format) {
  auto out = detail::open_report(path);
  if (format == ReportFormat::json)
    out << bench_to_json(rep).dump(2) << '\n';
  else
    detail::write_table(out, kResultsCsvHeader, rep.results, format, detail::result_cells);
  detail::check_written(out, path);
}

inline void emit_timing(const std::vector<TimingRow>& rows, const std::string& path, ReportFormat format) {
  auto out = detail::open_report(path);
  if (format == ReportFormat::json) {
    BenchReport rep;
    rep.timing = rows;
    out << bench_to_json(rep)["timing"].dump(2) << '\n';
  } else {
    detail::write_table(out, kTimingCsvHeader, rows, format, detail::timing_cells);
  }
  detail::check_written(out, path);
}

inline BenchReport load_bench_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DeserializationError("<file>", "cannot open '" + path + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DeserializationError("<document>", e.what());
  }
  return bench_from_json(doc);
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (double x : xs) m.stddev += (x - m.mean) * (x - m.mean);
  m.stddev = xs.size() > 1 ? std::sqrt(m.stddev / static_cast<double>(xs.size() - 1)) : 0.0;
  return m;
}

}  // namespace mmoa
