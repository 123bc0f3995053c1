#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmoa/bench.hpp"
#include "test_support.hpp"

using namespace mmoa;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("mmoa_bench_" + name)).string();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

BenchResult sample_result(Mode a, Mode b, double wins_a, std::size_t tasks) {
  BenchResult r;
  r.suite = "linear_skill";
  r.seed = 7;
  r.n = 6;
  r.k = 3;
  r.layers = 3;
  r.tasks = tasks;
  r.a.mode = a;
  r.b.mode = b;
  r.a.wins = wins_a;
  r.b.wins = static_cast<double>(tasks) - wins_a;
  r.a.mean_distance = 0.123456789;
  r.b.mean_distance = 1.0 / 3.0;
  r.a.calls = 2400;
  r.b.calls = 3600;
  r.a.mean_wall_ms = 0.0421;
  r.b.mean_wall_ms = 0.061;
  return r;
}

}  // namespace

TEST(GenTasks, DeterministicPerSeed) {
  for (auto g : {TaskGenerator::linear_skill, TaskGenerator::clustered}) {
    const auto a = gen_tasks(20, 5, 9, g, 3);
    const auto b = gen_tasks(20, 5, 9, g, 3);
    ASSERT_EQ(a.size(), 20u);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].input, b[i].input);
      EXPECT_EQ(a[i].target, b[i].target);
      EXPECT_EQ(a[i].region, b[i].region);
    }
    EXPECT_NE(gen_tasks(20, 5, 10, g, 3)[0].input, a[0].input);
  }
}

TEST(GenTasks, SingleRegionAgentHitsTargetExactly) {
  const auto space = make_task_space(TaskGenerator::linear_skill, 1, 6, 3);
  for (const auto& t : gen_tasks(space, 25, 4)) {
    AgentRequest req;
    req.input = t.input;
    EXPECT_EQ(invoke(space.agents[0], 0, req).vec, t.target);
  }
}

TEST(GenTasks, SkillAgentsAreIdempotent) {
  const auto space = make_task_space(TaskGenerator::linear_skill, 4, 8, 11);
  for (const auto& t : gen_tasks(space, 40, 12)) {
    AgentRequest req;
    req.input = t.target;
    const auto again = invoke(space.agents[t.region], t.region, req).vec;
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(again[j], t.target[j], 1e-12);
  }
}

TEST(GenTasks, ClusteredTargetsFiniteAndBounded) {
  const auto space = make_task_space(TaskGenerator::clustered, 5, 4, 21);
  const auto tasks = gen_tasks(space, 100, 21);
  for (const auto& t : tasks) {
    EXPECT_TRUE(t.target.all_finite());
    EXPECT_LE(l2_norm(t.target), space.radius + 1e-12);
    EXPECT_EQ(t.target, space.centers[t.region]);
  }
  EXPECT_THROW(gen_tasks(space, 0, 1), ParameterError);
}

TEST(SkillTrainingSet, LossesAndTeacherForcing) {
  const auto space = make_task_space(TaskGenerator::linear_skill, 3, 4, 5);
  const auto tasks = gen_tasks(space, 10, 6);
  const auto data = skill_training_set(space, tasks, 3);
  for (std::size_t s = 0; s < data.size(); ++s) {
    ASSERT_EQ(data[s].layers(), 3u);
    EXPECT_NEAR(data[s].agent_losses[0][tasks[s].region], 0.0, 1e-24);
    for (std::size_t l = 1; l < 3; ++l) {
      EXPECT_NEAR(data[s].agent_losses[l][tasks[s].region], 0.0, 1e-24);
      for (std::size_t i = 0; i < 3; ++i)
        EXPECT_EQ(data[s].agent_outputs[l][i], data[s].agent_outputs[1][i]);
    }
  }
}

TEST(Judge, Examples) {
  const Vector t{0, 0};
  EXPECT_EQ(judge(t, Vector{1, 0}, t), Verdict::a);
  EXPECT_EQ(judge(t, t, t), Verdict::tie);
  EXPECT_EQ(judge(Vector{1, 0}, Vector{-1, 0}, t), Verdict::tie);
  EXPECT_EQ(judge(Vector{0, 1}, Vector{2, 0}, t), Verdict::a);
  EXPECT_EQ(judge(Vector{0, 2}, Vector{1, 0}, t), Verdict::b);
  EXPECT_EQ(judge(Vector{1, 0}, Vector{1 + 1e-10, 0}, t), Verdict::tie);
}

TEST(WinRate, SelfIsHalfAndPairsSumToOne) {
  const auto space = make_task_space(TaskGenerator::linear_skill, 4, 4, 2);
  const auto tasks = gen_tasks(space, 30, 3);
  const auto pool = build_pool(space.agents);
  const auto params = RouterParams::init(4, 4, 2);
  ModeRunner runner{&pool, &params, PipelineConfig{3, Mode::dense, 2, 1}};
  EXPECT_EQ(win_rate(runner, Mode::dense, Mode::dense, tasks), 0.5);
  const std::vector<Mode> modes = {Mode::dense, Mode::sparse, Mode::static_moa, Mode::linear_ablation};
  for (auto x : modes)
    for (auto y : modes) {
      const auto r = compare_modes(runner, x, y, tasks);
      EXPECT_EQ(r.a.wins + r.b.wins, 30.0);
      EXPECT_EQ(win_rate(runner, x, y, tasks) + win_rate(runner, y, x, tasks), 1.0);
    }
}

TEST(WinRate, FullKSparseTiesDense) {
  const auto space = make_task_space(TaskGenerator::linear_skill, 3, 4, 8);
  const auto pool = build_pool(space.agents);
  const auto params = RouterParams::init(3, 4, 8);
  ModeRunner runner{&pool, &params, PipelineConfig{3, Mode::dense, 3, 1}};
  const auto r = compare_modes(runner, Mode::sparse, Mode::dense, gen_tasks(space, 40, 9));
  EXPECT_EQ(r.win_rate_a(), 0.5);
  EXPECT_EQ(r.ties, 40u);
  EXPECT_EQ(r.a.calls, r.b.calls);
}

TEST(WinRate, TrainedSparseBeatsUntrainedStatic) {
  SuiteConfig cfg;
  cfg.n = 4;
  cfg.dim = 4;
  cfg.train_tasks = 80;
  cfg.eval_tasks = 60;
  cfg.train.steps = 150;
  cfg.comparisons = {{Mode::sparse, Mode::static_moa}, {Mode::sparse, Mode::dense}};
  const auto run = run_skill_suite_once(cfg, 5);
  EXPECT_GT(run.results[0].win_rate_a(), 0.5);
  EXPECT_EQ(run.results[1].a.calls, 60u * (4 + 2 * 2));
  EXPECT_EQ(run.results[1].b.calls, 60u * 12);
}

TEST(WinRate, RunErrorsNameTheTask) {
  auto specs = mmoa::testing::random_mock_specs(2, 3, 1);
  for (auto& s : specs) s.mock.fail_from_layer = 2;
  const auto pool = build_pool(specs);
  const auto params = RouterParams::init(2, 3, 1);
  ModeRunner runner{&pool, &params, PipelineConfig{2, Mode::dense, 1, 1}};
  try {
    win_rate(runner, Mode::dense, Mode::static_moa, gen_tasks(3, 3, 1, TaskGenerator::clustered));
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_NE(std::string(e.what()).find("task 0"), std::string::npos);
  }
}

TEST(TimingTable, SingleAgentRowsAreOne) {
  const auto rows = timing_table({1}, half_rounded_up, 3, LatencyModel{1.0, 1, 2});
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_EQ(r.relative_time, 1.0);
    EXPECT_EQ(r.call_ratio, 1.0);
  }
}

TEST(TimingTable, SerialWallTimeTracksCallRatio) {
  const auto rows = timing_table({6}, half_rounded_up, 4, LatencyModel{5.0, 1, 2});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].label, "multiple-proposer");
  EXPECT_EQ(rows[0].call_ratio, 0.625);
  EXPECT_NEAR(rows[0].relative_time / rows[0].call_ratio, 1.0, 0.05);
  EXPECT_EQ(rows[1].label, "single-proposer");
  EXPECT_DOUBLE_EQ(rows[1].call_ratio, 1.0 / 6.0);
  EXPECT_NEAR(rows[1].relative_time / rows[1].call_ratio, 1.0, 0.05);
  EXPECT_EQ(rows[0].concurrency, 1u);
}

TEST(EmitReport, JsonRoundTrip) {
  BenchReport rep;
  rep.seed = 42;
  rep.results = {sample_result(Mode::sparse, Mode::dense, 97.5, 200), sample_result(Mode::dense, Mode::static_moa, 3, 4)};
  rep.timing = {{6, 3, 4, "multiple-proposer", 0.6312345678901, 0.625, 4.0, 1}};
  const auto path = temp_path("rt.json");
  emit_report(rep, path, ReportFormat::json);
  const auto back = load_bench_report(path);
  EXPECT_EQ(bench_to_json(back), bench_to_json(rep));
  EXPECT_EQ(back.results[0].a.mean_distance, 0.123456789);
  EXPECT_EQ(back.timing[0].relative_time, 0.6312345678901);
  std::filesystem::remove(path);
}

TEST(EmitReport, JsonSchemaViolationsNameField) {
  BenchReport rep;
  rep.results = {sample_result(Mode::sparse, Mode::dense, 10, 20)};
  auto doc = bench_to_json(rep);
  auto bad = doc;
  bad["results"][0]["a"]["wins"] = 19;
  try {
    bench_from_json(bad);
    FAIL();
  } catch (const DeserializationError& e) {
    EXPECT_EQ(e.field(), "results[0].a.wins");
  }
  bad = doc;
  bad["results"][0]["b"].erase("calls");
  try {
    bench_from_json(bad);
    FAIL();
  } catch (const DeserializationError& e) {
    EXPECT_EQ(e.field(), "results[0].b.calls");
  }
  bad = doc;
  bad["bench_schema"] = 2;
  EXPECT_THROW(bench_from_json(bad), DeserializationError);
}

TEST(EmitReport, CsvHeaderAndPrecision) {
  BenchReport rep;
  rep.results = {sample_result(Mode::sparse, Mode::dense, 97.5, 200)};
  const auto path = temp_path("r.csv");
  emit_report(rep, path, ReportFormat::csv);
  const auto lines = read_lines(path);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0],
            "suite,seed,n,k,layers,tasks,mode_a,mode_b,win_rate_a,wins_a,wins_b,ties,mean_distance_a,"
            "mean_distance_b,calls_a,calls_b,mean_wall_ms_a,mean_wall_ms_b");
  EXPECT_EQ(lines[1], "linear_skill,7,6,3,3,200,sparse,dense,0.4875,97.5,102.5,0,0.123457,0.333333,2400,3600,0.0421,0.061");
  std::filesystem::remove(path);

  emit_timing({{6, 3, 4, "multiple-proposer", 0.6312345678901, 0.625, 4.0, 1}}, path, ReportFormat::csv);
  const auto timing = read_lines(path);
  EXPECT_EQ(timing[0], "n,k,layers,label,relative_time,call_ratio,latency_ms,concurrency");
  EXPECT_EQ(timing[1], "6,3,4,multiple-proposer,0.631235,0.625,4,1");
  std::filesystem::remove(path);
}

TEST(EmitReport, MarkdownRowCount) {
  BenchReport rep;
  for (int i = 0; i < 5; ++i) rep.results.push_back(sample_result(Mode::sparse, Mode::dense, i, 10));
  const auto path = temp_path("r.md");
  emit_report(rep, path, ReportFormat::markdown);
  const auto lines = read_lines(path);
  std::size_t rows = 0;
  for (const auto& l : lines)
    if (l.rfind("| ", 0) == 0) ++rows;
  EXPECT_EQ(rows, rep.results.size() + 1);
  std::filesystem::remove(path);
}

TEST(EmitReport, UnwritablePathNamed) {
  try {
    emit_report(BenchReport{}, "/nonexistent-dir/x.json", ReportFormat::json);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent-dir/x.json"), std::string::npos);
  }
}

TEST(MeanStd, Basic) {
  const auto m = mean_std({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.stddev, 1.2909944487358056, 1e-15);
}
