#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "mmoa/pipeline.hpp"
#include "test_support.hpp"

using namespace mmoa;
using mmoa::testing::random_input;
using mmoa::testing::random_mock_specs;

namespace {

PipelineConfig layers(std::size_t L, std::size_t k = 1, std::size_t concurrency = 0) {
  PipelineConfig c;
  c.n_layers = L;
  c.k = k;
  c.concurrency = concurrency;
  return c;
}

// Algorithm 1 written out with the router ops, calling agents directly.
Vector composition_oracle(const std::vector<AgentSpec>& specs, const RouterParams& p, std::size_t L, Vector x,
                          std::vector<GateVector>* gates = nullptr) {
  LstmState state = LstmState::zeros(p.hidden_dim());
  for (std::size_t l = 1; l <= L; ++l) {
    std::vector<AgentOutput> outs;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      AgentRequest req;
      req.input = x;
      req.layer = static_cast<int>(l);
      outs.push_back(invoke(specs[i], i, req));
    }
    const Vector z = fuse(p, outs);
    state = recur(p, z, state);
    const GateVector g = gate(p, state.h);
    if (gates) gates->push_back(g);
    x = aggregate(g, outs);
  }
  return x;
}

}  // namespace

TEST(RunDense, SingleAgentSingleLayer) {
  const auto specs = random_mock_specs(1, 3, 1);
  const auto pool = build_pool(specs);
  const auto params = RouterParams::init(1, 3, 2);
  const Vector x{0.5, -1, 2};
  const auto r = run_dense(pool, params, layers(1), x);
  AgentRequest req;
  req.input = x;
  EXPECT_EQ(r.output, invoke(specs[0], 0, req).vec);
  EXPECT_EQ(r.traces[0].gate[0], 1.0);
}

TEST(RunDense, ZeroParamsAverageEachLayer) {
  const auto specs = random_mock_specs(4, 3, 5);
  const auto pool = build_pool(specs);
  const auto params = RouterParams::zeros(4, 3);
  const auto r = run_dense(pool, params, layers(3), random_input(3, 1));
  Vector x = random_input(3, 1);
  for (const auto& t : r.traces) {
    Vector mean(3);
    for (std::size_t i = 0; i < 4; ++i) {
      AgentRequest req;
      req.input = x;
      req.layer = static_cast<int>(t.layer);
      add_into(mean, invoke(specs[i], i, req).vec, 0.25);
    }
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(t.output[j], mean[j], 1e-14);
    x = t.output;
  }
}

TEST(RunDense, MatchesCompositionOracle) {
  const auto specs = random_mock_specs(3, 4, 42);
  const auto pool = build_pool(specs);
  const auto params = RouterParams::init(3, 4, 42);
  const Vector x = random_input(4, 42);
  std::vector<GateVector> gates;
  const Vector expected = composition_oracle(specs, params, 2, x, &gates);
  const auto r = run_dense(pool, params, layers(2), x);
  EXPECT_EQ(r.output, expected);
  EXPECT_EQ(r.traces[0].gate, gates[0]);
  EXPECT_EQ(r.traces[1].gate, gates[1]);
  EXPECT_EQ(r.total_calls, 6u);
}

TEST(RunDense, StateThreadsAcrossLayers) {
  const auto specs = random_mock_specs(3, 3, 4);
  const auto pool = build_pool(specs);
  const auto params = RouterParams::init(3, 3, 4);
  const auto dense = run_dense(pool, params, layers(4), random_input(3, 9));
  const auto sparse = run_sparse(pool, params, layers(4, 2), random_input(3, 9));
  for (std::size_t l = 1; l < 4; ++l) {
    ASSERT_TRUE(sparse.traces[l].predicted_gate.has_value());
    EXPECT_EQ(*sparse.traces[l].predicted_gate, gate(params, sparse.traces[l - 1].hidden));
  }
  // The layer-1 hidden state of both modes is identical (both dense at layer 1).
  EXPECT_EQ(dense.traces[0].hidden, sparse.traces[0].hidden);
}

TEST(RunDense, DeterministicApartFromTiming) {
  const auto pool = build_pool(random_mock_specs(5, 3, 8));
  const auto params = RouterParams::init(5, 3, 8);
  auto a = report_to_json(run_dense(pool, params, layers(3, 1, 2), random_input(3, 3)));
  auto b = report_to_json(run_dense(pool, params, layers(3, 1, 2), random_input(3, 3)));
  for (auto* doc : {&a, &b}) {
    (*doc)["wall_ms"] = 0;
    for (auto& t : (*doc)["traces"]) t["latencies_ms"] = nullptr;
  }
  EXPECT_EQ(a, b);
}

TEST(RunSparse, FullKEqualsDense) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t n = 2 + seed % 4;
    const auto pool = build_pool(random_mock_specs(n, 3, seed));
    const auto params = RouterParams::init(n, 3, seed + 100);
    const auto x = random_input(3, seed);
    const auto dense = run_dense(pool, params, layers(3), x);
    const auto sparse = run_sparse(pool, params, layers(3, n), x);
    EXPECT_EQ(sparse.total_calls, n * 3);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(sparse.output[j], dense.output[j], 1e-12);
  }
}

TEST(RunSparse, CallCountsAtTableSetting) {
  const auto pool = build_pool(random_mock_specs(6, 3, 1));
  const auto params = RouterParams::init(6, 3, 1);
  const auto r3 = run_sparse(pool, params, layers(4, 3), random_input(3, 1));
  EXPECT_EQ(r3.total_calls, 15u);
  EXPECT_DOUBLE_EQ(account_calls(r3).relative_to_dense, 0.625);
  const auto r2 = run_sparse(pool, params, layers(4, 2), random_input(3, 1));
  EXPECT_EQ(r2.total_calls, 12u);
  EXPECT_DOUBLE_EQ(account_calls(r2).relative_to_dense, 0.5);
  EXPECT_EQ(account_calls(r2).calls_per_layer, (std::vector<std::size_t>{6, 2, 2, 2}));
}

TEST(RunSparse, SelectsTopKFromPredictedGate) {
  const auto pool = build_pool(random_mock_specs(5, 3, 2));
  const auto params = RouterParams::init(5, 3, 2);
  const auto r = run_sparse(pool, params, layers(3, 2), random_input(3, 2));
  for (std::size_t l = 1; l < 3; ++l) {
    const auto& t = r.traces[l];
    auto plan = sparse_select(*t.predicted_gate, 2);
    std::sort(plan.selected.begin(), plan.selected.end());
    EXPECT_EQ(t.invoked, plan.selected);
    double mass = 0.0;
    for (auto i : t.invoked) mass += t.weights[i];
    EXPECT_NEAR(mass, 1.0, 1e-9);
  }
}

TEST(RunSparse, RejectsKOutOfRange) {
  const auto pool = build_pool(random_mock_specs(3, 2, 1));
  const auto params = RouterParams::init(3, 2, 1);
  EXPECT_THROW(run_sparse(pool, params, layers(2, 4), Vector(2)), ConfigError);
  EXPECT_THROW(run_sparse(pool, params, layers(2, 0), Vector(2)), ConfigError);
}

TEST(CallLaw, ExhaustiveSmallGrid) {
  for (std::size_t n = 1; n <= 8; ++n) {
    auto pool = build_pool(random_mock_specs(n, 2, n));
    const auto params = RouterParams::init(n, 2, n);
    for (std::size_t L = 1; L <= 6; ++L) {
      pool.reset_calls();
      const auto dense = run_dense(pool, params, layers(L), Vector{0.3, -0.2});
      EXPECT_EQ(pool.total_calls(), n * L);
      EXPECT_EQ(dense.total_calls, n * L);
      for (std::size_t k = 1; k <= n; ++k) {
        pool.reset_calls();
        const auto sparse = run_sparse(pool, params, layers(L, k), Vector{0.3, -0.2});
        EXPECT_EQ(pool.total_calls(), n + (L - 1) * k) << "n=" << n << " k=" << k << " L=" << L;
        EXPECT_EQ(sparse.total_calls, expected_calls(Mode::sparse, n, k, L));
      }
    }
  }
}

TEST(RunStaticMoa, UniformAndEqualToZeroRouter) {
  const auto pool = build_pool(random_mock_specs(4, 3, 6));
  const auto zero = RouterParams::zeros(4, 3);
  const auto x = random_input(3, 6);
  const auto st = run_static_moa(pool, RouterParams::init(4, 3, 1), layers(3), x);
  const auto dense = run_dense(pool, zero, layers(3), x);
  EXPECT_EQ(st.output, dense.output);
  EXPECT_EQ(st.total_calls, 12u);
  for (const auto& t : st.traces)
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(t.gate[i], 0.25);
}

TEST(RunLinearAblation, ZeroLayerGivesUniformGate) {
  const auto pool = build_pool(random_mock_specs(3, 3, 2));
  auto params = RouterParams::init(3, 3, 2);
  params.gate_b = Vector(3);
  Pipeline p(pool, params, [] {
    auto c = layers(3);
    c.mode = Mode::linear_ablation;
    return c;
  }());
  p.set_ablation({Matrix(3, 3), Vector(3)});
  const auto r = p.run(random_input(3, 2));
  for (const auto& t : r.traces)
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(t.gate[i], 1.0 / 3.0);
}

// Layer-2 agents ignore their input, so layer-2 z is identical across two
// runs whose layer-1 agents differ. Without recurrence the layer-2 gate must
// match; with the LSTM it must not.
TEST(RunLinearAblation, HasNoMemoryOfEarlierLayers) {
  const auto first_a = build_pool(random_mock_specs(3, 3, 10));
  const auto first_b = build_pool(random_mock_specs(3, 3, 11));
  std::vector<AgentSpec> constant;
  for (std::size_t i = 0; i < 3; ++i)
    constant.push_back(mock_linear_agent("c" + std::to_string(i), Matrix(3, 3), random_input(3, 20 + i)));
  const auto second = build_pool(constant);
  const auto params = RouterParams::init(3, 3, 12);

  auto layer2_gate = [&](const AgentPool& first, Mode mode) {
    auto cfg = layers(2);
    cfg.mode = mode;
    Pipeline p(first, params, cfg);
    p.set_layer_pools({&first, &second});
    return p.run(random_input(3, 1)).traces[1].gate;
  };
  EXPECT_EQ(layer2_gate(first_a, Mode::linear_ablation), layer2_gate(first_b, Mode::linear_ablation));
  EXPECT_NE(layer2_gate(first_a, Mode::dense), layer2_gate(first_b, Mode::dense));
}

TEST(RunLinearAblation, ProducesValidGates) {
  const auto pool = build_pool(random_mock_specs(4, 2, 3));
  const auto params = RouterParams::init(4, 2, 3);
  const auto r = run_linear_ablation(pool, params, layers(1), random_input(2, 3));
  double sum = 0.0;
  for (double w : r.traces[0].gate.weights()) sum += w;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(FailurePolicy, DenseDropsFailedAgentAndRenormalizes) {
  auto specs = random_mock_specs(3, 2, 7);
  specs[1].mock.fail_from_layer = 2;
  const auto pool = build_pool(specs);
  const auto params = RouterParams::init(3, 2, 7);
  const auto r = run_dense(pool, params, layers(2), Vector{1, -1});
  const auto& t = r.traces[1];
  EXPECT_EQ(t.failed, (std::vector<std::size_t>{1}));
  EXPECT_EQ(t.invoked.size(), 3u);
  EXPECT_EQ(t.weights[1], 0.0);
  EXPECT_NEAR(t.weights[0] + t.weights[2], 1.0, 1e-12);
  EXPECT_NEAR(t.weights[0] / t.weights[2], t.gate[0] / t.gate[2], 1e-12);
}

TEST(FailurePolicy, SparseReplacesFailedPick) {
  auto specs = random_mock_specs(4, 2, 9);
  const auto params = RouterParams::init(4, 2, 9);
  const auto healthy = run_sparse(build_pool(specs), params, layers(2, 2), Vector{0.5, 0.5});
  const auto ranking = rank_agents(*healthy.traces[1].predicted_gate);
  specs[ranking[0]].mock.fail_from_layer = 2;
  const auto r = run_sparse(build_pool(specs), params, layers(2, 2), Vector{0.5, 0.5});
  std::vector<std::size_t> expected = {ranking[0], ranking[1], ranking[2]};
  std::sort(expected.begin(), expected.end());
  EXPECT_EQ(r.traces[1].invoked, expected);
  EXPECT_EQ(r.traces[1].failed, (std::vector<std::size_t>{ranking[0]}));
  EXPECT_EQ(r.total_calls, 4u + 3u);
}

TEST(FailurePolicy, AllFailedIsPipelineError) {
  auto specs = random_mock_specs(2, 2, 1);
  for (auto& s : specs) s.mock.fail_from_layer = 1;
  EXPECT_THROW(run_dense(build_pool(specs), RouterParams::init(2, 2, 1), layers(1), Vector(2)), PipelineError);
}

TEST(Concurrency, FansOutWithinLayer) {
  const auto pool = build_pool(random_mock_specs(4, 2, 1, 60.0));
  const auto params = RouterParams::init(4, 2, 1);
  const auto parallel = run_dense(pool, params, layers(1), Vector(2));
  const auto serial = run_dense(pool, params, layers(1, 1, 1), Vector(2));
  EXPECT_LT(parallel.wall_ms, 200.0);
  EXPECT_GE(serial.wall_ms, 240.0);
  EXPECT_EQ(parallel.output, serial.output);
}

TEST(Report, JsonRoundTripAndValidation) {
  const auto pool = build_pool(random_mock_specs(3, 2, 4));
  const auto params = RouterParams::init(3, 2, 4);
  const auto r = run_sparse(pool, params, layers(3, 2), Vector{1, 2});
  const auto doc = report_to_json(r);
  EXPECT_EQ(report_to_json(report_from_json(doc)), doc);

  auto bad = doc;
  bad["traces"][1]["gate"] = {0.9, 0.9, 0.9};
  try {
    report_from_json(bad);
    FAIL();
  } catch (const DeserializationError& e) {
    EXPECT_EQ(e.field(), "traces[1].gate");
  }
  auto miscount = doc;
  miscount["total_calls"] = 99;
  try {
    report_from_json(miscount);
    FAIL();
  } catch (const DeserializationError& e) {
    EXPECT_EQ(e.field(), "total_calls");
  }
}

TEST(Report, TraceCsv) {
  const auto pool = build_pool(random_mock_specs(3, 2, 4));
  const auto r = run_sparse(pool, RouterParams::init(3, 2, 4), layers(2, 1), Vector{1, 2});
  const auto path = std::filesystem::temp_directory_path() / "mmoa_trace_test.csv";
  write_trace_csv(r, path.string());
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "layer,agent_index,invoked,gate_weight,latency_ms");
  int rows = 0, invoked = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.find(",true,") != std::string::npos) ++invoked;
  }
  EXPECT_EQ(rows, 6);
  EXPECT_EQ(invoked, 4);
  std::filesystem::remove(path);
}

TEST(AccountCalls, DenseIsOne) {
  const auto pool = build_pool(random_mock_specs(3, 2, 4));
  const auto r = run_dense(pool, RouterParams::init(3, 2, 4), layers(2), Vector{1, 2});
  EXPECT_EQ(account_calls(r).relative_to_dense, 1.0);
  const auto single = build_pool(random_mock_specs(1, 2, 4));
  const auto s = run_sparse(single, RouterParams::init(1, 2, 4), layers(5, 1), Vector{1, 2});
  EXPECT_EQ(account_calls(s).relative_to_dense, 1.0);
}
