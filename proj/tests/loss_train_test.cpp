#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "mmoa/loss.hpp"
#include "mmoa/train.hpp"

using namespace mmoa;

namespace {

const Vector kFixedLosses{1.0, 0.2, 0.8};

TrainSample random_sample(std::size_t n, std::size_t d, std::size_t layers, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 2.0);
  TrainSample s;
  s.input = Vector(d);
  for (auto& x : s.input) x = normal(rng);
  for (std::size_t l = 0; l < layers; ++l) {
    Vector losses(n);
    for (auto& x : losses) x = unit(rng);
    s.agent_losses.push_back(losses);
    std::vector<Vector> outs(n, Vector(d));
    for (auto& v : outs)
      for (auto& x : v) x = normal(rng);
    s.agent_outputs.push_back(outs);
  }
  return s;
}

double total_variation_from_uniform(const Vector& p) {
  double tv = 0.0;
  for (double x : p) tv += std::abs(x - 1.0 / static_cast<double>(p.dim()));
  return 0.5 * tv;
}

RouterParams concentration_init() { return RouterParams::init(3, 4, 7); }

TrainConfig concentration_train() {
  TrainConfig t;
  t.learning_rate = 0.5;
  t.steps = 500;
  t.optimizer = Optimizer::sgd;
  t.seed = 42;
  return t;
}

}  // namespace

TEST(Entropy, Examples) {
  EXPECT_NEAR(entropy(GateVector::uniform(4)), std::log(4.0), 1e-12);
  EXPECT_NEAR(entropy(GateVector::uniform(4)), 1.386294, 1e-6);
  EXPECT_EQ(entropy(GateVector(Vector{0, 1, 0})), 0.0);
  EXPECT_NEAR(entropy(GateVector(Vector{0.5, 0.5})), 0.693147, 1e-6);
}

TEST(Entropy, BoundedByLogN) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0, 3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + trial % 8;
    Vector v(n);
    for (auto& x : v) x = normal(rng);
    const GateVector p(softmax(v));
    const double h = entropy(p);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(n)) + 1e-12);
  }
}

TEST(LoadBalance, Examples) {
  EXPECT_EQ(load_balance(GateVector::uniform(4)), 0.0);
  EXPECT_NEAR(load_balance(GateVector(Vector{1, 0, 0, 0})), 0.75, 1e-12);
  EXPECT_EQ(load_balance(GateVector(Vector{1})), 0.0);
}

TEST(LoadBalance, NonNegativeZeroOnlyAtUniform) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + trial % 6;
    Vector v(n);
    for (auto& x : v) x = normal(rng);
    const double lb = load_balance(GateVector(softmax(v)));
    EXPECT_GT(lb, 1e-12);
  }
}

TEST(RouterLoss, Examples) {
  const GateVector half(Vector{0.5, 0.5});
  EXPECT_EQ(router_loss(half, Vector{1, 2}, LossConfig{}), 1.5);
  EXPECT_NEAR(router_loss(half, Vector{1, 2}, LossConfig{0.1, 0.0, EntropyMode::bonus}), 1.430685, 1e-6);
  EXPECT_NEAR(router_loss(half, Vector{1, 2}, LossConfig{0.1, 0.0, EntropyMode::penalty}), 1.5 + 0.1 * std::log(2.0),
              1e-15);
  EXPECT_EQ(router_loss(GateVector(Vector{0, 1, 0}), Vector{0.7, 0.3, 0.9}, LossConfig{}), 0.3);
  EXPECT_THROW(router_loss(half, Vector{1, 2, 3}, LossConfig{}), ShapeError);
}

TEST(LossConfig, RejectsNegativeCoefficients) {
  EXPECT_THROW((LossConfig{-1.0, 0.0}).validate(), ParameterError);
  EXPECT_THROW((LossConfig{0.0, -0.5}).validate(), ParameterError);
}

TEST(RouterLossGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(31337);
  const std::size_t ns[] = {2, 3, 5};
  const std::size_t ds[] = {2, 4};
  const std::size_t layers[] = {1, 3};
  int configs = 0;
  for (auto n : ns)
    for (auto d : ds)
      for (auto L : layers) {
        for (auto mode : {EntropyMode::bonus, EntropyMode::penalty}) {
          const auto params = RouterParams::init(n, d, 1000 + configs);
          const auto sample = random_sample(n, d, L, rng);
          const LossConfig cfg{0.3, 0.7, mode};
          const LstmState s0 = LstmState::zeros(params.hidden_dim());
          const auto analytic = flatten(router_loss_grad(params, sample, s0, cfg).grad);
          auto f = [&](const Vector& theta) { return sample_forward(unflatten(params, theta), sample, s0, cfg).loss; };
          const auto numeric = finite_diff_grad(f, flatten(params), 1e-5);
          EXPECT_LT(relative_error(analytic, numeric), 1e-5) << "n=" << n << " d=" << d << " L=" << L;
          ++configs;
        }
      }
  EXPECT_GE(configs, 20);
}

TEST(RouterLossGrad, EqualLossesGiveZeroGateGradient) {
  std::mt19937_64 rng(3);
  const auto params = RouterParams::init(4, 3, 11);
  auto sample = random_sample(4, 3, 1, rng);
  sample.agent_losses = {Vector(4, 0.6)};
  const auto g = router_loss_grad(params, sample, LstmState::zeros(3), LossConfig{});
  for (double x : g.grad.gate_w.span()) EXPECT_NEAR(x, 0.0, 1e-15);
}

TEST(RouterLossGrad, NoSignalNoGradient) {
  std::mt19937_64 rng(4);
  const auto params = RouterParams::init(3, 2, 12);
  auto sample = random_sample(3, 2, 3, rng);
  for (auto& l : sample.agent_losses) l = Vector(3);
  const auto g = router_loss_grad(params, sample, LstmState::zeros(2), LossConfig{});
  EXPECT_EQ(flatten(g.grad), Vector(parameter_count(params)));
}

TEST(RouterLossGrad, ShapeErrors) {
  const auto params = RouterParams::init(3, 2, 12);
  TrainSample s;
  s.input = Vector(2);
  EXPECT_THROW(router_loss_grad(params, s, LstmState::zeros(2), LossConfig{}), ShapeError);
  s.agent_losses = {Vector(2)};
  EXPECT_THROW(router_loss_grad(params, s, LstmState::zeros(2), LossConfig{}), ShapeError);
}

// Independent training oracle: plain gradient descent driven by central
// differences of the batch loss, compared step for step with train_router.
TEST(TrainRouter, MatchesFiniteDifferenceDescent) {
  const auto data = make_fixed_loss_dataset(4, 2, Vector{1.0, 0.2}, 5);
  const auto init = RouterParams::init(2, 2, 9);
  const LossConfig lcfg{0.2, 0.1, EntropyMode::bonus};
  TrainConfig tcfg;
  tcfg.learning_rate = 0.3;
  tcfg.steps = 15;
  const auto trained = train_router(init, data, tcfg, lcfg);

  Vector theta = flatten(init);
  auto batch_loss = [&](const Vector& t) {
    const auto p = unflatten(init, t);
    double acc = 0.0;
    for (const auto& s : data) acc += sample_forward(p, s, LstmState::zeros(2), lcfg).loss;
    return acc / static_cast<double>(data.size());
  };
  for (std::size_t step = 0; step < tcfg.steps; ++step) {
    EXPECT_NEAR(batch_loss(theta), trained.curve[step].mean_loss, 1e-9);
    add_into(theta, finite_diff_grad(batch_loss, theta, 1e-6), -tcfg.learning_rate);
  }
  EXPECT_LT(relative_error(theta, flatten(trained.params)), 1e-7);
}

TEST(TrainRouter, ConcentratesOnLowestLossAgent) {
  const auto data = make_fixed_loss_dataset(16, 4, kFixedLosses, 42);
  const auto result = train_router(concentration_init(), data, concentration_train(), LossConfig{});
  const auto p = mean_gate(result.params, data);
  EXPECT_GT(p[1], 0.95) << "p = [" << p[0] << ", " << p[1] << ", " << p[2] << "]";
}

TEST(TrainRouter, LargeEntropyBonusStaysNearUniform) {
  const auto data = make_fixed_loss_dataset(16, 4, kFixedLosses, 42);
  const auto result =
      train_router(concentration_init(), data, concentration_train(), LossConfig{10.0, 0.0, EntropyMode::bonus});
  EXPECT_LT(total_variation_from_uniform(mean_gate(result.params, data)), 0.05);
}

TEST(TrainRouter, EntropyNonDecreasingInLambda) {
  const auto data = make_fixed_loss_dataset(16, 4, kFixedLosses, 42);
  double previous = -1.0;
  for (double lambda : {0.0, 0.1, 1.0, 10.0}) {
    const auto result =
        train_router(concentration_init(), data, concentration_train(), LossConfig{lambda, 0.0, EntropyMode::bonus});
    const double h = entropy(mean_gate(result.params, data));
    EXPECT_GE(h, previous) << "lambda " << lambda;
    previous = h;
  }
}

TEST(TrainRouter, LoadBalanceKeepsUniformWithEqualLosses) {
  const auto data = make_fixed_loss_dataset(8, 3, Vector(3, 0.5), 3);
  auto init = RouterParams::init(3, 3, 21);
  init.gate_w = Matrix(3, 3);
  TrainConfig tcfg;
  tcfg.learning_rate = 0.5;
  tcfg.steps = 50;
  const auto result = train_router(init, data, tcfg, LossConfig{0.0, 1.0});
  for (const auto& pt : result.curve) EXPECT_LT(pt.mean_load_balance, 1e-6);
  const auto p = mean_gate(result.params, data);
  for (double x : p) EXPECT_NEAR(x, 1.0 / 3.0, 1e-3);
}

TEST(TrainRouter, SmallStepSgdIsMonotone) {
  const auto data = make_fixed_loss_dataset(16, 4, kFixedLosses, 42);
  TrainConfig tcfg;
  tcfg.learning_rate = 0.01;
  tcfg.steps = 200;
  const auto result = train_router(concentration_init(), data, tcfg, LossConfig{});
  for (std::size_t i = 1; i < result.curve.size(); ++i)
    EXPECT_LE(result.curve[i].mean_loss, result.curve[i - 1].mean_loss + 1e-9) << "step " << i;
}

TEST(TrainRouter, DeterministicWithMiniBatchesAndAdam) {
  const auto data = make_fixed_loss_dataset(20, 3, kFixedLosses, 8);
  TrainConfig tcfg;
  tcfg.optimizer = Optimizer::adam;
  tcfg.learning_rate = 0.05;
  tcfg.batch_size = 6;
  tcfg.steps = 40;
  const auto a = train_router(RouterParams::init(3, 3, 1), data, tcfg, LossConfig{0.1, 0.1});
  const auto b = train_router(RouterParams::init(3, 3, 1), data, tcfg, LossConfig{0.1, 0.1});
  EXPECT_EQ(a.params, b.params);
  EXPECT_LT(a.curve.back().mean_loss, a.curve.front().mean_loss);
}

TEST(TrainRouter, DivergenceReportsStep) {
  const auto data = make_fixed_loss_dataset(4, 2, Vector{1e300, 0.0}, 1);
  TrainConfig tcfg;
  tcfg.learning_rate = 1e10;
  tcfg.steps = 20;
  try {
    train_router(RouterParams::init(2, 2, 1), data, tcfg, LossConfig{});
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_GE(e.step(), 1u);
  }
}

TEST(TrainRouter, ConfigValidation) {
  const auto data = make_fixed_loss_dataset(2, 2, Vector{1, 0}, 1);
  TrainConfig bad;
  bad.steps = 0;
  EXPECT_THROW(train_router(RouterParams::init(2, 2, 1), data, bad, LossConfig{}), ParameterError);
  EXPECT_THROW(train_router(RouterParams::init(2, 2, 1), {}, TrainConfig{}, LossConfig{}), ParameterError);
}

TEST(TrainRouter, CurveCsv) {
  const auto data = make_fixed_loss_dataset(2, 2, Vector{1, 0}, 1);
  TrainConfig tcfg;
  tcfg.steps = 3;
  const auto result = train_router(RouterParams::init(2, 2, 1), data, tcfg, LossConfig{});
  const auto path = std::filesystem::temp_directory_path() / "mmoa_curve_test.csv";
  write_curve_csv(result.curve, path.string());
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,mean_loss,mean_entropy,mean_load_balance,learning_rate");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 3);
  std::filesystem::remove(path);
}
