#pragma once

// Central-difference check of router_loss_grad.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mmoa/loss.hpp"

namespace mmoa {

struct GradCheckCase {
  std::size_t n = 3;
  std::size_t dim = 4;
  std::size_t layers = 1;
  std::uint64_t seed = 0;
  LossConfig loss;
};

struct GradCheckResult {
  GradCheckCase config;
  double relative_error = 0.0;
  std::size_t worst_index = 0;  // flat index with the largest |analytic - numeric|
  std::string worst_name;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Random inputs, agent outputs and per-layer losses in [0, 2).
inline TrainSample random_train_sample(std::size_t n, std::size_t dim, std::size_t layers, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 2.0);
  TrainSample s;
  s.input = Vector(dim);
  for (auto& x : s.input) x = normal(rng);
  for (std::size_t l = 0; l < layers; ++l) {
    Vector losses(n);
    for (auto& x : losses) x = unit(rng);
    s.agent_losses.push_back(losses);
    std::vector<Vector> outs(n, Vector(dim));
    for (auto& v : outs)
      for (auto& x : v) x = normal(rng);
    s.agent_outputs.push_back(outs);
  }
  return s;
}

// `tamper` lets callers corrupt the analytic gradient before comparison.
inline GradCheckResult check_gradient(const GradCheckCase& c, double eps = 1e-5,
                                      const std::function<void(Vector&)>& tamper = {}) {
  std::mt19937_64 rng(c.seed);
  const auto params = RouterParams::init(c.n, c.dim, c.seed);
  const auto sample = random_train_sample(c.n, c.dim, c.layers, rng);
  const LstmState s0 = LstmState::zeros(params.hidden_dim());
  Vector analytic = flatten(router_loss_grad(params, sample, s0, c.loss).grad);
  if (tamper) tamper(analytic);
  auto f = [&](const Vector& theta) { return sample_forward(unflatten(params, theta), sample, s0, c.loss).loss; };
  const Vector numeric = finite_diff_grad(f, flatten(params), eps);

  GradCheckResult r;
  r.config = c;
  r.relative_error = relative_error(analytic, numeric);
  double worst = -1.0;
  for (std::size_t i = 0; i < analytic.dim(); ++i) {
    const double d = std::abs(analytic[i] - numeric[i]);
    if (d > worst) {
      worst = d;
      r.worst_index = i;
    }
  }
  r.worst_name = parameter_name(params, r.worst_index);
  r.worst_analytic = analytic[r.worst_index];
  r.worst_numeric = numeric[r.worst_index];
  return r;
}

// Grid over n in {2,3,5}, d in {2,4}, L in {1,3} and both entropy modes.
inline std::vector<GradCheckCase> gradcheck_grid(double lambda, double gamma, std::uint64_t seed) {
  std::vector<GradCheckCase> cases;
  for (std::size_t n : {2, 3, 5})
    for (std::size_t d : {2, 4})
      for (std::size_t L : {1, 3})
        for (auto mode : {EntropyMode::bonus, EntropyMode::penalty})
          cases.push_back({n, d, L, seed + cases.size(), LossConfig{lambda, gamma, mode}});
  return cases;
}

}  // namespace mmoa
