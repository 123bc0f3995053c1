#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mmoa/loss.hpp"

namespace mmoa {

enum class Optimizer { sgd, adam };

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t steps = 100;
  std::size_t batch_size = 0;  // 0 or >= dataset size: full batch
  Optimizer optimizer = Optimizer::sgd;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ParameterError("train.learning_rate must be > 0");
    if (steps < 1) throw ParameterError("train.steps must be >= 1");
  }
};

struct CurvePoint {
  std::size_t step = 0;
  double mean_loss = 0.0;
  double mean_entropy = 0.0;
  double mean_load_balance = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  RouterParams params;
  std::vector<CurvePoint> curve;
};

// Mean gradient over a batch. Samples are reduced in index order so seeded
// runs are bit-reproducible.
inline std::pair<Vector, CurvePoint> batch_gradient(const RouterParams& params, const std::vector<TrainSample>& data,
                                                    std::span<const std::size_t> batch, const LossConfig& lcfg) {
  Vector grad(parameter_count(params));
  CurvePoint point;
  const LstmState h0 = LstmState::zeros(params.hidden_dim());
  for (auto idx : batch) {
    auto g = router_loss_grad(params, data[idx], h0, lcfg);
    add_into(grad, flatten(g.grad));
    point.mean_loss += g.forward.loss;
    point.mean_entropy += g.forward.entropy;
    point.mean_load_balance += g.forward.load_balance;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& v : grad) v *= inv;
  point.mean_loss *= inv;
  point.mean_entropy *= inv;
  point.mean_load_balance *= inv;
  return {std::move(grad), point};
}

inline TrainResult train_router(const RouterParams& initial, const std::vector<TrainSample>& data,
                                const TrainConfig& tcfg, const LossConfig& lcfg) {
  tcfg.validate();
  lcfg.validate();
  initial.validate();
  if (data.empty()) throw ParameterError("train_router: empty dataset");

  std::mt19937_64 rng(tcfg.seed);
  const bool full_batch = tcfg.batch_size == 0 || tcfg.batch_size >= data.size();
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = data.size();

  Vector theta = flatten(initial);
  Vector m(theta.dim()), v(theta.dim());
  TrainResult result;
  result.curve.reserve(tcfg.steps);
  RouterParams current = initial;

  for (std::size_t step = 1; step <= tcfg.steps; ++step) {
    std::span<const std::size_t> batch(order);
    if (!full_batch) {
      if (cursor + tcfg.batch_size > order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch = batch.subspan(cursor, tcfg.batch_size);
      cursor += tcfg.batch_size;
    }

    auto [grad, point] = [&] {
      try {
        return batch_gradient(current, data, batch, lcfg);
      } catch (const NumericError& e) {
        throw TrainingError(step, e.what());
      }
    }();
    point.step = step;
    point.learning_rate = tcfg.learning_rate;
    if (!std::isfinite(point.mean_loss)) throw TrainingError(step, "mean loss is not finite");
    result.curve.push_back(point);

    if (tcfg.optimizer == Optimizer::sgd) {
      add_into(theta, grad, -tcfg.learning_rate);
    } else {
      const double c1 = 1.0 - std::pow(tcfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(tcfg.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < theta.dim(); ++i) {
        m[i] = tcfg.beta1 * m[i] + (1.0 - tcfg.beta1) * grad[i];
        v[i] = tcfg.beta2 * v[i] + (1.0 - tcfg.beta2) * grad[i] * grad[i];
        theta[i] -= tcfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + tcfg.adam_eps);
      }
    }
    if (!theta.all_finite()) throw TrainingError(step, "parameters became non-finite");
    current = unflatten(initial, theta);
  }
  result.params = std::move(current);
  return result;
}

inline constexpr const char* kCurveCsvHeader = "step,mean_loss,mean_entropy,mean_load_balance,learning_rate";

inline void write_curve_csv(const std::vector<CurvePoint>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << kCurveCsvHeader << '\n';
  out.precision(17);
  for (const auto& p : curve)
    out << p.step << ',' << p.mean_loss << ',' << p.mean_entropy << ',' << p.mean_load_balance << ','
        << p.learning_rate << '\n';
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace mmoa
