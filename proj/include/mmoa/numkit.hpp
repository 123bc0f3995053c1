#pragma once

// Small dense numerical kernel: vectors, row-major matrices, activations,
// a standard LSTM cell with an exact backward pass, and a central-difference
// gradient oracle. Everything is 64-bit and deterministic.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmoa/errors.hpp"

namespace mmoa {

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  explicit Vector(std::vector<double> data) : data_(std::move(data)) {}
  Vector(std::initializer_list<double> values) : data_(values) {}

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  bool operator==(const Vector&) const = default;

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  std::vector<double> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  // Row-list literal, e.g. Matrix{{1, 2}, {3, 4}}.
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Vector matvec(const Matrix& m, const Vector& v) {
  if (m.cols() != v.dim()) {
    throw ShapeError("matvec: matrix " + shape_str(m) + " vs vector dim " + std::to_string(v.dim()));
  }
  Vector out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = 0.0;
    const auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

// m^T v
inline Vector matvec_t(const Matrix& m, const Vector& v) {
  if (m.rows() != v.dim()) {
    throw ShapeError("matvec_t: matrix " + shape_str(m) + " vs vector dim " + std::to_string(v.dim()));
  }
  Vector out(m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += row[c] * v[r];
  }
  return out;
}

// m += a b^T
inline void add_outer(Matrix& m, const Vector& a, const Vector& b) {
  if (m.rows() != a.dim() || m.cols() != b.dim()) throw ShapeError("add_outer: shape mismatch");
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) += a[r] * b[c];
}

inline void add_into(Vector& dst, const Vector& src, double scale = 1.0) {
  if (dst.dim() != src.dim()) throw ShapeError("add_into: dim mismatch");
  for (std::size_t i = 0; i < dst.dim(); ++i) dst[i] += scale * src[i];
}

inline Vector add(const Vector& a, const Vector& b) {
  Vector out = a;
  add_into(out, b);
  return out;
}

inline double dot(const Vector& a, const Vector& b) {
  if (a.dim() != b.dim()) throw ShapeError("dot: dim mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(const Vector& v) { return std::sqrt(dot(v, v)); }

inline double l2_distance(const Vector& a, const Vector& b) {
  if (a.dim() != b.dim()) throw ShapeError("l2_distance: dim mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

inline Vector concat(std::span<const Vector> parts) {
  std::vector<double> out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return Vector(std::move(out));
}

// ---------------------------------------------------------------------------
// Activations

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Max-subtracted softmax; never overflows for finite input. Entries that
// would underflow are floored at the smallest normal double so every
// probability stays strictly positive.
inline Vector softmax(const Vector& v) {
  if (v.empty()) throw ShapeError("softmax: empty vector");
  if (!v.all_finite()) throw NumericError("softmax: non-finite input");
  const double m = *std::max_element(v.begin(), v.end());
  Vector out(v.dim());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.dim(); ++i) {
    out[i] = std::max(std::exp(v[i] - m), std::numeric_limits<double>::min());
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

// Vector-Jacobian product of softmax: returns dL/dlogits given p and dL/dp.
inline Vector softmax_backward(const Vector& p, const Vector& grad_p) {
  const double inner = dot(p, grad_p);
  Vector out(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i) out[i] = p[i] * (grad_p[i] - inner);
  return out;
}

// ---------------------------------------------------------------------------
// LSTM cell

enum LstmGate : std::size_t { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };
inline constexpr std::array<const char*, 4> kLstmGateNames = {"input", "forget", "output", "candidate"};

struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::array<Matrix, 4> w_input;      // hidden x input
  std::array<Matrix, 4> w_recurrent;  // hidden x hidden
  std::array<Vector, 4> bias;         // hidden

  static LstmParams zeros(std::size_t input_dim, std::size_t hidden_dim) {
    LstmParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    for (std::size_t g = 0; g < 4; ++g) {
      p.w_input[g] = Matrix(hidden_dim, input_dim);
      p.w_recurrent[g] = Matrix(hidden_dim, hidden_dim);
      p.bias[g] = Vector(hidden_dim);
    }
    return p;
  }

  void validate() const {
    for (std::size_t g = 0; g < 4; ++g) {
      const std::string name = kLstmGateNames[g];
      if (w_input[g].rows() != hidden_dim || w_input[g].cols() != input_dim)
        throw ShapeError("lstm." + name + ".w_input has shape " + shape_str(w_input[g]));
      if (w_recurrent[g].rows() != hidden_dim || w_recurrent[g].cols() != hidden_dim)
        throw ShapeError("lstm." + name + ".w_recurrent has shape " + shape_str(w_recurrent[g]));
      if (bias[g].dim() != hidden_dim)
        throw ShapeError("lstm." + name + ".bias has dim " + std::to_string(bias[g].dim()));
    }
  }

  bool operator==(const LstmParams&) const = default;
};

struct LstmState {
  Vector h;
  Vector c;

  static LstmState zeros(std::size_t hidden_dim) { return {Vector(hidden_dim), Vector(hidden_dim)}; }
  bool operator==(const LstmState&) const = default;
};

// Everything lstm_backward needs from the forward call.
struct CellCache {
  Vector z;
  LstmState prev;
  std::array<Vector, 4> act;  // post-activation gate values
  Vector c;
  Vector tanh_c;
};

struct LstmStep {
  LstmState state;
  CellCache cache;
};

inline LstmStep lstm_forward(const LstmParams& p, const Vector& z, const LstmState& s) {
  if (z.dim() != p.input_dim)
    throw ShapeError("lstm_forward: input dim " + std::to_string(z.dim()) + " != " + std::to_string(p.input_dim));
  if (s.h.dim() != p.hidden_dim || s.c.dim() != p.hidden_dim)
    throw ShapeError("lstm_forward: state dims do not match hidden dim " + std::to_string(p.hidden_dim));

  LstmStep out;
  out.cache.z = z;
  out.cache.prev = s;
  for (std::size_t g = 0; g < 4; ++g) {
    Vector pre = matvec(p.w_input[g], z);
    add_into(pre, matvec(p.w_recurrent[g], s.h));
    add_into(pre, p.bias[g]);
    for (auto& v : pre) v = (g == kCandidate) ? std::tanh(v) : sigmoid(v);
    out.cache.act[g] = std::move(pre);
  }
  const auto& i = out.cache.act[kInputGate];
  const auto& f = out.cache.act[kForgetGate];
  const auto& o = out.cache.act[kOutputGate];
  const auto& cand = out.cache.act[kCandidate];

  Vector c(p.hidden_dim), tanh_c(p.hidden_dim), h(p.hidden_dim);
  for (std::size_t k = 0; k < p.hidden_dim; ++k) {
    c[k] = f[k] * s.c[k] + i[k] * cand[k];
    tanh_c[k] = std::tanh(c[k]);
    h[k] = o[k] * tanh_c[k];
  }
  out.cache.c = c;
  out.cache.tanh_c = tanh_c;
  out.state = {std::move(h), std::move(c)};
  return out;
}

struct LstmGrads {
  LstmParams params;
  Vector z;
  LstmState state_in;
};

inline LstmGrads lstm_backward(const LstmParams& p, const CellCache& cache, const Vector& grad_h,
                               const Vector& grad_c) {
  const std::size_t H = p.hidden_dim;
  if (cache.z.dim() != p.input_dim || cache.c.dim() != H || cache.prev.h.dim() != H)
    throw ShapeError("lstm_backward: cache does not match parameters");
  if (grad_h.dim() != H || grad_c.dim() != H) throw ShapeError("lstm_backward: upstream gradient dim mismatch");

  const auto& i = cache.act[kInputGate];
  const auto& f = cache.act[kForgetGate];
  const auto& o = cache.act[kOutputGate];
  const auto& cand = cache.act[kCandidate];

  std::array<Vector, 4> d_pre;
  for (auto& v : d_pre) v = Vector(H);
  Vector d_c_prev(H);
  for (std::size_t k = 0; k < H; ++k) {
    const double dc = grad_c[k] + grad_h[k] * o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
    const double d_o = grad_h[k] * cache.tanh_c[k];
    const double d_i = dc * cand[k];
    const double d_f = dc * cache.prev.c[k];
    const double d_cand = dc * i[k];
    d_c_prev[k] = dc * f[k];
    d_pre[kInputGate][k] = d_i * i[k] * (1.0 - i[k]);
    d_pre[kForgetGate][k] = d_f * f[k] * (1.0 - f[k]);
    d_pre[kOutputGate][k] = d_o * o[k] * (1.0 - o[k]);
    d_pre[kCandidate][k] = d_cand * (1.0 - cand[k] * cand[k]);
  }

  LstmGrads g;
  g.params = LstmParams::zeros(p.input_dim, H);
  g.z = Vector(p.input_dim);
  g.state_in = {Vector(H), std::move(d_c_prev)};
  for (std::size_t k = 0; k < 4; ++k) {
    add_outer(g.params.w_input[k], d_pre[k], cache.z);
    add_outer(g.params.w_recurrent[k], d_pre[k], cache.prev.h);
    g.params.bias[k] = d_pre[k];
    add_into(g.z, matvec_t(p.w_input[k], d_pre[k]));
    add_into(g.state_in.h, matvec_t(p.w_recurrent[k], d_pre[k]));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Initialization

// uniform(-s, s) with s = 1/sqrt(fan_in)
inline void init_uniform(Matrix& m, std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(m.cols(), 1)));
  std::uniform_real_distribution<double> dist(-s, s);
  for (auto& v : m.span()) v = dist(rng);
}

inline LstmParams init_lstm(std::size_t input_dim, std::size_t hidden_dim, std::mt19937_64& rng,
                            double forget_bias = 1.0) {
  auto p = LstmParams::zeros(input_dim, hidden_dim);
  for (std::size_t g = 0; g < 4; ++g) {
    init_uniform(p.w_input[g], rng);
    init_uniform(p.w_recurrent[g], rng);
  }
  p.bias[kForgetGate] = Vector(hidden_dim, forget_bias);
  return p;
}

// ---------------------------------------------------------------------------
// Gradient oracle

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per coordinate.
inline Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& theta,
                               double eps = 1e-5) {
  if (!(eps > 0.0 && eps <= 1e-3)) throw ParameterError("finite_diff_grad: eps must be in (0, 1e-3]");
  Vector grad(theta.dim());
  Vector probe = theta;
  for (std::size_t i = 0; i < theta.dim(); ++i) {
    probe[i] = theta[i] + eps;
    const double up = f(probe);
    probe[i] = theta[i] - eps;
    const double down = f(probe);
    probe[i] = theta[i];
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " + std::to_string(i));
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

// ||a - b|| / max(||a|| + ||b||, floor). The floor keeps vanishing gradients
// from turning finite-difference roundoff into a large ratio.
inline double relative_error(const Vector& a, const Vector& b, double floor = 1e-8) {
  if (a.dim() != b.dim()) throw ShapeError("relative_error: dim mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), floor);
}

}  // namespace mmoa
