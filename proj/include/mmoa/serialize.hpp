#pragma once

// Router weights as a versioned JSON document:
//   {"version": "1", "n_agents", "agent_dim", "d_z", "d_h",
//    "matrices": {name: {"rows", "cols", "data": [row-major]}},
//    "vectors":  {name: [..]}}
// Doubles are written in shortest round-trip form, so load(save(p)) == p bit for bit.

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mmoa/router.hpp"

namespace mmoa {

inline constexpr const char* kWeightsVersion = "1";

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
}

inline const nlohmann::json& require(const nlohmann::json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) throw DeserializationError(path + key, "missing field");
  return obj.at(key);
}

inline std::size_t require_size(const nlohmann::json& obj, const std::string& key, const std::string& path) {
  const auto& v = require(obj, key, path);
  if (!v.is_number_unsigned() || v.get<std::size_t>() == 0)
    throw DeserializationError(path + key, "expected positive integer");
  return v.get<std::size_t>();
}

inline std::vector<double> float_array(const nlohmann::json& v, const std::string& field) {
  if (!v.is_array()) throw DeserializationError(field, "expected float array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw DeserializationError(field, "non-numeric entry");
    const double d = x.get<double>();
    if (!std::isfinite(d)) throw DeserializationError(field, "non-finite entry");
    out.push_back(d);
  }
  return out;
}

inline Matrix matrix_from_json(const nlohmann::json& doc, const std::string& name, std::size_t rows,
                               std::size_t cols) {
  const std::string field = "matrices." + name;
  const auto& m = require(require(doc, "matrices", ""), name, "matrices.");
  const std::size_t r = require_size(m, "rows", field + ".");
  const std::size_t c = require_size(m, "cols", field + ".");
  auto data = float_array(require(m, "data", field + "."), field + ".data");
  if (data.size() != r * c)
    throw DeserializationError(field, "rows*cols = " + std::to_string(r * c) + " but data has " +
                                          std::to_string(data.size()) + " entries");
  if (r != rows || c != cols)
    throw DeserializationError(field, "shape " + std::to_string(r) + "x" + std::to_string(c) + ", expected " +
                                          std::to_string(rows) + "x" + std::to_string(cols));
  return Matrix(r, c, std::move(data));
}

inline Vector vector_from_json(const nlohmann::json& doc, const std::string& name, std::size_t dim) {
  const std::string field = "vectors." + name;
  auto data = float_array(require(require(doc, "vectors", ""), name, "vectors."), field);
  if (data.size() != dim)
    throw DeserializationError(field, "length " + std::to_string(data.size()) + ", expected " + std::to_string(dim));
  return Vector(std::move(data));
}

}  // namespace detail

inline nlohmann::json params_to_json(const RouterParams& p) {
  nlohmann::json matrices = nlohmann::json::object();
  nlohmann::json vectors = nlohmann::json::object();
  matrices["fusion_w"] = detail::matrix_to_json(p.fusion_w);
  vectors["fusion_b"] = p.fusion_b.values();
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string gate = kLstmGateNames[g];
    matrices["lstm." + gate + ".w_input"] = detail::matrix_to_json(p.lstm.w_input[g]);
    matrices["lstm." + gate + ".w_recurrent"] = detail::matrix_to_json(p.lstm.w_recurrent[g]);
    vectors["lstm." + gate + ".bias"] = p.lstm.bias[g].values();
  }
  matrices["gate_w"] = detail::matrix_to_json(p.gate_w);
  vectors["gate_b"] = p.gate_b.values();
  return {{"version", kWeightsVersion},
          {"n_agents", p.n_agents},
          {"agent_dim", p.agent_dim},
          {"d_z", p.fusion_dim()},
          {"d_h", p.hidden_dim()},
          {"matrices", std::move(matrices)},
          {"vectors", std::move(vectors)}};
}

inline RouterParams params_from_json(const nlohmann::json& doc) {
  using detail::matrix_from_json;
  using detail::vector_from_json;
  const auto& version = detail::require(doc, "version", "");
  if (!version.is_string()) throw DeserializationError("version", "expected string");
  if (version.get<std::string>() != kWeightsVersion)
    throw DeserializationError("version", "unsupported version '" + version.get<std::string>() +
                                              "', this reader understands '" + kWeightsVersion + "'");
  const std::size_t n = detail::require_size(doc, "n_agents", "");
  const std::size_t d = detail::require_size(doc, "agent_dim", "");
  const std::size_t dz = detail::require_size(doc, "d_z", "");
  const std::size_t dh = detail::require_size(doc, "d_h", "");

  auto p = RouterParams::zeros(n, d, dz, dh);
  p.fusion_w = matrix_from_json(doc, "fusion_w", dz, n * d);
  p.fusion_b = vector_from_json(doc, "fusion_b", dz);
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string gate = kLstmGateNames[g];
    p.lstm.w_input[g] = matrix_from_json(doc, "lstm." + gate + ".w_input", dh, dz);
    p.lstm.w_recurrent[g] = matrix_from_json(doc, "lstm." + gate + ".w_recurrent", dh, dh);
    p.lstm.bias[g] = vector_from_json(doc, "lstm." + gate + ".bias", dh);
  }
  p.gate_w = matrix_from_json(doc, "gate_w", n, dh);
  p.gate_b = vector_from_json(doc, "gate_b", n);
  return p;
}

inline void save_params(const RouterParams& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << params_to_json(p).dump(1) << '\n';
  if (!out) throw Error("write to '" + path + "' failed");
}

inline RouterParams load_params(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "' for reading");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DeserializationError("<document>", e.what());
  }
  return params_from_json(doc);
}

}  // namespace mmoa
