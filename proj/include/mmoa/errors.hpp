#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmoa {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension or count mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Argument outside its admissible range (k, epsilon, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Weights/report files that fail schema checks. `field()` names the offender.
class DeserializationError : public Error {
 public:
  DeserializationError(std::string field, const std::string& what)
      : Error("deserialization error at '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// An agent could not produce an output (timeout, retries exhausted, bad payload).
class AgentUnavailable : public Error {
 public:
  AgentUnavailable(std::string agent_id, const std::string& what)
      : Error("agent '" + agent_id + "' unavailable: " + what), agent_id_(std::move(agent_id)) {}
  const std::string& agent_id() const noexcept { return agent_id_; }

 private:
  std::string agent_id_;
};

// Every agent of a layer failed; the failure policy cannot produce an output.
class PipelineError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : Error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace mmoa
