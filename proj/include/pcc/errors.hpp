#pragma once

#include <stdexcept>
#include <string>

namespace pcc {

// Shape or argument contract violations (wrong dims, bad enum, missing field).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf or other numeric breakdown; names the operation that produced it.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse (backward called twice, mismatched tapes, missing reset).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-facing configuration (CLI flags, config fields).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed serialized artifacts (datasets, checkpoints).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Optimization/solver failures that are not plain numeric errors.
struct SolverError : std::runtime_error {
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pcc
