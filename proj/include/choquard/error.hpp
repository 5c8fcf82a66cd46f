#pragma once

#include <stdexcept>
#include <string>

namespace choquard {

// Exit codes shared by the CLI.
enum class ExitCode : int { ok = 0, check_failure = 1, config_error = 2, runtime_failure = 3 };

// Malformed or inconsistent configuration (domain spec, config file, resolution).
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// A numeric parameter outside its admissible range (mu, lambda, p, ...).
class ParameterError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure during a computation (non-convergence, degenerate input).
class ComputeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace choquard
