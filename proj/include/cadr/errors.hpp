#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cadr {

/// Invalid configuration value or missing key. The CLI maps this to exit code 2.
class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or truncated file.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A class does not have enough samples to satisfy a requested count.
class InsufficientSamplesError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Parameters became non-finite. The CLI maps this to exit code 3.
class DivergenceError : public std::runtime_error {
public:
  DivergenceError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step_(step) {}

  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

}  // namespace cadr
