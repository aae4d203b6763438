#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace msmv {

/// Malformed user input: bad config values, unknown model names, bad flags.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The explicit scheme produced a non-finite state.
class BlowUpError : public std::runtime_error {
 public:
  BlowUpError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// All filter weights underflowed or became non-finite.
class DegenerateFilterError : public std::runtime_error {
 public:
  DegenerateFilterError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// A matrix expected to be symmetric positive semidefinite is not.
class NotPsdError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace msmv
