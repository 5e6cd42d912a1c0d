#ifndef MBPRE_ERRORS_HPP
#define MBPRE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mbpre {

/// Invalid configuration. `path` names the offending field (e.g.
/// "polling.cycles[0].epsilon[1][0]") when the error came from a config file.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& message, std::string path = {})
      : std::invalid_argument(path.empty() ? message : path + ": " + message),
        path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// A stability guard failed (e.g. an exhaustive sub-busy period that would
/// never clear its station).
class GuardViolation : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Counts grew past what the state representation can hold.
class PopulationOverflow : public std::overflow_error {
 public:
  using std::overflow_error::overflow_error;
};

/// A single draw exceeded its work cap (e.g. services within one polling cycle).
class CensoredDraw : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Iterative numerics failed to converge or two computation routes disagree.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A statistic cannot be computed from the given sample.
class StatisticsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace mbpre

#endif  // MBPRE_ERRORS_HPP
