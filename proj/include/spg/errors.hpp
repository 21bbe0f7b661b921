#pragma once

#include <stdexcept>
#include <string>

namespace spg {

/// Shape or rank disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

/// A NaN or infinity was produced (or supplied) where finite values are required.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Input is valid in shape but degenerate in value (e.g. near-zero norm).
class DegenerateInputError : public std::domain_error {
public:
  explicit DegenerateInputError(const std::string& what) : std::domain_error(what) {}
};

/// A benchmark spec that cannot be realised (e.g. class separation too large).
class InfeasibleSpecError : public std::runtime_error {
public:
  explicit InfeasibleSpecError(const std::string& what) : std::runtime_error(what) {}
};

/// Training diverged or could not proceed; message carries the failing context.
class TrainingError : public std::runtime_error {
public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad or inconsistent configuration; message lists the offending keys.
class ConfigError : public std::invalid_argument {
public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// A required upstream artifact is missing; names the subcommand that makes it.
class DependencyError : public std::runtime_error {
public:
  DependencyError(const std::string& what, std::string subcommand)
      : std::runtime_error(what), required_subcommand(std::move(subcommand)) {}
  std::string required_subcommand;
};

}  // namespace spg
