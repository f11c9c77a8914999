#pragma once

#include <stdexcept>
#include <string>

namespace cls {

/// Raised when a caller breaks an operation's precondition (dimension
/// mismatch, out-of-range index, stepping a finished episode, ...).
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

/// Bad or incomplete configuration: missing fixture entries, unknown classes,
/// malformed config files.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// The long-term-memory endpoint could not be reached after all retries.
class OracleUnavailable : public std::runtime_error {
 public:
  explicit OracleUnavailable(const std::string& what) : std::runtime_error(what) {}
};

/// Snapshot or metrics file could not be parsed.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cls
