#pragma once

#include <stdexcept>
#include <string>

namespace fedspa {

// Exit codes shared by the CLI and anything that maps failures to processes.
enum class ExitCode : int { ok = 0, validation = 2, numeric = 3, io = 4 };

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Bad argument to a library call (shape mismatch, empty input, out-of-range parameter).
class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what) : Error(ExitCode::validation, what) {}
};

/// Invalid experiment or network configuration. `key()` names the offending field when known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string key = {})
      : Error(ExitCode::validation, key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class DefenseConfigError : public Error {
 public:
  explicit DefenseConfigError(const std::string& what) : Error(ExitCode::validation, what) {}
};

/// The attacker's shard cannot support the configured attack (e.g. no target-class sample).
class AttackerDataError : public Error {
 public:
  explicit AttackerDataError(const std::string& what) : Error(ExitCode::validation, what) {}
};

/// Non-finite loss or degenerate geometry discovered during optimization.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::numeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::io, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ExitCode::io, what) {}
};

// Metric requested on a population where it is not defined.
class UndefinedMetricError : public Error {
 public:
  explicit UndefinedMetricError(const std::string& what) : Error(ExitCode::numeric, what) {}
};

}  // namespace fedspa
