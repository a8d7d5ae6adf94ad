#pragma once

#include <stdexcept>
#include <string>

namespace maskcap {

// Error taxonomy shared by every module. Each maps to one failure class the
// public operations are allowed to raise; the CLI translates them to exit codes.

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& m) : std::runtime_error("shape-error: " + m) {}
};

struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& m) : std::runtime_error("domain-error: " + m) {}
};

struct IndexError : std::runtime_error {
  explicit IndexError(const std::string& m) : std::runtime_error("index-error: " + m) {}
};

struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string& m) : std::runtime_error("capacity-error: " + m) {}
};

struct ContractViolation : std::logic_error {
  explicit ContractViolation(const std::string& m) : std::logic_error("contract-violation: " + m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error("numeric-error: " + m) {}
};

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& m) : std::runtime_error("parse-error: " + m) {}
};

struct GenerationError : std::runtime_error {
  explicit GenerationError(const std::string& m) : std::runtime_error("generation-error: " + m) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error("config-error: " + m) {}
};

struct CorruptionError : std::runtime_error {
  explicit CorruptionError(const std::string& m) : std::runtime_error("corruption-error: " + m) {}
};

struct VersionError : std::runtime_error {
  explicit VersionError(const std::string& m) : std::runtime_error("version-error: " + m) {}
};

struct CompatibilityError : std::runtime_error {
  explicit CompatibilityError(const std::string& m) : std::runtime_error("compatibility-error: " + m) {}
};

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& m) : std::runtime_error("usage-error: " + m) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error("io-error: " + m) {}
};

}  // namespace maskcap
