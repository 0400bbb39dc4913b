#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace optw {

enum class ErrorKind {
  InvalidArgument,
  SupportViolation,
  DegenerateWeights,
  SizeError,
  DomainError,
  SingularDesign,
  NotConverged,
  SeparableData,
  EmptyGroup,
  IllConditioned,
  StalenessError,
  GroupCoverage,
  EmptyInferredGroup,
  AllGroupsEmpty,
  ParseError,
  SchemaError,
  ValueError,
  IoError,
};

/// Name used in machine-parsable error lines, e.g. "SupportViolation".
std::string_view kind_name(ErrorKind kind) noexcept;

/// Numerical failures map to CLI exit code 2; everything else is a
/// validation failure (exit code 1).
bool is_numerical(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace optw
