#pragma once

#include <functional>
#include <optional>

#include "optweights/error.hpp"

namespace testing {

/// Kind of the optw::Error thrown by f, or nullopt if it returns normally.
inline std::optional<optw::ErrorKind> thrown_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const optw::Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace testing

#define CHECK_KIND(expr, kind) \
  CHECK(::testing::thrown_kind([&] { (void)(expr); }) == std::optional<optw::ErrorKind>(kind))
