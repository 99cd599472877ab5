// Copyright 2026 The Geneses Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace geneses {

enum class Errc {
  invalid_shape,
  config,
  contract,
  numeric_domain,
  empty_gradient,
  sequence_length,
  io,
  format,
  degenerate_power,
  data,
  checkpoint_missing,
  checkpoint_corrupt,
  checkpoint_version,
};

const char* errc_name(Errc code);

/// Single exception type for the library; `code()` carries the category.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, Errc code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace geneses
