// Copyright 2026 The muse-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iostream>
#include <stdexcept>
#include <string>

namespace muse {

// Bad configuration (schema violations, impossible hyperparameters). CLI exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed on-disk artifacts (size mismatches, truncated files). CLI exit code 2.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Semantically invalid data (non-finite values, unknown labels, empty banks). CLI exit code 2.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated internal invariant; always a bug.
struct InternalError : std::logic_error {
  explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

inline void log_warn(const std::string& msg) {
  std::cerr << "[warn] " << msg << "\n";
}

}  // namespace muse
