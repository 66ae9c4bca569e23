// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace pmamba {

/// Base of every error raised by the library. The CLI maps subclasses to
/// distinct exit codes (see `exit_code_for`).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ScaleError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

// Process exit codes used by the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitData = 4;
inline constexpr int kExitRuntime = 5;

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return kExitUsage;
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  // Corrupt or incompatible checkpoint files are bad input data too.
  if (dynamic_cast<const IntegrityError*>(&e) || dynamic_cast<const VersionError*>(&e)) return kExitData;
  return kExitRuntime;
}

namespace detail {

template <class E>
inline void require(bool cond, const std::string& what) {
  if (!cond) throw E(what);
}

}  // namespace detail
}  // namespace pmamba
