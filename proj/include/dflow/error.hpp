// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dflow {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid numeric parameter (non-positive bounds, out-of-range eta, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Noise levels passed in the wrong order for the requested step direction.
class ScheduleOrderError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Malformed density or unknown conditioning label.
class ModelError : public Error {
 public:
  using Error::Error;
};

/// A sampler or optimizer produced a non-finite state.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Remote score service could not be reached.
class TransportError : public Error {
 public:
  TransportError(const std::string& endpoint, const std::string& detail)
      : Error("transport failure talking to " + endpoint + ": " + detail), endpoint_(endpoint) {}

  const std::string& endpoint() const noexcept { return endpoint_; }

 private:
  std::string endpoint_;
};

/// Remote score service answered with something that is not a valid response.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Remote score service answered with the wrong batch or vector shape.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Run configuration could not be parsed or validated. `key()` names the offending entry.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& detail)
      : Error("config key '" + key + "': " + detail), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace dflow
