// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace kvpo {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or shape description.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// NaN or infinity produced during evaluation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Caller violated a structural precondition (layout, shapes, history).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// ODE stepping past the end of the time grid.
class SequencingError : public Error {
 public:
  using Error::Error;
};

/// Not enough frame history to fill the routed slots.
class InsufficientHistoryError : public Error {
 public:
  using Error::Error;
};

}  // namespace kvpo
