// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace diffserve {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or rank disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value outside the accepted domain (thresholds, ranges, step counts...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A required image (init, mask, condition) was not supplied.
class MissingInput : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Malformed or inconsistent on-disk / on-wire data.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Lookup of a name that is not registered (scheduler, adapter, model, weight).
class NotFound : public Error {
 public:
  using Error::Error;
};

/// The service cannot take more work right now (queue full, no healthy worker).
class ServiceUnavailable : public Error {
 public:
  using Error::Error;
};

/// Allocation bookkeeping went negative.
class AccountingError : public Error {
 public:
  using Error::Error;
};

}  // namespace diffserve
