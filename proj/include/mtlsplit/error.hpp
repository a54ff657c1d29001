// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The mtlsplit Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mtlsplit {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An index (class label, task index) is out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A loss or gradient became non-finite. `task()` is -1 when no single task is to blame.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, int task) : Error(what), task_(task) {}
  int task() const noexcept { return task_; }

 private:
  int task_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed JSON or binary container; the message names the offending field.
class ParseError : public Error {
 public:
  using Error::Error;
};

class FileError : public Error {
 public:
  using Error::Error;
};

class UnsupportedFactorError : public Error {
 public:
  using Error::Error;
};

/// Stable codes carried in Error frames on the wire.
enum class WireErrorCode : std::uint16_t {
  kBadMagic = 1,
  kVersion = 2,
  kFraming = 3,
  kUnsupportedDtype = 4,
  kEncoding = 5,
  kDimension = 6,
  kUnsupportedRequest = 7,
  kTimeout = 8,
  kInternal = 9,
  kRequestMismatch = 10,
};

/// Base for split-frame codec failures.
class WireError : public Error {
 public:
  WireError(const std::string& what, WireErrorCode code) : Error(what), code_(code) {}
  WireErrorCode code() const noexcept { return code_; }

 private:
  WireErrorCode code_;
};

class ProtocolError : public WireError {
 public:
  explicit ProtocolError(const std::string& what,
                         WireErrorCode code = WireErrorCode::kBadMagic)
      : WireError(what, code) {}
};

class VersionError : public WireError {
 public:
  explicit VersionError(const std::string& what) : WireError(what, WireErrorCode::kVersion) {}
};

class FramingError : public WireError {
 public:
  explicit FramingError(const std::string& what) : WireError(what, WireErrorCode::kFraming) {}
};

class UnsupportedDtypeError : public WireError {
 public:
  explicit UnsupportedDtypeError(const std::string& what)
      : WireError(what, WireErrorCode::kUnsupportedDtype) {}
};

class EncodingError : public WireError {
 public:
  explicit EncodingError(const std::string& what) : WireError(what, WireErrorCode::kEncoding) {}
};

/// Socket failures, timeouts, and request/response mismatches.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// The server answered with an Error frame.
class RemoteError : public Error {
 public:
  RemoteError(const std::string& what, std::uint16_t code) : Error(what), code_(code) {}
  std::uint16_t code() const noexcept { return code_; }

 private:
  std::uint16_t code_;
};

}  // namespace mtlsplit
