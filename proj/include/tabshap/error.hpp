#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tabshap {

// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller violated a documented precondition (length mismatch, M < 2, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A cell could not be normalized; carries the column name.
class NormalizationError : public Error {
 public:
  NormalizationError(std::string column, const std::string& what)
      : Error(what), column_(std::move(column)) {}
  const std::string& column() const noexcept { return column_; }

 private:
  std::string column_;
};

// Malformed input file. Row is 1-based counting the header as row 1; 0 when
// not applicable.
class LoadError : public Error {
 public:
  LoadError(const std::string& what, std::size_t row = 0)
      : Error(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Any failure to obtain a distribution from a backend.
class BackendError : public Error {
 public:
  using Error::Error;
};

class BackendUnavailableError : public BackendError {
 public:
  using BackendError::BackendError;
};

class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

class CacheMissError : public BackendError {
 public:
  CacheMissError(std::string digest)
      : BackendError("replay cache miss for prompt digest " + digest),
        digest_(std::move(digest)) {}
  const std::string& digest() const noexcept { return digest_; }

 private:
  std::string digest_;
};

// JSON file could not be parsed; byte offset of the failure is kept.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t byte_offset)
      : Error(what), byte_offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

// Cache was written under a different configuration fingerprint.
class StaleCacheError : public Error {
 public:
  using Error::Error;
};

// Requested instance indices differ from the recorded selected_test_indices.
class IndexSetError : public Error {
 public:
  using Error::Error;
};

}  // namespace tabshap
