#pragma once

#include <stdexcept>
#include <string>

namespace htk {

/// Base class for every error raised by the toolkit. The CLI maps the
/// category to an exit code.
class Error : public std::runtime_error {
 public:
  enum class Category { usage, data, backend };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(Category::data, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(Category::usage, what) {}
};

class OversizedDocument : public DataError {
 public:
  OversizedDocument(std::size_t size, std::size_t cap)
      : DataError("document of " + std::to_string(size) + " bytes exceeds cap of " +
                  std::to_string(cap) + " bytes"),
        size_(size) {}
  std::size_t size() const noexcept { return size_; }

 private:
  std::size_t size_;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class BackendError : public Error {
 public:
  explicit BackendError(const std::string& what) : Error(Category::backend, what) {}
};

/// Connection failure, timeout or 5xx after retries are exhausted.
class TransportError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// The server answered, but not in the agreed wire format (or with a 4xx).
class ProtocolError : public BackendError {
 public:
  using BackendError::BackendError;
};

}  // namespace htk
