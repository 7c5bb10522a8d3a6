#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mutarjem {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid decoding/pipeline configuration or a violated precondition.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (vocabulary, model table, TSV, JSON).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Failure talking to a remote model or embedding service. Always retriable.
class TransportError : public Error {
 public:
  TransportError(std::string endpoint, std::string cause)
      : Error("transport error at " + endpoint + ": " + cause),
        endpoint_(std::move(endpoint)),
        cause_(std::move(cause)) {}

  const std::string& endpoint() const noexcept { return endpoint_; }
  const std::string& cause() const noexcept { return cause_; }
  bool retriable() const noexcept { return true; }

 private:
  std::string endpoint_;
  std::string cause_;
};

/// The embedding provider has no representation for the requested language.
class UnsupportedLanguageError : public Error {
 public:
  explicit UnsupportedLanguageError(std::string lang)
      : Error("language '" + lang + "' is not supported by the embedding provider"),
        lang_(std::move(lang)) {}

  const std::string& language() const noexcept { return lang_; }

 private:
  std::string lang_;
};

}  // namespace mutarjem
