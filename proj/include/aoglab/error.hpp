#pragma once

#include <stdexcept>
#include <string>

namespace aoglab {

/// Base of every exception raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed container or JSON document.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A value violates a type invariant. `field()` is a JSON-style path to the offending field.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Raised by the parser when no template has an active pattern.
class EmptyAogError : public Error {
 public:
  EmptyAogError() : Error("empty-AOG: no active latent pattern in any template") {}
};

}  // namespace aoglab
