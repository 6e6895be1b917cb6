#pragma once

#include <stdexcept>
#include <string>

namespace padkit {

// Error hierarchy shared by every module. The CLI maps ValidationError
// subclasses to exit code 1 and everything else to exit code 2.
class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class InvalidParameter : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class IndexError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class FormatError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class MissingOrganError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class InsufficientData : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

/// A file holds a different element type than the caller asked for.
class TypeError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

/// A request arrived out of order (e.g. a response for a pair other than the current one).
class SequenceError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

/// A request duplicates state that already exists.
class ConflictError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class NotFoundError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class GenerationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace padkit
