#pragma once

#include <stdexcept>
#include <string>

namespace earfa {

// Shapes that cannot be combined, or an operand of the wrong rank/size.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A hyperparameter or config key that is invalid on its own.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& msg, std::string key = {})
      : std::invalid_argument(msg), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse, e.g. calling backward on a value that was never recorded.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Weight / checkpoint / image files that cannot be read or do not match.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required (NaN gradients etc).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace earfa
