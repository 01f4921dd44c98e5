// Copyright 2026 The DLM Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DLM_ERRORS_H_
#define DLM_ERRORS_H_

#include <stdexcept>
#include <string>

namespace dlm {

// Invalid environment / pipeline configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed an argument outside an operation's domain.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Object is not in the state an operation requires (e.g. missing rtg_norm).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Chat message order or serialized format violation.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnknownTokenError : public std::runtime_error {
 public:
  explicit UnknownTokenError(const std::string& fragment)
      : std::runtime_error("unknown token fragment: '" + fragment + "'"),
        fragment_(fragment) {}
  const std::string& fragment() const { return fragment_; }

 private:
  std::string fragment_;
};

class SampleTooLongError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CollectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateDatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during optimization.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dlm

#endif  // DLM_ERRORS_H_
