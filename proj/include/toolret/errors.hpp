#pragma once

#include <stdexcept>
#include <string>

namespace toolret {

// Malformed input data (bad JSON line, bad grade, bad run file row).
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structurally valid input that violates a dataset invariant
// (duplicate tool id, run referencing unknown queries, ...).
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Feedback provider failure after retries are exhausted.
struct ProviderError : std::runtime_error {
  explicit ProviderError(const std::string& msg, int http_status = 0)
      : std::runtime_error(msg), status(http_status) {}
  int status;
};

// Non-finite loss during gradient descent.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace toolret
