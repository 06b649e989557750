#pragma once

#include <stdexcept>
#include <string>

namespace ppsvae {

/// Caller broke a precondition of a library operation.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad user input: unknown dataset, bad config key, invalid dimensions.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset files missing or malformed.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint bytes failed the integrity check (truncation, corruption).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint written by an incompatible format version.
class IncompatibleCheckpoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite quantity.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

}  // namespace ppsvae
