#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace epg {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure inside an update; callers may recover (e.g. reset a site).
class NumericalError : public Error {
public:
  using Error::Error;
};

/// Removing a site produced an unnormalizable cavity.
class InvalidCavity : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class NonPositiveCavityPrecision : public InvalidCavity {
public:
  explicit NonPositiveCavityPrecision(std::size_t t)
      : InvalidCavity("non-positive cavity precision at index " +
                      std::to_string(t)),
        index_(t) {}
  std::size_t index() const noexcept { return index_; }

private:
  std::size_t index_;
};

class NonFiniteMoment : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class NonSpdResult : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class RootNotBracketed : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class NegativeKappa : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class SingularInnovation : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class AllForbidden : public Error {
public:
  AllForbidden() : Error("every candidate has zero weight") {}
};

class LengthMismatch : public Error {
public:
  using Error::Error;
};

class ShapeMismatch : public Error {
public:
  using Error::Error;
};

/// Violated precondition on user-provided input.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

} // namespace epg
