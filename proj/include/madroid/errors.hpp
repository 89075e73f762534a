#pragma once

#include <stdexcept>
#include <string>

namespace madroid {

// Base class for every recoverable failure raised by the library. Callers
// that need to distinguish task failures from infrastructure failures catch
// the concrete subclasses.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// view-hierarchy
class MalformedDocument : public Error {
 public:
  using Error::Error;
};

class NoMatch : public Error {
 public:
  using Error::Error;
};

// action-grammar
class UnparsableReply : public Error {
 public:
  using Error::Error;
};

// llm-gateway
class BadConfig : public Error {
 public:
  using Error::Error;
};

class RemoteError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};

class NoScriptMatch : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// agent-roles
class PlanParseError : public Error {
 public:
  using Error::Error;
};

class OperatorFailure : public Error {
 public:
  using Error::Error;
};

class ReviewParseError : public Error {
 public:
  using Error::Error;
};

// sim-devices
class ScenarioInvalid : public Error {
 public:
  using Error::Error;
};

class TargetMissing : public Error {
 public:
  using Error::Error;
};

// orchestrator
class MaxRestartsExceeded : public Error {
 public:
  using Error::Error;
};

}  // namespace madroid
