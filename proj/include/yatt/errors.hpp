#pragma once

#include <stdexcept>
#include <string>

namespace yatt {

// Base for all library errors. Subclasses carry no extra state; the
// type itself is the classification.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class HostMemoryExceeded : public Error {
 public:
  using Error::Error;
};

class InvalidDistribution : public Error {
 public:
  using Error::Error;
};

class RankOutOfRange : public Error {
 public:
  using Error::Error;
};

class TimeTravel : public Error {
 public:
  using Error::Error;
};

class InfeasiblePlan : public Error {
 public:
  using Error::Error;
};

class DegenerateMask : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CalibrationDiverged : public Error {
 public:
  using Error::Error;
};

class UnknownMethod : public Error {
 public:
  using Error::Error;
};

class UnknownComponent : public Error {
 public:
  using Error::Error;
};

class RpcTimeout : public Error {
 public:
  using Error::Error;
};

class RemoteError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FingerprintMismatch : public Error {
 public:
  using Error::Error;
};

class IncompleteCheckpoint : public Error {
 public:
  using Error::Error;
};

}  // namespace yatt
