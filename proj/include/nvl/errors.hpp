#pragma once

#include <stdexcept>
#include <string>

namespace nvl {

enum class ErrorKind {
  NonSummableTail,
  OverlappingConfigurations,
  DistancesNotStrict,
  CoincidentParticles,
  NotRepulsiveEnough,
  SupportTooLarge,
  QuadratureNotConverged,
  SingularStart,
  DensityExceedsRhoMax,
  ForceBlowup,
  ChecksumMismatch,
  VersionUnsupported,
  InvalidArgument,
  ConfigError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace nvl
