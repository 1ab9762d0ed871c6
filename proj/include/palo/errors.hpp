#pragma once

#include <stdexcept>
#include <string>

namespace palo {

// Base for every recoverable failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PALO_DEFINE_ERROR(Name)         \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

PALO_DEFINE_ERROR(ShapeMismatch);
PALO_DEFINE_ERROR(LengthMismatch);
PALO_DEFINE_ERROR(NonFiniteState);
PALO_DEFINE_ERROR(NonFiniteLoss);
PALO_DEFINE_ERROR(FootOutsideTerrain);
PALO_DEFINE_ERROR(OutOfBounds);
PALO_DEFINE_ERROR(InvalidThresholds);
PALO_DEFINE_ERROR(PolicyTooWeak);
PALO_DEFINE_ERROR(ConfigError);
PALO_DEFINE_ERROR(CheckpointMismatch);
PALO_DEFINE_ERROR(FormatError);
PALO_DEFINE_ERROR(PortInUse);

#undef PALO_DEFINE_ERROR

}  // namespace palo
