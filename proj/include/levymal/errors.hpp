#pragma once

#include <stdexcept>
#include <string>

namespace levymal {

// Every failure raised by the library derives from Error so callers can catch
// the whole family; the subclasses name the contract that was violated.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define LEVYMAL_ERROR(Name)                                \
  class Name : public Error {                              \
   public:                                                 \
    explicit Name(const std::string& what) : Error(what) {} \
  };

LEVYMAL_ERROR(ParameterError)
LEVYMAL_ERROR(SamplerError)
LEVYMAL_ERROR(RangeError)
LEVYMAL_ERROR(GridError)
LEVYMAL_ERROR(DivergenceError)
LEVYMAL_ERROR(MarkError)
LEVYMAL_ERROR(KernelError)
LEVYMAL_ERROR(ShapeError)
LEVYMAL_ERROR(ContractionError)
LEVYMAL_ERROR(BasisError)
LEVYMAL_ERROR(DirectionError)
LEVYMAL_ERROR(CapabilityError)
LEVYMAL_ERROR(CoverageError)
LEVYMAL_ERROR(SizeError)
LEVYMAL_ERROR(ConfigError)
LEVYMAL_ERROR(IoError)

#undef LEVYMAL_ERROR

}  // namespace levymal
