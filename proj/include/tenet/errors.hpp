#pragma once

#include <stdexcept>
#include <string>

namespace tenet {

// Base of every error raised by the library. `kind()` is a stable
// machine-readable tag used in CLI error records.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

#define TENET_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                          \
  public:                                                              \
    explicit Name(const std::string& what) : Error(tag, what) {}      \
  };

TENET_DEFINE_ERROR(InvalidBoxError, "invalid_box")
TENET_DEFINE_ERROR(DegenerateBoxError, "degenerate_box")
TENET_DEFINE_ERROR(AlignmentError, "alignment")
TENET_DEFINE_ERROR(ParseError, "parse")
TENET_DEFINE_ERROR(DimensionError, "dimension")
TENET_DEFINE_ERROR(LengthError, "length")
TENET_DEFINE_ERROR(NumericError, "numeric")
TENET_DEFINE_ERROR(OrderingError, "ordering")
TENET_DEFINE_ERROR(MissingAnchorError, "missing_anchor")
TENET_DEFINE_ERROR(EmptySelectionError, "empty_selection")
TENET_DEFINE_ERROR(ConfigError, "config")
TENET_DEFINE_ERROR(EmptyBatchError, "empty_batch")
TENET_DEFINE_ERROR(EmptyVideoError, "empty_video")
TENET_DEFINE_ERROR(DivergenceError, "divergence")
TENET_DEFINE_ERROR(ShapeError, "shape")
TENET_DEFINE_ERROR(CoverageError, "coverage")
TENET_DEFINE_ERROR(ValidationError, "validation")
TENET_DEFINE_ERROR(UsageError, "usage")
TENET_DEFINE_ERROR(RetryableError, "retryable")
TENET_DEFINE_ERROR(ProtocolError, "protocol")

#undef TENET_DEFINE_ERROR

class ServiceError : public Error {
public:
  ServiceError(int status, const std::string& what)
      : Error("service", what), status_(status) {}
  int status() const noexcept { return status_; }

private:
  int status_;
};

}  // namespace tenet
