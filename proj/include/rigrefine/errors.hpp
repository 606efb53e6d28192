#pragma once

#include <stdexcept>
#include <string>

namespace rigrefine {

// Base for every library error. Each condition gets its own type so callers
// (and tests) can match on the exact failure.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AngleOutOfRangeError : Error { using Error::Error; };
struct TimeOutOfRangeError : Error { using Error::Error; };
struct UnknownSensorError : Error { using Error::Error; };
struct EmptyListError : Error { using Error::Error; };
struct ShapeMismatchError : Error { using Error::Error; };
struct MismatchedForwardError : Error { using Error::Error; };
struct EmptyMeshError : Error { using Error::Error; };
struct MissingIntrinsicsError : Error { using Error::Error; };
struct NotGroundTruthError : Error { using Error::Error; };
struct NoGroundTruthError : Error { using Error::Error; };
struct RigMismatchError : Error { using Error::Error; };
struct DimensionMismatchError : Error { using Error::Error; };
struct NoLidarError : Error { using Error::Error; };
struct NonFiniteLossError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

}  // namespace rigrefine
