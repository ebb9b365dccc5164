#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pseqseg {

using Scalar = double;
using Index = Eigen::Index;

using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Arr = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using ArrU8 = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;
using Vec4 = Eigen::Matrix<Scalar, 4, 1>;

// Error taxonomy shared across modules. Callers that can recover catch the
// specific type; everything derives from std::runtime_error for reporting.
struct InvalidInputError : std::runtime_error {
  explicit InvalidInputError(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyMaskError : std::runtime_error {
  explicit EmptyMaskError(const std::string& what) : std::runtime_error(what) {}
};

struct CorruptAnnotationError : std::runtime_error {
  explicit CorruptAnnotationError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pseqseg
