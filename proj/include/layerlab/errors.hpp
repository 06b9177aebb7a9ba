#pragma once

#include <stdexcept>
#include <string>

namespace layerlab {

// Error taxonomy; the CLI maps these onto exit codes.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct PlanError : std::runtime_error {
  explicit PlanError(const std::string& msg) : std::runtime_error(msg) {}
};

struct SplitError : std::runtime_error {
  explicit SplitError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FitError : std::runtime_error {
  explicit FitError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MetricError : std::runtime_error {
  explicit MetricError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a training run produces a non-finite loss.
struct TrainError : std::runtime_error {
  TrainError(const std::string& msg, long step, double grad_norm)
      : std::runtime_error(msg), step(step), grad_norm(grad_norm) {}
  long step;
  double grad_norm;
};

}  // namespace layerlab
