#pragma once

#include <stdexcept>
#include <string>

namespace stcalib {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A precondition on an argument was violated.
class InvalidArgumentError : public Error {
 public:
  using Error::Error;
};

// A spline or trajectory was queried outside its valid interval.
// Carries the interval so callers can report what would have been legal.
class OutOfIntervalError : public Error {
 public:
  OutOfIntervalError(double query, double t_min, double t_max)
      : Error("query time " + std::to_string(query) + " outside valid interval [" +
              std::to_string(t_min) + ", " + std::to_string(t_max) + ")"),
        query_(query),
        t_min_(t_min),
        t_max_(t_max) {}
  double query() const { return query_; }
  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }

 private:
  double query_, t_min_, t_max_;
};

// A point sat behind (or numerically on) the camera plane during projection.
class BehindCameraError : public Error {
 public:
  using Error::Error;
};

// A grid pattern is unusable for pose estimation (too few or collinear points).
class DegeneratePatternError : public Error {
 public:
  using Error::Error;
};

// Planar pose estimation did not converge to a usable pose.
class PnpFailureError : public Error {
 public:
  using Error::Error;
};

// Not enough data to run a stage (empty tracks, too few pose pairs, ...).
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// The normal equations stayed rank-deficient even at maximum damping.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

// A residual evaluated to a non-finite value; carries the offending block's tag.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& block, const std::string& what)
      : Error("residual '" + block + "': " + what), block_(block) {}
  const std::string& block() const { return block_; }

 private:
  std::string block_;
};

// A simulation scenario cannot produce usable data (e.g. board never visible).
class ScenarioError : public Error {
 public:
  using Error::Error;
};

// A text input (detection file, config, scenario) failed to parse or validate.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Wraps a failure with the calibration stage it happened in.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace stcalib
