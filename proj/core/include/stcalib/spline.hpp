#pragma once

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "stcalib/geometry.hpp"

namespace stcalib {

// Cumulative cubic B-spline blending weights (l1, l2, l3) at local parameter
// u in [0, 1). l1 >= l2 >= l3 >= 0 and l1(0) = 5/6, l2(0) = 1/6, l3(0) = 0.
Eigen::Vector3d cumulative_basis(double u);

// d/du of the cumulative weights.
Eigen::Vector3d cumulative_basis_derivative(double u);

// Uniform cubic splines over control points placed at
//   t_j = start_time + j * knot_spacing,           j = 0 .. N-1.
// A query at tau in [t_i, t_{i+1}) blends control points i-1 .. i+2, so the
// valid interval is [start_time + dt, start_time + (N-2) * dt), half-open.

struct PositionSplineEval {
  Eigen::Vector3d value;
  Eigen::Vector3d velocity;
  int base = 0;               // index of the first blended control point (i-1)
  Eigen::Vector4d weights;    // d(value)/d(cp_{base+m}) = weights[m] * I
};

class PositionSpline {
 public:
  PositionSpline() = default;
  PositionSpline(double start_time, double knot_spacing, std::vector<Eigen::Vector3d> control_points);

  double start_time() const { return start_; }
  double knot_spacing() const { return dt_; }
  int size() const { return static_cast<int>(points_.size()); }
  const std::vector<Eigen::Vector3d>& control_points() const { return points_; }
  Eigen::Vector3d& control_point(int j) { return points_[static_cast<size_t>(j)]; }

  double t_min() const { return start_ + dt_; }
  double t_max() const { return start_ + (size() - 2) * dt_; }

  // First blended control point index for tau; throws OutOfIntervalError.
  int base_index(double tau) const;

  Eigen::Vector3d position(double tau) const;
  Eigen::Vector3d velocity(double tau) const;
  PositionSplineEval evaluate(double tau) const;

  // Evaluation pinned to knot interval [t_span, t_span+1): the local
  // parameter is clamped to [0, 1) instead of re-deriving the interval from
  // tau, so callers that already know the interval (windowed residuals)
  // stay immune to rounding at the knots. span runs 1 .. size()-3.
  PositionSplineEval evaluate_in_span(int span, double tau) const;

 private:
  double start_ = 0.0;
  double dt_ = 0.0;
  std::vector<Eigen::Vector3d> points_;
};

struct RotationSplineEval {
  Rotation value;
  Eigen::Vector3d angular_velocity;  // body frame, filled when requested
  int base = 0;
  // Right-tangent sensitivities: perturbing control point base+m by eps
  // (right-multiplied) perturbs the value by knot_jacobians[m] * eps.
  std::array<Eigen::Matrix3d, 4> knot_jacobians;
};

class RotationSpline {
 public:
  RotationSpline() = default;
  RotationSpline(double start_time, double knot_spacing, std::vector<Rotation> control_points);

  double start_time() const { return start_; }
  double knot_spacing() const { return dt_; }
  int size() const { return static_cast<int>(points_.size()); }
  const std::vector<Rotation>& control_points() const { return points_; }
  Rotation& control_point(int j) { return points_[static_cast<size_t>(j)]; }

  double t_min() const { return start_ + dt_; }
  double t_max() const { return start_ + (size() - 2) * dt_; }

  int base_index(double tau) const;

  Rotation rotation(double tau) const;
  Eigen::Vector3d angular_velocity(double tau) const;
  RotationSplineEval evaluate(double tau, bool with_jacobians = false,
                              bool with_velocity = false) const;

  // Same contract as PositionSpline::evaluate_in_span.
  RotationSplineEval evaluate_in_span(int span, double tau, bool with_jacobians = false,
                                      bool with_velocity = false) const;

 private:
  double start_ = 0.0;
  double dt_ = 0.0;
  std::vector<Rotation> points_;
};

// One continuously tracked stretch of trajectory. The pose maps camera
// coordinates to world coordinates. [t_min, t_max) must sit inside both
// splines' valid intervals.
class TrajectorySegment {
 public:
  TrajectorySegment() = default;
  TrajectorySegment(RotationSpline rotation, PositionSpline position, double t_min, double t_max);

  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }
  bool contains(double tau) const { return tau >= t_min_ && tau < t_max_; }

  const RotationSpline& rotation_spline() const { return rot_; }
  const PositionSpline& position_spline() const { return pos_; }
  RotationSpline& rotation_spline() { return rot_; }
  PositionSpline& position_spline() { return pos_; }

  Pose pose(double tau) const;

 private:
  RotationSpline rot_;
  PositionSpline pos_;
  double t_min_ = 0.0;
  double t_max_ = 0.0;
};

// Time-sorted, pairwise-disjoint segments.
class PiecewiseTrajectory {
 public:
  PiecewiseTrajectory() = default;
  explicit PiecewiseTrajectory(std::vector<TrajectorySegment> segments);

  const std::vector<TrajectorySegment>& segments() const { return segments_; }
  std::vector<TrajectorySegment>& segments() { return segments_; }
  bool empty() const { return segments_.empty(); }

  // Index of the segment containing tau, or -1.
  int segment_for(double tau) const;

  std::optional<Pose> try_pose(double tau) const;

  // Throws OutOfIntervalError carrying the nearest segment's bounds.
  Pose pose(double tau) const;

 private:
  std::vector<TrajectorySegment> segments_;
};

}  // namespace stcalib
