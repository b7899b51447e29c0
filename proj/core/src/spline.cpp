#include "stcalib/spline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stcalib {

Eigen::Vector3d cumulative_basis(double u) {
  if (!(u >= 0.0 && u < 1.0)) {
    throw InvalidArgumentError("local spline parameter " + std::to_string(u) + " outside [0, 1)");
  }
  double u2 = u * u, u3 = u2 * u;
  return {(u3 - 3.0 * u2 + 3.0 * u + 5.0) / 6.0,
          (-2.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
          u3 / 6.0};
}

Eigen::Vector3d cumulative_basis_derivative(double u) {
  if (!(u >= 0.0 && u < 1.0)) {
    throw InvalidArgumentError("local spline parameter " + std::to_string(u) + " outside [0, 1)");
  }
  double u2 = u * u;
  return {(3.0 * u2 - 6.0 * u + 3.0) / 6.0,
          (-6.0 * u2 + 6.0 * u + 3.0) / 6.0,
          3.0 * u2 / 6.0};
}

namespace {

void check_spline_args(double dt, size_t n) {
  if (!(dt > 0.0)) {
    throw InvalidArgumentError("knot spacing must be positive");
  }
  if (n < 4) {
    throw InvalidArgumentError("a cubic spline needs at least 4 control points, got " +
                               std::to_string(n));
  }
}

// Knot interval index i with tau in [t_i, t_{i+1}) and local parameter u.
// Valid i runs over 1 .. N-3 so that control points i-1 .. i+2 exist. The
// validity test compares times, not indices: a query within rounding of a
// knot must not fail just because floor() picked the neighbouring interval.
int locate(double tau, double start, double dt, int n, double* u) {
  const double t_min = start + dt;
  const double t_max = start + (n - 2) * dt;
  if (!(tau >= t_min && tau < t_max)) {
    throw OutOfIntervalError(tau, t_min, t_max);
  }
  double s = (tau - start) / dt;
  int i = std::clamp(static_cast<int>(std::floor(s)), 1, n - 3);
  // Guard against floor/rounding putting u microscopically outside [0, 1).
  *u = std::clamp(s - i, 0.0, std::nextafter(1.0, 0.0));
  return i;
}

double span_parameter(double tau, double start, double dt, int n, int span) {
  if (span < 1 || span > n - 3) {
    throw InvalidArgumentError("spline span " + std::to_string(span) +
                               " outside the control window");
  }
  return std::clamp((tau - start) / dt - span, 0.0, std::nextafter(1.0, 0.0));
}

}  // namespace

PositionSpline::PositionSpline(double start_time, double knot_spacing,
                               std::vector<Eigen::Vector3d> control_points)
    : start_(start_time), dt_(knot_spacing), points_(std::move(control_points)) {
  check_spline_args(dt_, points_.size());
}

int PositionSpline::base_index(double tau) const {
  double u;
  return locate(tau, start_, dt_, size(), &u) - 1;
}

Eigen::Vector3d PositionSpline::position(double tau) const {
  double u;
  int b = locate(tau, start_, dt_, size(), &u) - 1;
  const Eigen::Vector3d l = cumulative_basis(u);
  Eigen::Vector3d p = points_[b];
  for (int j = 1; j <= 3; ++j) {
    p += l[j - 1] * (points_[b + j] - points_[b + j - 1]);
  }
  return p;
}

Eigen::Vector3d PositionSpline::velocity(double tau) const {
  double u;
  int b = locate(tau, start_, dt_, size(), &u) - 1;
  const Eigen::Vector3d dl = cumulative_basis_derivative(u);
  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  for (int j = 1; j <= 3; ++j) {
    v += dl[j - 1] * (points_[b + j] - points_[b + j - 1]);
  }
  return v / dt_;
}

namespace {

PositionSplineEval eval_position_at(const std::vector<Eigen::Vector3d>& points,
                                    double dt, int b, double u) {
  const Eigen::Vector3d l = cumulative_basis(u);
  const Eigen::Vector3d dl = cumulative_basis_derivative(u);
  PositionSplineEval out;
  out.base = b;
  out.weights = {1.0 - l[0], l[0] - l[1], l[1] - l[2], l[2]};
  out.value = Eigen::Vector3d::Zero();
  out.velocity = Eigen::Vector3d::Zero();
  for (int m = 0; m < 4; ++m) {
    out.value += out.weights[m] * points[b + m];
  }
  for (int j = 1; j <= 3; ++j) {
    out.velocity += dl[j - 1] * (points[b + j] - points[b + j - 1]);
  }
  out.velocity /= dt;
  return out;
}

}  // namespace

PositionSplineEval PositionSpline::evaluate(double tau) const {
  double u;
  int b = locate(tau, start_, dt_, size(), &u) - 1;
  return eval_position_at(points_, dt_, b, u);
}

PositionSplineEval PositionSpline::evaluate_in_span(int span, double tau) const {
  const double u = span_parameter(tau, start_, dt_, size(), span);
  return eval_position_at(points_, dt_, span - 1, u);
}

RotationSpline::RotationSpline(double start_time, double knot_spacing,
                               std::vector<Rotation> control_points)
    : start_(start_time), dt_(knot_spacing), points_(std::move(control_points)) {
  check_spline_args(dt_, points_.size());
}

int RotationSpline::base_index(double tau) const {
  double u;
  return locate(tau, start_, dt_, size(), &u) - 1;
}

Rotation RotationSpline::rotation(double tau) const {
  return evaluate(tau).value;
}

Eigen::Vector3d RotationSpline::angular_velocity(double tau) const {
  return evaluate(tau, false, true).angular_velocity;
}

namespace {

RotationSplineEval eval_rotation_at(const std::vector<Rotation>& points_, double dt_,
                                    int b, double u, bool with_jacobians,
                                    bool with_velocity) {
  const Eigen::Vector3d l = cumulative_basis(u);

  Eigen::Vector3d d[4], scaled[4];  // 1-based: d[j] = Log(q_{b+j-1}^-1 q_{b+j})
  Rotation a[4];                    // a[j] = Exp(l_j d_j)
  for (int j = 1; j <= 3; ++j) {
    d[j] = so3_log(points_[b + j - 1].inverse() * points_[b + j]);
    scaled[j] = l[j - 1] * d[j];
    a[j] = so3_exp(scaled[j]);
  }

  RotationSplineEval out;
  out.base = b;
  out.value = points_[b] * a[1] * a[2] * a[3];

  if (with_velocity) {
    const Eigen::Vector3d dl = cumulative_basis_derivative(u) / dt_;
    // Body-frame rate, accumulated right to left through the factor chain.
    Eigen::Vector3d w = dl[0] * d[1];
    w = a[2].inverse() * w + dl[1] * d[2];
    w = a[3].inverse() * w + dl[2] * d[3];
    out.angular_velocity = w;
  }

  if (with_jacobians) {
    const Eigen::Matrix3d a2t = a[2].inverse().matrix();
    const Eigen::Matrix3d a3t = a[3].inverse().matrix();
    const Eigen::Matrix3d a23t = a3t * a2t;
    const Eigen::Matrix3d a123t = a23t * a[1].inverse().matrix();

    // For each difference vector: right perturbation of the later control
    // point maps through Jr^-1(d), of the earlier one through -Jl^-1(d),
    // and the scaled exponential adds a factor l_j * Jr(l_j d_j).
    Eigen::Matrix3d to_later[4], to_earlier[4];
    for (int j = 1; j <= 3; ++j) {
      const Eigen::Matrix3d jr_scaled = l[j - 1] * so3_right_jacobian(scaled[j]);
      const Eigen::Matrix3d jr_inv = so3_right_jacobian_inverse(d[j]);
      to_later[j] = jr_scaled * jr_inv;
      to_earlier[j] = -jr_scaled * jr_inv.transpose();  // Jl^-1 = (Jr^-1)^T
    }

    out.knot_jacobians[0] = a123t + a23t * to_earlier[1];
    out.knot_jacobians[1] = a23t * to_later[1] + a3t * to_earlier[2];
    out.knot_jacobians[2] = a3t * to_later[2] + to_earlier[3];
    out.knot_jacobians[3] = to_later[3];
  }

  return out;
}

}  // namespace

RotationSplineEval RotationSpline::evaluate(double tau, bool with_jacobians,
                                            bool with_velocity) const {
  double u;
  int b = locate(tau, start_, dt_, size(), &u) - 1;
  return eval_rotation_at(points_, dt_, b, u, with_jacobians, with_velocity);
}

RotationSplineEval RotationSpline::evaluate_in_span(int span, double tau,
                                                    bool with_jacobians,
                                                    bool with_velocity) const {
  const double u = span_parameter(tau, start_, dt_, size(), span);
  return eval_rotation_at(points_, dt_, span - 1, u, with_jacobians, with_velocity);
}

TrajectorySegment::TrajectorySegment(RotationSpline rotation, PositionSpline position,
                                     double t_min, double t_max)
    : rot_(std::move(rotation)), pos_(std::move(position)), t_min_(t_min), t_max_(t_max) {
  if (!(t_min_ < t_max_)) {
    throw InvalidArgumentError("segment needs t_min < t_max");
  }
  if (t_min_ < rot_.t_min() || t_max_ > rot_.t_max() ||
      t_min_ < pos_.t_min() || t_max_ > pos_.t_max()) {
    throw InvalidArgumentError("segment interval not covered by its splines");
  }
}

Pose TrajectorySegment::pose(double tau) const {
  if (!contains(tau)) {
    throw OutOfIntervalError(tau, t_min_, t_max_);
  }
  return Pose(rot_.rotation(tau), pos_.position(tau));
}

PiecewiseTrajectory::PiecewiseTrajectory(std::vector<TrajectorySegment> segments)
    : segments_(std::move(segments)) {
  std::sort(segments_.begin(), segments_.end(),
            [](const TrajectorySegment& a, const TrajectorySegment& b) {
              return a.t_min() < b.t_min();
            });
  for (size_t k = 1; k < segments_.size(); ++k) {
    if (segments_[k].t_min() < segments_[k - 1].t_max()) {
      throw InvalidArgumentError("trajectory segments overlap");
    }
  }
}

int PiecewiseTrajectory::segment_for(double tau) const {
  for (size_t k = 0; k < segments_.size(); ++k) {
    if (segments_[k].contains(tau)) {
      return static_cast<int>(k);
    }
  }
  return -1;
}

std::optional<Pose> PiecewiseTrajectory::try_pose(double tau) const {
  int k = segment_for(tau);
  if (k < 0) {
    return std::nullopt;
  }
  return segments_[static_cast<size_t>(k)].pose(tau);
}

Pose PiecewiseTrajectory::pose(double tau) const {
  int k = segment_for(tau);
  if (k >= 0) {
    return segments_[static_cast<size_t>(k)].pose(tau);
  }
  if (segments_.empty()) {
    throw OutOfIntervalError(tau, 0.0, 0.0);
  }
  // Report the nearest segment's bounds so the caller can see the gap.
  const TrajectorySegment* nearest = &segments_.front();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& seg : segments_) {
    double dist = std::max({seg.t_min() - tau, tau - seg.t_max(), 0.0});
    if (dist < best) {
      best = dist;
      nearest = &seg;
    }
  }
  throw OutOfIntervalError(tau, nearest->t_min(), nearest->t_max());
}

}  // namespace stcalib
