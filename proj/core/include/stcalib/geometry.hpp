#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "stcalib/errors.hpp"

namespace stcalib {

// Below this angle (rad) the exp/log maps switch to their Taylor branches.
inline constexpr double kSmallAngle = 1e-8;

// Rotation stored as a unit Hamilton quaternion. Composition renormalizes, so
// chains of thousands of multiplications stay on the unit sphere.
class Rotation {
 public:
  Rotation() : q_(Eigen::Quaterniond::Identity()) {}

  static Rotation identity() { return Rotation(); }

  // Accepts a not-quite-unit quaternion and normalizes. Throws on near-zero norm.
  static Rotation from_quaternion(double w, double x, double y, double z);
  static Rotation from_quaternion(const Eigen::Quaterniond& q);
  static Rotation from_matrix(const Eigen::Matrix3d& m);

  const Eigen::Quaterniond& quaternion() const { return q_; }
  Eigen::Matrix3d matrix() const { return q_.toRotationMatrix(); }

  Rotation operator*(const Rotation& rhs) const {
    Rotation out;
    out.q_ = q_ * rhs.q_;
    out.q_.normalize();
    return out;
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& v) const { return q_ * v; }

  Rotation inverse() const {
    Rotation out;
    out.q_ = q_.conjugate();
    return out;
  }

  // Geodesic distance to another rotation, in [0, pi].
  double angle_to(const Rotation& other) const;

  bool is_approx(const Rotation& other, double tol = 1e-12) const {
    return angle_to(other) <= tol;
  }

 private:
  Eigen::Quaterniond q_;
};

Eigen::Matrix3d so3_hat(const Eigen::Vector3d& v);

// Exponential map; second-order Taylor branch below kSmallAngle.
Rotation so3_exp(const Eigen::Vector3d& omega);

// Principal logarithm, norm <= pi. At angle pi the axis sign is fixed by
// making its largest-magnitude component nonnegative.
Eigen::Vector3d so3_log(const Rotation& r);

// Right Jacobian of SO(3) and its inverse: Exp(phi + d) = Exp(phi) Exp(Jr(phi) d).
Eigen::Matrix3d so3_right_jacobian(const Eigen::Vector3d& phi);
Eigen::Matrix3d so3_right_jacobian_inverse(const Eigen::Vector3d& phi);

// Intrinsic X-Y-Z Euler factorization R = Rx(roll) * Ry(pitch) * Rz(yaw),
// returned as (roll, pitch, yaw) in radians. Display convention only; every
// comparison in this library uses the geodesic angle.
Eigen::Vector3d euler_xyz(const Rotation& r);
Rotation rotation_from_euler_xyz(const Eigen::Vector3d& rpy);

// Rigid transform. The frame semantics are the caller's: a pose "T_a_b" maps
// coordinates in frame b to frame a via p_a = R * p_b + t.
struct Pose {
  Rotation rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Pose() = default;
  Pose(const Rotation& r, const Eigen::Vector3d& t) : rotation(r), translation(t) {}

  Pose operator*(const Pose& rhs) const {
    return Pose(rotation * rhs.rotation, rotation * rhs.translation + translation);
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  Pose inverse() const {
    Rotation rinv = rotation.inverse();
    return Pose(rinv, -(rinv * translation));
  }

  Eigen::Matrix4d matrix() const;
};

// Radial-tangential distortion applied to normalized image coordinates.
struct Distortion {
  double k1 = 0.0, k2 = 0.0, p1 = 0.0, p2 = 0.0;
};

// Pinhole camera with radial-tangential distortion. Sensor size is optional;
// when present the principal point must lie inside it.
struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  Distortion distortion;
  int width = 0, height = 0;  // 0 means undeclared

  void validate() const;
  bool in_sensor(const Eigen::Vector2d& px) const {
    return width <= 0 || height <= 0 ||
           (px.x() >= 0.0 && px.x() < width && px.y() >= 0.0 && px.y() < height);
  }
};

// Distorts a normalized image point; returns the homogeneous (x', y', 1).
Eigen::Vector3d distort(const Eigen::Vector2d& normalized, const Distortion& d);

// 2x2 Jacobian of the distorted coordinates w.r.t. the normalized ones.
Eigen::Matrix2d distort_jacobian(const Eigen::Vector2d& normalized, const Distortion& d);

// Projects a camera-frame point to pixels. Throws BehindCameraError when
// the depth is <= 1e-6.
Eigen::Vector2d project(const Eigen::Vector3d& p_cam, const CameraIntrinsics& intr);

// Same, also returning the 2x3 Jacobian w.r.t. the camera-frame point.
Eigen::Vector2d project(const Eigen::Vector3d& p_cam, const CameraIntrinsics& intr,
                        Eigen::Matrix<double, 2, 3>* jacobian);

}  // namespace stcalib
