#include "stcalib/geometry.hpp"

#include <cmath>

namespace stcalib {

Rotation Rotation::from_quaternion(double w, double x, double y, double z) {
  return from_quaternion(Eigen::Quaterniond(w, x, y, z));
}

Rotation Rotation::from_quaternion(const Eigen::Quaterniond& q) {
  double n = q.norm();
  if (!(n > 1e-12)) {
    throw InvalidArgumentError("quaternion norm too small to normalize");
  }
  Rotation out;
  out.q_ = q;
  out.q_.coeffs() /= n;
  return out;
}

Rotation Rotation::from_matrix(const Eigen::Matrix3d& m) {
  return from_quaternion(Eigen::Quaterniond(m));
}

double Rotation::angle_to(const Rotation& other) const {
  return so3_log(inverse() * other).norm();
}

Eigen::Matrix3d so3_hat(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Rotation so3_exp(const Eigen::Vector3d& omega) {
  double theta = omega.norm();
  double half = 0.5 * theta;
  double w, s;  // quaternion scalar part and vector scale sin(theta/2)/theta
  if (theta < kSmallAngle) {
    // cos(t/2) ~ 1 - t^2/8, sin(t/2)/t ~ 1/2 - t^2/48
    w = 1.0 - 0.125 * theta * theta;
    s = 0.5 - theta * theta / 48.0;
  } else {
    w = std::cos(half);
    s = std::sin(half) / theta;
  }
  return Rotation::from_quaternion(Eigen::Quaterniond(w, s * omega.x(), s * omega.y(), s * omega.z()));
}

Eigen::Vector3d so3_log(const Rotation& r) {
  Eigen::Quaterniond q = r.quaternion();
  if (q.w() < 0.0) {
    q.coeffs() = -q.coeffs();
  }
  const Eigen::Vector3d v(q.x(), q.y(), q.z());
  double vn = v.norm();
  if (vn < kSmallAngle) {
    // theta ~ 2*vn; axis*theta ~ 2v * (1 + vn^2/(6 w^2)) near identity
    return v * (2.0 / q.w()) * (1.0 - vn * vn / (3.0 * q.w() * q.w()));
  }
  if (q.w() < 1e-9) {
    // Within ~2e-9 rad of a half turn the quaternion sign no longer picks the
    // axis direction, so fix it: largest-magnitude axis component nonnegative.
    Eigen::Vector3d axis = v / vn;
    int dominant = 0;
    axis.cwiseAbs().maxCoeff(&dominant);
    if (axis[dominant] < 0.0) axis = -axis;
    double theta = 2.0 * std::atan2(vn, std::abs(q.w()));
    return axis * theta;
  }
  double theta = 2.0 * std::atan2(vn, q.w());
  return v * (theta / vn);
}

Eigen::Matrix3d so3_right_jacobian(const Eigen::Vector3d& phi) {
  double theta = phi.norm();
  const Eigen::Matrix3d hat = so3_hat(phi);
  if (theta < kSmallAngle) {
    return Eigen::Matrix3d::Identity() - 0.5 * hat + hat * hat / 6.0;
  }
  double t2 = theta * theta;
  double a = (1.0 - std::cos(theta)) / t2;
  double b = (theta - std::sin(theta)) / (t2 * theta);
  return Eigen::Matrix3d::Identity() - a * hat + b * hat * hat;
}

Eigen::Matrix3d so3_right_jacobian_inverse(const Eigen::Vector3d& phi) {
  double theta = phi.norm();
  const Eigen::Matrix3d hat = so3_hat(phi);
  if (theta < kSmallAngle) {
    return Eigen::Matrix3d::Identity() + 0.5 * hat + hat * hat / 12.0;
  }
  double half = 0.5 * theta;
  double cot_term = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  return Eigen::Matrix3d::Identity() + 0.5 * hat + cot_term * hat * hat;
}

Eigen::Vector3d euler_xyz(const Rotation& r) {
  const Eigen::Matrix3d m = r.matrix();
  // R = Rx(a) Ry(b) Rz(c) puts sin(b) at (0,2).
  double sb = std::clamp(m(0, 2), -1.0, 1.0);
  double pitch = std::asin(sb);
  double roll, yaw;
  if (std::abs(sb) < 1.0 - 1e-12) {
    roll = std::atan2(-m(1, 2), m(2, 2));
    yaw = std::atan2(-m(0, 1), m(0, 0));
  } else {
    // Gimbal lock: roll and yaw act about the same axis; put everything in roll.
    roll = std::atan2(m(2, 1), m(1, 1));
    yaw = 0.0;
  }
  return {roll, pitch, yaw};
}

Rotation rotation_from_euler_xyz(const Eigen::Vector3d& rpy) {
  return so3_exp(Eigen::Vector3d::UnitX() * rpy.x()) *
         so3_exp(Eigen::Vector3d::UnitY() * rpy.y()) *
         so3_exp(Eigen::Vector3d::UnitZ() * rpy.z());
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation.matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

void CameraIntrinsics::validate() const {
  if (!std::isfinite(fx) || !std::isfinite(fy) || !(fx > 0.0) || !(fy > 0.0)) {
    throw InvalidArgumentError("focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw InvalidArgumentError("sensor size must be positive");
  }
  if (!(cx >= 0.0 && cx <= width) || !(cy >= 0.0 && cy <= height)) {
    throw InvalidArgumentError("principal point outside declared sensor");
  }
  if (!std::isfinite(distortion.k1) || !std::isfinite(distortion.k2) ||
      !std::isfinite(distortion.p1) || !std::isfinite(distortion.p2)) {
    throw InvalidArgumentError("distortion coefficients must be finite");
  }
}

Eigen::Vector3d distort(const Eigen::Vector2d& n, const Distortion& d) {
  double x = n.x(), y = n.y();
  double r2 = x * x + y * y;
  double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
  double xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
  double yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
  return {xd, yd, 1.0};
}

Eigen::Matrix2d distort_jacobian(const Eigen::Vector2d& n, const Distortion& d) {
  double x = n.x(), y = n.y();
  double r2 = x * x + y * y;
  double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
  double dradial = d.k1 + 2.0 * d.k2 * r2;  // d(radial)/d(r2)
  Eigen::Matrix2d j;
  j(0, 0) = radial + 2.0 * x * x * dradial + 2.0 * d.p1 * y + 6.0 * d.p2 * x;
  j(0, 1) = 2.0 * x * y * dradial + 2.0 * d.p1 * x + 2.0 * d.p2 * y;
  j(1, 0) = j(0, 1);
  j(1, 1) = radial + 2.0 * y * y * dradial + 6.0 * d.p1 * y + 2.0 * d.p2 * x;
  return j;
}

Eigen::Vector2d project(const Eigen::Vector3d& p_cam, const CameraIntrinsics& intr) {
  return project(p_cam, intr, nullptr);
}

Eigen::Vector2d project(const Eigen::Vector3d& p_cam, const CameraIntrinsics& intr,
                        Eigen::Matrix<double, 2, 3>* jacobian) {
  double z = p_cam.z();
  if (z <= 1e-6) {
    throw BehindCameraError("point depth " + std::to_string(z) + " <= 1e-6");
  }
  const Eigen::Vector2d n(p_cam.x() / z, p_cam.y() / z);
  const Eigen::Vector3d dn = distort(n, intr.distortion);
  Eigen::Vector2d px(intr.fx * dn.x() + intr.cx, intr.fy * dn.y() + intr.cy);
  if (jacobian != nullptr) {
    Eigen::Matrix<double, 2, 3> jn;  // normalized coords w.r.t. camera point
    jn << 1.0 / z, 0.0, -p_cam.x() / (z * z),
          0.0, 1.0 / z, -p_cam.y() / (z * z);
    Eigen::Matrix2d jd = distort_jacobian(n, intr.distortion);
    jd.row(0) *= intr.fx;
    jd.row(1) *= intr.fy;
    *jacobian = jd * jn;
  }
  return px;
}

}  // namespace stcalib
