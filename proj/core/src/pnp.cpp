#include "stcalib/pnp.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "stcalib/errors.hpp"
#include "stcalib/nlls.hpp"

namespace stcalib {

Eigen::Vector2d undistort_normalized(const Eigen::Vector2d& distorted, const Distortion& d) {
  Eigen::Vector2d x = distorted;
  for (int it = 0; it < 20; ++it) {
    double r2 = x.squaredNorm();
    double radial = 1.0 + d.k1 * r2 + d.k2 * r2 * r2;
    Eigen::Vector2d tangential(
        2.0 * d.p1 * x.x() * x.y() + d.p2 * (r2 + 2.0 * x.x() * x.x()),
        d.p1 * (r2 + 2.0 * x.y() * x.y()) + 2.0 * d.p2 * x.x() * x.y());
    x = (distorted - tangential) / radial;
  }
  return x;
}

namespace {

// Direct linear transform with similarity normalization of both point sets.
Eigen::Matrix3d dlt_homography(const std::vector<Eigen::Vector2d>& src,
                               const std::vector<Eigen::Vector2d>& dst) {
  auto similarity = [](const std::vector<Eigen::Vector2d>& pts) {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    double spread = 0.0;
    for (const auto& p : pts) spread += (p - mean).norm();
    double s = spread > 0.0 ? std::sqrt(2.0) * static_cast<double>(pts.size()) / spread : 1.0;
    Eigen::Matrix3d t;
    t << s, 0.0, -s * mean.x(), 0.0, s, -s * mean.y(), 0.0, 0.0, 1.0;
    return t;
  };
  Eigen::Matrix3d t_src = similarity(src);
  Eigen::Matrix3d t_dst = similarity(dst);

  const int n = static_cast<int>(src.size());
  Eigen::MatrixXd a(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    Eigen::Vector3d sp = t_src * src[static_cast<size_t>(i)].homogeneous();
    Eigen::Vector3d dp = t_dst * dst[static_cast<size_t>(i)].homogeneous();
    a.row(2 * i) << -sp.x(), -sp.y(), -1.0, 0.0, 0.0, 0.0, dp.x() * sp.x(), dp.x() * sp.y(),
        dp.x();
    a.row(2 * i + 1) << 0.0, 0.0, 0.0, -sp.x(), -sp.y(), -1.0, dp.y() * sp.x(), dp.y() * sp.y(),
        dp.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  Eigen::Matrix<double, 9, 1> h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  Eigen::Matrix3d out = t_dst.inverse() * hn * t_src;
  return out / out.norm();
}

// World-to-camera pose from a board-plane homography in normalized
// coordinates; the scale sign is fixed by putting the board centroid in
// front of the camera.
Pose pose_from_homography(const Eigen::Matrix3d& h, const Eigen::Vector2d& board_centroid) {
  double scale = 2.0 / (h.col(0).norm() + h.col(1).norm());
  Eigen::Vector3d centroid_ray = h * board_centroid.homogeneous();
  if (scale * centroid_ray.z() < 0.0) scale = -scale;
  Eigen::Vector3d r1 = scale * h.col(0);
  Eigen::Vector3d r2 = scale * h.col(1);
  Eigen::Matrix3d rough;
  rough.col(0) = r1;
  rough.col(1) = r2;
  rough.col(2) = r1.cross(r2);
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rough, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Eigen::Matrix3d r = u * Eigen::Vector3d(1.0, 1.0, (u * v.transpose()).determinant())
                              .asDiagonal() * v.transpose();
  return Pose(Rotation::from_matrix(r), scale * h.col(2));
}

class PoseReprojection final : public nlls::ResidualFunction {
 public:
  PoseReprojection(std::vector<Eigen::Vector3d> board, std::vector<Eigen::Vector2d> observed,
                   const CameraIntrinsics& intr)
      : board_(std::move(board)), observed_(std::move(observed)), intr_(intr) {}

  int dimension() const override { return 2 * static_cast<int>(board_.size()); }

  void evaluate(const nlls::BlockValues& values,
                Eigen::Ref<Eigen::VectorXd> residual) const override {
    Rotation rot = values.rotation(0);
    Eigen::Vector3d t = values.vec3(1);
    for (size_t i = 0; i < board_.size(); ++i) {
      residual.segment<2>(2 * static_cast<Eigen::Index>(i)) =
          project(rot * board_[i] + t, intr_) - observed_[i];
    }
  }

  bool evaluate_with_jacobians(const nlls::BlockValues& values,
                               Eigen::Ref<Eigen::VectorXd> residual,
                               std::vector<Eigen::MatrixXd>& jacobians) const override {
    Rotation rot = values.rotation(0);
    Eigen::Matrix3d rmat = rot.matrix();
    Eigen::Vector3d t = values.vec3(1);
    for (size_t i = 0; i < board_.size(); ++i) {
      Eigen::Matrix<double, 2, 3> jp;
      Eigen::Index row = 2 * static_cast<Eigen::Index>(i);
      residual.segment<2>(row) = project(rot * board_[i] + t, intr_, &jp) - observed_[i];
      jacobians[0].middleRows<2>(row) = jp * (-rmat * so3_hat(board_[i]));
      jacobians[1].middleRows<2>(row) = jp;
    }
    return true;
  }

 private:
  std::vector<Eigen::Vector3d> board_;
  std::vector<Eigen::Vector2d> observed_;
  CameraIntrinsics intr_;
};

}  // namespace

PnpResult solve_pnp(const GridPattern& pattern, const CameraIntrinsics& intr) {
  intr.validate();
  const size_t n = pattern.points.size();
  if (n < 4) {
    throw DegeneratePatternError("pose recovery needs at least 4 points");
  }

  std::vector<Eigen::Vector2d> board_xy, normalized, observed;
  std::vector<Eigen::Vector3d> board;
  board_xy.reserve(n);
  normalized.reserve(n);
  observed.reserve(n);
  board.reserve(n);
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pattern.points) {
    board_xy.push_back(p.board_point.head<2>());
    board.push_back(p.board_point);
    observed.push_back(p.image_point);
    normalized.push_back(undistort_normalized(
        {(p.image_point.x() - intr.cx) / intr.fx, (p.image_point.y() - intr.cy) / intr.fy},
        intr.distortion));
    centroid += p.board_point.head<2>();
  }
  centroid /= static_cast<double>(n);

  // Collinear board points leave the plane pose unobservable.
  Eigen::MatrixXd centered(2, static_cast<Eigen::Index>(n));
  for (size_t i = 0; i < n; ++i) {
    centered.col(static_cast<Eigen::Index>(i)) = board_xy[i] - centroid;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> board_svd(centered);
  if (board_svd.singularValues()[0] <= 0.0 ||
      board_svd.singularValues()[1] / board_svd.singularValues()[0] < 1e-6) {
    throw DegeneratePatternError("board points are collinear");
  }

  Pose world_to_cam = pose_from_homography(dlt_homography(board_xy, normalized), centroid);

  nlls::Problem problem;
  int rot_block = problem.add_rotation_block("rotation", world_to_cam.rotation);
  int t_block = problem.add_block("translation", world_to_cam.translation);
  problem.add_residual("reprojection", {rot_block, t_block},
                       std::make_shared<PoseReprojection>(board, observed, intr), {});

  nlls::SolveOptions options;
  options.max_iterations = 50;
  nlls::SolveReport report;
  try {
    report = nlls::solve(problem, options);
  } catch (const Error& e) {
    throw PnpFailureError(std::string("pose refinement failed: ") + e.what());
  }

  double rms = std::sqrt(report.final_cost / static_cast<double>(n));
  if (!std::isfinite(rms) || rms > 5.0) {
    throw PnpFailureError("refined pose has reprojection RMS above 5 px");
  }
  return {Pose(problem.rotation_value(rot_block), problem.value(t_block)).inverse(), rms};
}

}  // namespace stcalib
