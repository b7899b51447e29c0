#include "stcalib/initialization.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "stcalib/errors.hpp"

namespace stcalib {

std::vector<std::vector<TimedPose>> segment_poses(const std::vector<TimedPose>& poses,
                                                  double max_gap, int min_run_length) {
  if (!(max_gap > 0.0)) {
    throw InvalidArgumentError("segmentation gap threshold must be positive");
  }
  if (min_run_length < 0) {
    throw InvalidArgumentError("minimum run length must be nonnegative");
  }
  std::vector<std::vector<TimedPose>> runs;
  std::vector<TimedPose> current;
  for (const auto& p : poses) {
    if (!current.empty()) {
      double gap = p.timestamp - current.back().timestamp;
      if (gap <= 0.0) {
        throw InvalidArgumentError("poses must have strictly increasing timestamps");
      }
      if (gap >= max_gap) {
        if (static_cast<int>(current.size()) > min_run_length) runs.push_back(std::move(current));
        current.clear();
      }
    }
    current.push_back(p);
  }
  if (static_cast<int>(current.size()) > min_run_length) runs.push_back(std::move(current));
  return runs;
}

namespace {

// 6-dim pose residual of one timed pose against the spline window that
// contains it. Blocks: rotation control points 0..3, then position control
// points 0..3, all belonging to the window starting at window_start.
class PoseFitResidual final : public nlls::ResidualFunction {
 public:
  PoseFitResidual(double tau, double window_start, double dt, Pose measured)
      : tau_(tau), window_start_(window_start), dt_(dt), measured_(std::move(measured)) {}

  int dimension() const override { return 6; }

  void evaluate(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r) const override {
    RotationSpline rot(window_start_, dt_,
                       {v.rotation(0), v.rotation(1), v.rotation(2), v.rotation(3)});
    PositionSpline pos(window_start_, dt_, {v.vec3(4), v.vec3(5), v.vec3(6), v.vec3(7)});
    r.head<3>() = so3_log(rot.evaluate_in_span(1, tau_).value * measured_.rotation.inverse());
    r.tail<3>() = pos.evaluate_in_span(1, tau_).value - measured_.translation;
  }

  bool evaluate_with_jacobians(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r,
                               std::vector<Eigen::MatrixXd>& jac) const override {
    RotationSpline rot(window_start_, dt_,
                       {v.rotation(0), v.rotation(1), v.rotation(2), v.rotation(3)});
    PositionSpline pos(window_start_, dt_, {v.vec3(4), v.vec3(5), v.vec3(6), v.vec3(7)});
    RotationSplineEval re = rot.evaluate_in_span(1, tau_, true, false);
    PositionSplineEval pe = pos.evaluate_in_span(1, tau_);
    Eigen::Vector3d phi = so3_log(re.value * measured_.rotation.inverse());
    r.head<3>() = phi;
    r.tail<3>() = pe.value - measured_.translation;
    Eigen::Matrix3d chain = so3_right_jacobian_inverse(phi) * measured_.rotation.matrix();
    for (int m = 0; m < 4; ++m) {
      jac[static_cast<size_t>(m)].topRows<3>() = chain * re.knot_jacobians[static_cast<size_t>(m)];
      jac[static_cast<size_t>(4 + m)].bottomRows<3>() =
          pe.weights[m] * Eigen::Matrix3d::Identity();
    }
    return true;
  }

 private:
  double tau_;
  double window_start_;
  double dt_;
  Pose measured_;
};

}  // namespace

SegmentFit fit_spline_segment(const std::vector<TimedPose>& run, double knot_spacing) {
  if (!(knot_spacing > 0.0)) {
    throw InvalidArgumentError("knot spacing must be positive");
  }
  if (run.size() < 2) {
    throw InsufficientDataError("spline fitting needs at least two poses");
  }
  for (size_t i = 1; i < run.size(); ++i) {
    if (run[i].timestamp <= run[i - 1].timestamp) {
      throw InvalidArgumentError("poses must have strictly increasing timestamps");
    }
  }
  const double t_first = run.front().timestamp;
  const double t_last = run.back().timestamp;
  if (t_last - t_first < 4.0 * knot_spacing) {
    throw InsufficientDataError("pose run spans fewer than 4 knot intervals");
  }

  // Nudge the control grid slightly earlier so the first pose sits strictly
  // inside the spline's valid interval regardless of rounding.
  const double start = t_first - knot_spacing - 1e-9;
  const int n = static_cast<int>(std::ceil((t_last - start) / knot_spacing - 1e-9)) + 3;

  // Seed every control point from the pose nearest its knot time.
  std::vector<Rotation> rot_cps(static_cast<size_t>(n));
  std::vector<Eigen::Vector3d> pos_cps(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    double knot_t = start + j * knot_spacing;
    auto it = std::lower_bound(run.begin(), run.end(), knot_t,
                               [](const TimedPose& p, double t) { return p.timestamp < t; });
    size_t idx = static_cast<size_t>(it - run.begin());
    if (idx == run.size()) {
      idx = run.size() - 1;
    } else if (idx > 0 && knot_t - run[idx - 1].timestamp <= run[idx].timestamp - knot_t) {
      idx -= 1;
    }
    rot_cps[static_cast<size_t>(j)] = run[idx].pose.rotation;
    pos_cps[static_cast<size_t>(j)] = run[idx].pose.translation;
  }

  nlls::Problem problem;
  std::vector<int> rot_ids(static_cast<size_t>(n)), pos_ids(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    rot_ids[static_cast<size_t>(j)] =
        problem.add_rotation_block("rot_cp_" + std::to_string(j), rot_cps[static_cast<size_t>(j)]);
  }
  for (int j = 0; j < n; ++j) {
    pos_ids[static_cast<size_t>(j)] =
        problem.add_block("pos_cp_" + std::to_string(j), pos_cps[static_cast<size_t>(j)]);
  }

  RotationSpline index_spline(start, knot_spacing, rot_cps);
  for (const auto& tp : run) {
    int b = index_spline.base_index(tp.timestamp);
    double window_start = start + b * knot_spacing;
    std::vector<int> blocks;
    blocks.reserve(8);
    for (int m = 0; m < 4; ++m) blocks.push_back(rot_ids[static_cast<size_t>(b + m)]);
    for (int m = 0; m < 4; ++m) blocks.push_back(pos_ids[static_cast<size_t>(b + m)]);
    problem.add_residual(
        "pose_fit", blocks,
        std::make_shared<PoseFitResidual>(tp.timestamp, window_start, knot_spacing, tp.pose), {});
  }

  nlls::SolveOptions options;
  options.max_iterations = 50;
  nlls::SolveReport report = nlls::solve(problem, options);

  for (int j = 0; j < n; ++j) {
    rot_cps[static_cast<size_t>(j)] = problem.rotation_value(rot_ids[static_cast<size_t>(j)]);
    pos_cps[static_cast<size_t>(j)] = problem.value(pos_ids[static_cast<size_t>(j)]);
  }
  TrajectorySegment segment(RotationSpline(start, knot_spacing, rot_cps),
                            PositionSpline(start, knot_spacing, pos_cps), t_first,
                            t_last + 1e-9);

  double rot_sq = 0.0, pos_sq = 0.0;
  for (const auto& tp : run) {
    Pose fitted = segment.pose(tp.timestamp);
    rot_sq += so3_log(fitted.rotation * tp.pose.rotation.inverse()).squaredNorm();
    pos_sq += (fitted.translation - tp.pose.translation).squaredNorm();
  }
  double inv_n = 1.0 / static_cast<double>(run.size());
  return {std::move(segment), std::sqrt(rot_sq * inv_n), std::sqrt(pos_sq * inv_n),
          std::move(report)};
}

namespace {

Eigen::Matrix4d quat_left(const Eigen::Quaterniond& q) {
  Eigen::Matrix4d m;
  m << q.w(), -q.x(), -q.y(), -q.z(),
       q.x(),  q.w(), -q.z(),  q.y(),
       q.y(),  q.z(),  q.w(), -q.x(),
       q.z(), -q.y(),  q.x(),  q.w();
  return m;
}

Eigen::Matrix4d quat_right(const Eigen::Quaterniond& q) {
  Eigen::Matrix4d m;
  m << q.w(), -q.x(), -q.y(), -q.z(),
       q.x(),  q.w(),  q.z(), -q.y(),
       q.y(), -q.z(),  q.w(),  q.x(),
       q.z(),  q.y(), -q.x(),  q.w();
  return m;
}

Eigen::Quaterniond canonical(const Eigen::Quaterniond& q) {
  return q.w() < 0.0 ? Eigen::Quaterniond(-q.w(), -q.x(), -q.y(), -q.z()) : q;
}

struct CellSolution {
  double cost = 0.0;
  double offset = 0.0;
  Rotation rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  bool warning = false;
  int pairs = 0;
};

// Index pairs for the closed-form alignment. Consecutive frames are so close
// in time that their relative rotation sits at the pose-noise level, which
// leaves the quaternion constraint matrix with a second near-null direction
// (any near-identity quaternion fits). Pairing each pose with the first later
// one that accumulates a real rotation keeps the problem well conditioned;
// the pairing depends only on the target poses, never on the offset.
std::vector<std::pair<size_t, size_t>> alignment_pairs(const std::vector<TimedPose>& poses,
                                                       double min_rotation, double horizon) {
  std::vector<std::pair<size_t, size_t>> pairs;
  for (size_t k = 0; k + 1 < poses.size(); ++k) {
    size_t j = k + 1;
    while (j + 1 < poses.size() &&
           poses[k].pose.rotation.angle_to(poses[j].pose.rotation) < min_rotation &&
           poses[j].timestamp - poses[k].timestamp < horizon) {
      ++j;
    }
    pairs.emplace_back(k, j);
  }
  return pairs;
}

// Closed-form alignment at one candidate offset: rotation from the smallest
// eigenvector of the stacked quaternion constraints, translation from linear
// least squares, cost as the summed 6-dim relative-pose residual.
std::optional<CellSolution> solve_cell(const PiecewiseTrajectory& traj,
                                       const std::vector<TimedPose>& poses,
                                       const std::vector<std::pair<size_t, size_t>>& indices,
                                       double offset, int min_pairs) {
  std::vector<std::optional<Pose>> ref(poses.size());
  for (size_t i = 0; i < poses.size(); ++i) {
    ref[i] = traj.try_pose(poses[i].timestamp + offset);
  }
  std::vector<std::pair<Pose, Pose>> rel;  // (reference relative A, target relative B)
  for (const auto& [k, j] : indices) {
    if (!ref[k] || !ref[j]) continue;
    rel.emplace_back(ref[k]->inverse() * *ref[j],
                     poses[k].pose.inverse() * poses[j].pose);
  }
  if (static_cast<int>(rel.size()) < min_pairs) return std::nullopt;

  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  for (const auto& [a, b] : rel) {
    Eigen::Matrix4d n = quat_left(canonical(a.rotation.quaternion())) -
                        quat_right(canonical(b.rotation.quaternion()));
    m.noalias() += n.transpose() * n;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(m);
  Eigen::Vector4d qx = eig.eigenvectors().col(0);
  CellSolution out;
  out.offset = offset;
  out.rotation = Rotation::from_quaternion(qx[0], qx[1], qx[2], qx[3]);
  out.warning = eig.eigenvalues()[1] <= 1e-9 * std::max(1.0, eig.eigenvalues()[3]);
  out.pairs = static_cast<int>(rel.size());

  Eigen::MatrixXd lhs(3 * static_cast<Eigen::Index>(rel.size()), 3);
  Eigen::VectorXd rhs(3 * static_cast<Eigen::Index>(rel.size()));
  for (size_t k = 0; k < rel.size(); ++k) {
    const auto& [a, b] = rel[k];
    lhs.middleRows<3>(3 * static_cast<Eigen::Index>(k)) =
        a.rotation.matrix() - Eigen::Matrix3d::Identity();
    rhs.segment<3>(3 * static_cast<Eigen::Index>(k)) =
        out.rotation * b.translation - a.translation;
  }
  out.translation = lhs.completeOrthogonalDecomposition().solve(rhs);

  Pose x(out.rotation, out.translation);
  Pose x_inv = x.inverse();
  double cost = 0.0;
  for (const auto& [a, b] : rel) {
    Pose pred = x_inv * a * x;
    cost += so3_log(pred.rotation * b.rotation.inverse()).squaredNorm();
    cost += (pred.translation - b.translation).squaredNorm();
  }
  out.cost = cost;
  return out;
}

// Joint residual over all retained pose pairs. Blocks: extrinsic rotation,
// extrinsic translation, time offset.
class RelativePoseResidual final : public nlls::ResidualFunction {
 public:
  RelativePoseResidual(const PiecewiseTrajectory& traj,
                       std::vector<std::pair<TimedPose, TimedPose>> pairs)
      : traj_(traj), pairs_(std::move(pairs)) {}

  int dimension() const override { return 6 * static_cast<int>(pairs_.size()); }

  void evaluate(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r) const override {
    Pose x(v.rotation(0), v.vec3(1));
    Pose x_inv = x.inverse();
    double offset = v.scalar(2);
    for (size_t k = 0; k < pairs_.size(); ++k) {
      const auto& [p0, p1] = pairs_[k];
      Pose a = traj_.pose(p0.timestamp + offset).inverse() * traj_.pose(p1.timestamp + offset);
      Pose b = p0.pose.inverse() * p1.pose;
      Pose pred = x_inv * a * x;
      Eigen::Index row = 6 * static_cast<Eigen::Index>(k);
      r.segment<3>(row) = so3_log(pred.rotation * b.rotation.inverse());
      r.segment<3>(row + 3) = pred.translation - b.translation;
    }
  }

 private:
  const PiecewiseTrajectory& traj_;
  std::vector<std::pair<TimedPose, TimedPose>> pairs_;
};

}  // namespace

HandEyeResult hand_eye_init(const PiecewiseTrajectory& traj,
                            const std::vector<TimedPose>& target_poses,
                            const HandEyeOptions& options) {
  if (traj.empty()) {
    throw InvalidArgumentError("alignment needs a nonempty reference trajectory");
  }
  if (target_poses.size() < 2) {
    throw InsufficientDataError("alignment needs at least two target poses");
  }
  for (size_t i = 1; i < target_poses.size(); ++i) {
    if (target_poses[i].timestamp <= target_poses[i - 1].timestamp) {
      throw InvalidArgumentError("target poses must have strictly increasing timestamps");
    }
  }
  if (!(options.offset_bound > 0.0) || !(options.grid_step > 0.0) ||
      !(options.refine_halfwidth > 0.0) || options.min_pairs < 1 ||
      !(options.pair_min_rotation > 0.0) || !(options.pair_horizon > 0.0)) {
    throw InvalidArgumentError("alignment options must be positive");
  }

  const std::vector<std::pair<size_t, size_t>> indices =
      alignment_pairs(target_poses, options.pair_min_rotation, options.pair_horizon);
  const int cells = static_cast<int>(std::lround(2.0 * options.offset_bound / options.grid_step));
  std::optional<CellSolution> best;
  for (int s = 0; s <= cells; ++s) {
    double offset = -options.offset_bound + s * options.grid_step;
    auto cell = solve_cell(traj, target_poses, indices, offset, options.min_pairs);
    if (cell && (!best || cell->cost < best->cost)) best = cell;
  }
  if (!best) {
    throw InsufficientDataError(
        "no candidate offset keeps enough pose pairs inside the trajectory");
  }

  // Keep only pairs that stay inside one segment across the whole refinement
  // box, so the residual count cannot change mid-solve.
  double box_lo = std::max(best->offset - options.refine_halfwidth, -options.offset_bound);
  double box_hi = std::min(best->offset + options.refine_halfwidth, options.offset_bound);
  double probe_lo = box_lo - 1e-6, probe_hi = box_hi + 1e-6;
  auto stable = [&](double t) {
    int lo = traj.segment_for(t + probe_lo);
    return lo >= 0 && lo == traj.segment_for(t + probe_hi);
  };
  std::vector<std::pair<TimedPose, TimedPose>> pairs;
  for (size_t k = 0; k + 1 < target_poses.size(); ++k) {
    if (stable(target_poses[k].timestamp) && stable(target_poses[k + 1].timestamp)) {
      pairs.emplace_back(target_poses[k], target_poses[k + 1]);
    }
  }
  if (static_cast<int>(pairs.size()) < options.min_pairs) {
    throw InsufficientDataError("too few pose pairs remain stable around the offset seed");
  }

  const int pairs_used = static_cast<int>(pairs.size());
  nlls::Problem problem;
  int rot_id = problem.add_rotation_block("extrinsic_rotation", best->rotation);
  int t_id = problem.add_block("extrinsic_translation", best->translation);
  int o_id = problem.add_scalar_block("time_offset", best->offset);
  problem.set_bounds(o_id, Eigen::VectorXd::Constant(1, box_lo),
                     Eigen::VectorXd::Constant(1, box_hi));
  problem.add_residual("relative_pose", {rot_id, t_id, o_id},
                       std::make_shared<RelativePoseResidual>(traj, std::move(pairs)), {});

  HandEyeResult out;
  out.report = nlls::solve(problem, {});
  out.params.rotation = problem.rotation_value(rot_id);
  out.params.translation = problem.value(t_id);
  out.params.time_offset = problem.scalar_value(o_id);
  out.conditioning_warning = best->warning;
  out.seed_cost = out.report.initial_cost;
  out.refined_cost = out.report.final_cost;
  out.pairs_used = pairs_used;
  return out;
}

}  // namespace stcalib
