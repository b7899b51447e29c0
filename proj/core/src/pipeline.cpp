#include "stcalib/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <utility>

#include "stcalib/errors.hpp"
#include "stcalib/pnp.hpp"

namespace stcalib {

namespace {

void require_positive(double v, const char* what) {
  if (!std::isfinite(v) || v <= 0.0) {
    throw InvalidArgumentError(std::string(what) + " must be positive");
  }
}

// Reprojection of one pattern through a control-point window of the
// trajectory. Blocks: n_cp rotation control points, n_cp position control
// points, then (target patterns only) extrinsic rotation, extrinsic
// translation, time offset. The window must cover every time the offset box
// can shift the pattern to.
class ReprojectionResidual final : public nlls::ResidualFunction {
 public:
  ReprojectionResidual(const GridPattern& pattern, const CameraIntrinsics& intrinsics,
                       double window_start, double knot_spacing, int n_cp, bool target)
      : points_(pattern.points),
        timestamp_(pattern.timestamp),
        intrinsics_(intrinsics),
        window_start_(window_start),
        dt_(knot_spacing),
        n_cp_(n_cp),
        target_(target) {}

  int dimension() const override { return 2 * static_cast<int>(points_.size()); }

  void evaluate(const nlls::BlockValues& values,
                Eigen::Ref<Eigen::VectorXd> residual) const override {
    compute(values, residual, nullptr);
  }

  bool evaluate_with_jacobians(const nlls::BlockValues& values,
                               Eigen::Ref<Eigen::VectorXd> residual,
                               std::vector<Eigen::MatrixXd>& jacobians) const override {
    compute(values, residual, &jacobians);
    return true;
  }

 private:
  void compute(const nlls::BlockValues& values, Eigen::Ref<Eigen::VectorXd> residual,
               std::vector<Eigen::MatrixXd>* jac) const {
    std::vector<Rotation> rot_cps;
    std::vector<Eigen::Vector3d> pos_cps;
    rot_cps.reserve(static_cast<size_t>(n_cp_));
    pos_cps.reserve(static_cast<size_t>(n_cp_));
    for (int j = 0; j < n_cp_; ++j) {
      rot_cps.push_back(values.rotation(j));
    }
    for (int j = 0; j < n_cp_; ++j) {
      pos_cps.push_back(values.vec3(n_cp_ + j));
    }
    const RotationSpline rot_spline(window_start_, dt_, std::move(rot_cps));
    const PositionSpline pos_spline(window_start_, dt_, std::move(pos_cps));

    double tau = timestamp_;
    Rotation extr_rot;
    Eigen::Vector3d extr_t = Eigen::Vector3d::Zero();
    if (target_) {
      extr_rot = values.rotation(2 * n_cp_);
      extr_t = values.vec3(2 * n_cp_ + 1);
      tau += values.scalar(2 * n_cp_ + 2);
    }

    // The window covers every knot interval the offset box can reach, so
    // select the interval by arithmetic and clamp: a query that rounds onto
    // a window edge must not abort the solve.
    const int span = std::clamp(
        static_cast<int>(std::floor((tau - window_start_) / dt_)), 1, n_cp_ - 3);

    const bool want_jac = jac != nullptr;
    const RotationSplineEval rot_eval =
        rot_spline.evaluate_in_span(span, tau, want_jac, want_jac && target_);
    const PositionSplineEval pos_eval = pos_spline.evaluate_in_span(span, tau);
    const Eigen::Matrix3d world_to_ref = rot_eval.value.matrix().transpose();
    const Eigen::Matrix3d ref_to_cam =
        target_ ? Eigen::Matrix3d(extr_rot.matrix().transpose())
                : Eigen::Matrix3d(Eigen::Matrix3d::Identity());

    for (size_t i = 0; i < points_.size(); ++i) {
      const PatternPoint& pt = points_[i];
      const Eigen::Vector3d p_ref = world_to_ref * (pt.board_point - pos_eval.value);
      const Eigen::Vector3d p_cam =
          target_ ? Eigen::Vector3d(ref_to_cam * (p_ref - extr_t)) : p_ref;
      if (p_cam.z() <= 1e-6) {
        // A trial step that swings the board behind the camera is signalled
        // as a non-finite residual so the solver rejects it and re-damps.
        residual.setConstant(std::numeric_limits<double>::quiet_NaN());
        return;
      }
      Eigen::Matrix<double, 2, 3> pixel_jac;
      const Eigen::Vector2d pixel =
          project(p_cam, intrinsics_, want_jac ? &pixel_jac : nullptr);
      const int row = 2 * static_cast<int>(i);
      residual.segment<2>(row) = pixel - pt.image_point;
      if (!want_jac) {
        continue;
      }

      const Eigen::Matrix<double, 2, 3> chain =
          target_ ? Eigen::Matrix<double, 2, 3>(pixel_jac * ref_to_cam) : pixel_jac;
      const Eigen::Matrix3d p_ref_hat = so3_hat(p_ref);
      for (int m = 0; m < 4; ++m) {
        (*jac)[static_cast<size_t>(rot_eval.base + m)].middleRows<2>(row) =
            chain * (p_ref_hat * rot_eval.knot_jacobians[static_cast<size_t>(m)]);
        (*jac)[static_cast<size_t>(n_cp_ + pos_eval.base + m)].middleRows<2>(row) =
            chain * (-pos_eval.weights[m] * world_to_ref);
      }
      if (target_) {
        (*jac)[static_cast<size_t>(2 * n_cp_)].middleRows<2>(row) = pixel_jac * so3_hat(p_cam);
        (*jac)[static_cast<size_t>(2 * n_cp_ + 1)].middleRows<2>(row) = -chain;
        const Eigen::Vector3d p_ref_dot =
            -rot_eval.angular_velocity.cross(p_ref) - world_to_ref * pos_eval.velocity;
        (*jac)[static_cast<size_t>(2 * n_cp_ + 2)].middleRows<2>(row) = chain * p_ref_dot;
      }
    }
  }

  std::vector<PatternPoint> points_;
  double timestamp_;
  CameraIntrinsics intrinsics_;
  double window_start_;
  double dt_;
  int n_cp_;
  bool target_;
};

struct PatternSite {
  int segment = -1;
  int base = 0;  // first control point of the covering window
  int n_cp = 0;
};

// A pattern enters the problem only when [t_lo, t_hi] sits inside one
// segment; the window then spans every control point any time in the range
// can touch.
std::optional<PatternSite> locate_window(const PiecewiseTrajectory& trajectory, double t_lo,
                                         double t_hi) {
  const int seg = trajectory.segment_for(t_lo);
  if (seg < 0 || seg != trajectory.segment_for(t_hi)) {
    return std::nullopt;
  }
  const RotationSpline& rot = trajectory.segments()[static_cast<size_t>(seg)].rotation_spline();
  PatternSite site;
  site.segment = seg;
  site.base = rot.base_index(t_lo);
  site.n_cp = rot.base_index(t_hi) - site.base + 4;
  return site;
}

template <typename Fn>
auto run_stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

void CalibrationOptions::validate() const {
  require_positive(association_threshold_px, "association threshold");
  if (max_prediction_offset < 2) {
    throw InvalidArgumentError("max prediction offset must be at least 2");
  }
  require_positive(knot_spacing, "knot spacing");
  require_positive(max_pose_gap, "max pose gap");
  if (min_run_length < 1) {
    throw InvalidArgumentError("min run length must be at least 1");
  }
  if (!std::isfinite(huber_delta_px) || huber_delta_px < 0.0) {
    throw InvalidArgumentError("huber delta must be non-negative");
  }
  require_positive(offset_bound, "offset bound");
  require_positive(offset_grid_step, "offset grid step");
  require_positive(offset_refine_halfwidth, "offset refine halfwidth");
  require_positive(offset_box_halfwidth, "offset box halfwidth");
  if (offset_grid_step > 2.0 * offset_bound) {
    throw InvalidArgumentError("offset grid step exceeds the search range");
  }
  if (max_iterations < 1) {
    throw InvalidArgumentError("max iterations must be at least 1");
  }
}

OffsetWindow offset_window(double initial_offset, const CalibrationOptions& options) {
  if (!std::isfinite(initial_offset) || std::abs(initial_offset) > options.offset_bound) {
    throw InvalidArgumentError("initial time offset lies outside the search bound");
  }
  OffsetWindow window;
  window.lower = std::max(initial_offset - options.offset_box_halfwidth, -options.offset_bound);
  window.upper = std::min(initial_offset + options.offset_box_halfwidth, options.offset_bound);
  return window;
}

BaSetup build_ba_problem(const std::array<PatternTrack, 2>& tracks,
                         const std::array<CameraIntrinsics, 2>& intrinsics,
                         int reference_camera, const PiecewiseTrajectory& trajectory,
                         const SpatiotemporalParams& initial,
                         const CalibrationOptions& options) {
  options.validate();
  if (reference_camera != 0 && reference_camera != 1) {
    throw InvalidArgumentError("reference camera must be 0 or 1");
  }
  if (trajectory.empty()) {
    throw InvalidArgumentError("trajectory has no segments");
  }
  for (const auto& intr : intrinsics) {
    intr.validate();
  }

  BaSetup setup;
  setup.window = offset_window(initial.time_offset, options);
  nlls::Problem& problem = setup.problem;

  const auto& segments = trajectory.segments();
  setup.rotation_blocks.resize(segments.size());
  setup.position_blocks.resize(segments.size());
  for (size_t s = 0; s < segments.size(); ++s) {
    const RotationSpline& rot = segments[s].rotation_spline();
    const PositionSpline& pos = segments[s].position_spline();
    const std::string prefix = "seg" + std::to_string(s);
    for (int j = 0; j < rot.size(); ++j) {
      setup.rotation_blocks[s].push_back(problem.add_rotation_block(
          prefix + "_rot_" + std::to_string(j), rot.control_points()[static_cast<size_t>(j)]));
    }
    for (int j = 0; j < pos.size(); ++j) {
      setup.position_blocks[s].push_back(problem.add_block(
          prefix + "_pos_" + std::to_string(j), pos.control_points()[static_cast<size_t>(j)]));
    }
  }
  setup.extrinsic_rotation_block =
      problem.add_rotation_block("extrinsic_rotation", initial.rotation);
  setup.extrinsic_translation_block =
      problem.add_block("extrinsic_translation", initial.translation);
  setup.offset_block = problem.add_scalar_block("time_offset", initial.time_offset);
  Eigen::VectorXd lower(1), upper(1);
  lower[0] = setup.window.lower;
  upper[0] = setup.window.upper;
  problem.set_bounds(setup.offset_block, lower, upper);

  for (int cam = 0; cam < 2; ++cam) {
    const bool target = cam != reference_camera;
    const double shift_lo = target ? setup.window.lower : 0.0;
    const double shift_hi = target ? setup.window.upper : 0.0;
    for (const GridPattern& pattern : tracks[static_cast<size_t>(cam)].patterns) {
      const auto site = locate_window(trajectory, pattern.timestamp + shift_lo,
                                      pattern.timestamp + shift_hi);
      if (!site) {
        ++(target ? setup.excluded_target : setup.excluded_reference);
        continue;
      }
      const RotationSpline& rot =
          segments[static_cast<size_t>(site->segment)].rotation_spline();
      std::vector<int> blocks;
      blocks.reserve(static_cast<size_t>(2 * site->n_cp + 3));
      for (int m = 0; m < site->n_cp; ++m) {
        blocks.push_back(
            setup.rotation_blocks[static_cast<size_t>(site->segment)][static_cast<size_t>(site->base + m)]);
      }
      for (int m = 0; m < site->n_cp; ++m) {
        blocks.push_back(
            setup.position_blocks[static_cast<size_t>(site->segment)][static_cast<size_t>(site->base + m)]);
      }
      if (target) {
        blocks.push_back(setup.extrinsic_rotation_block);
        blocks.push_back(setup.extrinsic_translation_block);
        blocks.push_back(setup.offset_block);
      }
      auto fn = std::make_shared<ReprojectionResidual>(
          pattern, intrinsics[static_cast<size_t>(cam)],
          rot.start_time() + site->base * rot.knot_spacing(), rot.knot_spacing(), site->n_cp,
          target);
      problem.add_residual(target ? "reproj_target" : "reproj_reference", std::move(blocks),
                           std::move(fn), {options.huber_delta_px, 2});
      ++(target ? setup.target_patterns : setup.reference_patterns);
      setup.point_count += static_cast<long>(pattern.points.size());
    }
  }

  if (setup.reference_patterns == 0) {
    throw InsufficientDataError("the trajectory covers no reference-camera patterns");
  }
  if (setup.target_patterns == 0) {
    throw InsufficientDataError(
        "the trajectory covers no target-camera patterns within the offset window");
  }
  return setup;
}

ResidualStats compute_residual_stats(const std::array<PatternTrack, 2>& tracks,
                                     const std::array<CameraIntrinsics, 2>& intrinsics,
                                     int reference_camera,
                                     const PiecewiseTrajectory& trajectory,
                                     const SpatiotemporalParams& params,
                                     const OffsetWindow& window,
                                     const CalibrationOptions& options) {
  options.validate();
  if (reference_camera != 0 && reference_camera != 1) {
    throw InvalidArgumentError("reference camera must be 0 or 1");
  }
  if (trajectory.empty()) {
    throw InvalidArgumentError("trajectory has no segments");
  }
  if (!(window.lower <= window.upper) || !std::isfinite(window.lower) ||
      !std::isfinite(window.upper)) {
    throw InvalidArgumentError("offset window is not a valid interval");
  }
  if (params.time_offset < window.lower - 1e-12 || params.time_offset > window.upper + 1e-12) {
    throw InvalidArgumentError("time offset lies outside the inclusion window");
  }

  ResidualStats stats;
  stats.histogram.assign(ResidualStats::kBins * ResidualStats::kBins, 0);
  double sum_x = 0.0, sum_y = 0.0, sum_xx = 0.0, sum_yy = 0.0, sum_sq = 0.0;
  double robust = 0.0;

  const auto bin_of = [](double v) {
    const int b = static_cast<int>(
        std::floor((v + ResidualStats::kRange) / ResidualStats::kBinWidth));
    return std::clamp(b, 0, ResidualStats::kBins - 1);
  };

  const Pose extrinsic{params.rotation, params.translation};
  for (int cam = 0; cam < 2; ++cam) {
    const bool target = cam != reference_camera;
    const double shift_lo = target ? window.lower : 0.0;
    const double shift_hi = target ? window.upper : 0.0;
    for (const GridPattern& pattern : tracks[static_cast<size_t>(cam)].patterns) {
      const auto site = locate_window(trajectory, pattern.timestamp + shift_lo,
                                      pattern.timestamp + shift_hi);
      if (!site) {
        continue;
      }
      const TrajectorySegment& seg = trajectory.segments()[static_cast<size_t>(site->segment)];
      const double tau = pattern.timestamp + (target ? params.time_offset : 0.0);
      const Pose cam_pose = target ? seg.pose(tau) * extrinsic : seg.pose(tau);
      const Pose world_to_cam = cam_pose.inverse();
      for (const PatternPoint& pt : pattern.points) {
        const Eigen::Vector3d p_cam = world_to_cam * pt.board_point;
        const Eigen::Vector2d res =
            project(p_cam, intrinsics[static_cast<size_t>(cam)]) - pt.image_point;
        ++stats.point_count;
        sum_x += res.x();
        sum_y += res.y();
        sum_xx += res.x() * res.x();
        sum_yy += res.y() * res.y();
        const double s = res.squaredNorm();
        sum_sq += s;
        robust += options.huber_delta_px > 0.0
                      ? nlls::huber_loss(s, options.huber_delta_px).first
                      : s;
        ++stats.histogram[static_cast<size_t>(bin_of(res.y()) * ResidualStats::kBins +
                                              bin_of(res.x()))];
      }
    }
  }

  if (stats.point_count == 0) {
    throw InsufficientDataError("no residuals fall inside the trajectory coverage");
  }
  const double n = static_cast<double>(stats.point_count);
  stats.mean = Eigen::Vector2d(sum_x / n, sum_y / n);
  stats.sigma = Eigen::Vector2d(
      std::sqrt(std::max(0.0, sum_xx / n - stats.mean.x() * stats.mean.x())),
      std::sqrt(std::max(0.0, sum_yy / n - stats.mean.y() * stats.mean.y())));
  stats.rms_px = std::sqrt(sum_sq / n);
  stats.robust_cost = robust;
  return stats;
}

CalibrationResult run_calibration(const CalibrationInput& input,
                                  const CalibrationOptions& options) {
  options.validate();
  input.board.validate();
  const std::array<CameraIntrinsics, 2> intrinsics = {input.cameras[0].intrinsics,
                                                      input.cameras[1].intrinsics};
  for (const auto& intr : intrinsics) {
    intr.validate();
  }

  CalibrationResult result;
  result.scenario_id = input.scenario_id;

  std::array<PatternTrack, 2> tracks;
  run_stage("tracking", [&] {
    for (int c = 0; c < 2; ++c) {
      const CameraObservations& cam = input.cameras[static_cast<size_t>(c)];
      if (cam.patterns.patterns.empty()) {
        throw InsufficientDataError("camera " + std::to_string(c) +
                                    " has no recognized patterns");
      }
      for (size_t k = 0; k < cam.patterns.patterns.size(); ++k) {
        validate_pattern(cam.patterns.patterns[k], input.board);
        if (k > 0 &&
            cam.patterns.patterns[k].timestamp <= cam.patterns.patterns[k - 1].timestamp) {
          throw InvalidArgumentError("camera " + std::to_string(c) +
                                     " patterns are not time-ordered");
        }
      }
      TrackingSummary& summary = result.tracking[static_cast<size_t>(c)];
      summary.frames = static_cast<int>(cam.frames.size());
      summary.input_patterns = static_cast<int>(cam.patterns.size());
      summary.complete_input = cam.patterns.complete_count();
      if (cam.frames.empty()) {
        tracks[static_cast<size_t>(c)] = cam.patterns;
      } else {
        tracks[static_cast<size_t>(c)] =
            track_incomplete(cam.patterns, cam.frames, options.association_threshold_px,
                             default_min_points(input.board), options.max_prediction_offset);
      }
      summary.output_patterns = static_cast<int>(tracks[static_cast<size_t>(c)].size());
      summary.complete_output = tracks[static_cast<size_t>(c)].complete_count();
      const double denom =
          summary.frames > 0 ? summary.frames : std::max(1, summary.input_patterns);
      summary.complete_rate_input = summary.complete_input / denom;
      summary.complete_rate_output = summary.complete_output / denom;
    }
    return 0;
  });

  result.reference_camera =
      run_stage("reference_selection", [&] { return select_reference(tracks[0], tracks[1]); });
  const int ref = result.reference_camera;
  const int tgt = 1 - ref;

  std::array<std::vector<TimedPose>, 2> poses;
  std::array<std::vector<TimedPose>, 2> complete_poses;
  run_stage("pnp", [&] {
    for (int c = 0; c < 2; ++c) {
      PnpSummary& summary = result.pnp[static_cast<size_t>(c)];
      double rms_sum = 0.0;
      const auto& patterns = tracks[static_cast<size_t>(c)].patterns;
      for (size_t k = 0; k < patterns.size(); ++k) {
        const GridPattern& pattern = patterns[k];
        if (pattern.points.size() < 4) {
          continue;
        }
        ++summary.attempted;
        try {
          const PnpResult pnp = solve_pnp(pattern, intrinsics[static_cast<size_t>(c)]);
          poses[static_cast<size_t>(c)].push_back(
              {pnp.camera_in_world, pattern.timestamp, static_cast<int>(k)});
          if (pattern.complete) {
            complete_poses[static_cast<size_t>(c)].push_back(
                poses[static_cast<size_t>(c)].back());
          }
          rms_sum += pnp.rms_px;
        } catch (const Error&) {
          ++summary.failures;
        }
      }
      summary.solved = summary.attempted - summary.failures;
      summary.mean_rms_px = summary.solved > 0 ? rms_sum / summary.solved : 0.0;
    }
    return 0;
  });

  PiecewiseTrajectory trajectory = run_stage("spline_fit", [&] {
    const auto runs = segment_poses(complete_poses[static_cast<size_t>(ref)],
                                    options.max_pose_gap, options.min_run_length);
    if (runs.empty()) {
      throw InsufficientDataError("no pose run is long enough to support a trajectory fit");
    }
    std::vector<TrajectorySegment> segs;
    segs.reserve(runs.size());
    for (const auto& run : runs) {
      SegmentFit fit = fit_spline_segment(run, options.knot_spacing);
      SegmentSummary summary;
      summary.t_min = fit.segment.t_min();
      summary.t_max = fit.segment.t_max();
      summary.control_points = fit.segment.rotation_spline().size();
      summary.rotation_rms_rad = fit.rotation_rms_rad;
      summary.position_rms_m = fit.position_rms_m;
      result.segments.push_back(summary);
      segs.push_back(std::move(fit.segment));
    }
    return PiecewiseTrajectory(std::move(segs));
  });

  run_stage("hand_eye", [&] {
    HandEyeOptions he;
    he.offset_bound = options.offset_bound;
    he.grid_step = options.offset_grid_step;
    he.refine_halfwidth = options.offset_refine_halfwidth;
    result.initialization = hand_eye_init(trajectory, poses[static_cast<size_t>(tgt)], he);
    return 0;
  });

  BaSetup setup = run_stage("refinement", [&] {
    BaSetup s = build_ba_problem(tracks, intrinsics, ref, trajectory,
                                 result.initialization.params, options);
    nlls::SolveOptions so;
    so.max_iterations = options.max_iterations;
    result.refinement = nlls::solve(s.problem, so);
    return s;
  });

  result.params.rotation = setup.problem.rotation_value(setup.extrinsic_rotation_block);
  result.params.translation = setup.problem.value(setup.extrinsic_translation_block);
  result.params.time_offset = setup.problem.scalar_value(setup.offset_block);
  for (size_t s = 0; s < trajectory.segments().size(); ++s) {
    TrajectorySegment& seg = trajectory.segments()[s];
    for (int j = 0; j < seg.rotation_spline().size(); ++j) {
      seg.rotation_spline().control_point(j) =
          setup.problem.rotation_value(setup.rotation_blocks[s][static_cast<size_t>(j)]);
    }
    for (int j = 0; j < seg.position_spline().size(); ++j) {
      seg.position_spline().control_point(j) =
          setup.problem.value(setup.position_blocks[s][static_cast<size_t>(j)]);
    }
  }
  result.trajectory = std::move(trajectory);
  result.excluded_reference = setup.excluded_reference;
  result.excluded_target = setup.excluded_target;

  result.residual_stats = run_stage("reporting", [&] {
    return compute_residual_stats(tracks, intrinsics, ref, result.trajectory, result.params,
                                  setup.window, options);
  });

  return result;
}

}  // namespace stcalib
