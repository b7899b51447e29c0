#pragma once

#include <array>
#include <string>
#include <vector>

#include "stcalib/initialization.hpp"
#include "stcalib/nlls.hpp"
#include "stcalib/spline.hpp"
#include "stcalib/tracking.hpp"

namespace stcalib {

struct CalibrationOptions {
  double association_threshold_px = 3.0;
  int max_prediction_offset = 5;
  double knot_spacing = 0.05;          // seconds between spline control points
  double max_pose_gap = 0.1;           // seconds; larger gaps split the trajectory
  int min_run_length = 50;             // keep pose runs strictly longer than this
  double huber_delta_px = 1.0;
  double offset_bound = 0.15;          // seconds, symmetric search range
  double offset_grid_step = 0.001;
  double offset_refine_halfwidth = 0.005;
  double offset_box_halfwidth = 0.01;  // bound around the initial offset during refinement
  int max_iterations = 100;            // joint refinement cap

  void validate() const;
};

struct CameraObservations {
  CameraIntrinsics intrinsics;
  std::vector<EllipseFrame> frames;  // raw center detections, time-ordered
  PatternTrack patterns;             // recognizer output, time-ordered
};

struct CalibrationInput {
  std::string scenario_id;  // optional tag echoed into the result
  BoardSpec board;
  std::array<CameraObservations, 2> cameras;
};

struct TrackingSummary {
  int frames = 0;  // ellipse frames available to the completion pass
  int input_patterns = 0;
  int complete_input = 0;
  int output_patterns = 0;
  int complete_output = 0;
  double complete_rate_input = 0.0;   // complete / frames (or patterns when no frames)
  double complete_rate_output = 0.0;
};

struct PnpSummary {
  int attempted = 0;  // patterns with at least 4 points
  int solved = 0;
  int failures = 0;
  double mean_rms_px = 0.0;  // over solved patterns
};

struct SegmentSummary {
  double t_min = 0.0;
  double t_max = 0.0;
  int control_points = 0;  // per spline
  double rotation_rms_rad = 0.0;
  double position_rms_m = 0.0;
};

struct ResidualStats {
  static constexpr int kBins = 50;
  static constexpr double kBinWidth = 0.02;  // px
  static constexpr double kRange = 0.5;      // px half-width; outliers clamp to edge bins

  long point_count = 0;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();   // px, per axis
  Eigen::Vector2d sigma = Eigen::Vector2d::Zero();  // px, population
  double rms_px = 0.0;       // sqrt(mean squared point error)
  double robust_cost = 0.0;  // same loss and grouping as the solver
  std::vector<int> histogram;  // kBins*kBins counts, y-major; sums to point_count
};

// Time-offset interval the joint refinement may explore; target-camera
// patterns enter only when the trajectory covers their whole shifted range,
// so the residual structure cannot change inside the interval.
struct OffsetWindow {
  double lower = 0.0;
  double upper = 0.0;
};

OffsetWindow offset_window(double initial_offset, const CalibrationOptions& options);

struct BaSetup {
  nlls::Problem problem;
  OffsetWindow window;
  int reference_patterns = 0;
  int target_patterns = 0;
  int excluded_reference = 0;  // patterns the trajectory does not cover
  int excluded_target = 0;
  long point_count = 0;
  std::vector<std::vector<int>> rotation_blocks;  // [segment][control point]
  std::vector<std::vector<int>> position_blocks;
  int extrinsic_rotation_block = -1;
  int extrinsic_translation_block = -1;
  int offset_block = -1;
};

// Reprojection problem over all tracked patterns of both cameras: spline
// control points, the extrinsic pair, and the time offset (boxed to the
// window). Throws InsufficientDataError when either camera contributes no
// residuals.
BaSetup build_ba_problem(const std::array<PatternTrack, 2>& tracks,
                         const std::array<CameraIntrinsics, 2>& intrinsics,
                         int reference_camera, const PiecewiseTrajectory& trajectory,
                         const SpatiotemporalParams& initial,
                         const CalibrationOptions& options = {});

// Re-derives the reprojection residuals of the patterns build_ba_problem
// would include for the same window, from the trajectory and parameters
// alone.
ResidualStats compute_residual_stats(const std::array<PatternTrack, 2>& tracks,
                                     const std::array<CameraIntrinsics, 2>& intrinsics,
                                     int reference_camera,
                                     const PiecewiseTrajectory& trajectory,
                                     const SpatiotemporalParams& params,
                                     const OffsetWindow& window,
                                     const CalibrationOptions& options = {});

struct CalibrationResult {
  SpatiotemporalParams params;  // target camera w.r.t. reference camera
  int reference_camera = 0;     // index into the input order
  PiecewiseTrajectory trajectory;
  std::array<TrackingSummary, 2> tracking;
  std::array<PnpSummary, 2> pnp;
  std::vector<SegmentSummary> segments;
  HandEyeResult initialization;
  nlls::SolveReport refinement;
  ResidualStats residual_stats;
  int excluded_reference = 0;
  int excluded_target = 0;
  std::string scenario_id;
};

// Full pipeline: pattern completion, reference selection, per-pattern pose
// recovery, trajectory fitting, hand-eye seeding, joint refinement, residual
// statistics. Failures carry the stage name via StageError.
CalibrationResult run_calibration(const CalibrationInput& input,
                                  const CalibrationOptions& options = {});

}  // namespace stcalib
