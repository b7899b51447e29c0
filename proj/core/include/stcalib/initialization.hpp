#pragma once

#include <vector>

#include "stcalib/geometry.hpp"
#include "stcalib/nlls.hpp"
#include "stcalib/spline.hpp"

namespace stcalib {

struct TimedPose {
  Pose pose;              // camera-in-world
  double timestamp = 0.0; // that camera's clock
  int pattern_id = -1;    // index of the source pattern within its track
};

// Rigid extrinsics of the target camera expressed in the reference camera
// frame (p_ref = R * p_tgt + t), plus the clock offset satisfying
// tau_ref = tau_tgt + time_offset.
struct SpatiotemporalParams {
  Rotation rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double time_offset = 0.0;  // seconds
};

// Maximal runs of poses whose consecutive gaps stay below max_gap; runs with
// at most min_run_length poses are discarded.
std::vector<std::vector<TimedPose>> segment_poses(const std::vector<TimedPose>& poses,
                                                  double max_gap, int min_run_length);

struct SegmentFit {
  TrajectorySegment segment;
  double rotation_rms_rad = 0.0;  // post-fit pose residual RMS against the run
  double position_rms_m = 0.0;
  nlls::SolveReport report;
};

// Fits camera-to-world rotation and position splines to one pose run:
// control points seeded from the timestamp-nearest pose, then refined by
// minimizing the 6-dim pose residuals (rotation log, translation difference).
// The returned segment covers [first, last] pose timestamps. Throws
// InsufficientDataError when the run spans fewer than 4 knot intervals.
SegmentFit fit_spline_segment(const std::vector<TimedPose>& run, double knot_spacing);

struct HandEyeOptions {
  double offset_bound = 0.15;       // seconds, symmetric search range
  double grid_step = 0.001;         // seconds, coarse search resolution
  double refine_halfwidth = 0.005;  // seconds, offset box around the grid seed
  int min_pairs = 10;
  // The closed-form alignment pairs each pose with the first later one whose
  // relative rotation reaches pair_min_rotation; consecutive poses are too
  // close in time for the quaternion constraints to separate the extrinsic
  // rotation from the identity once the poses carry noise. pair_horizon caps
  // the search so near-still stretches still produce (weaker) pairs.
  double pair_min_rotation = 0.05;  // radians
  double pair_horizon = 1.0;        // seconds
};

struct HandEyeResult {
  SpatiotemporalParams params;
  bool conditioning_warning = false;  // rotation alignment near rank-deficient
  double seed_cost = 0.0;             // refinement cost at the grid seed
  double refined_cost = 0.0;
  int pairs_used = 0;                 // pose pairs entering the refinement
  nlls::SolveReport report;
};

// Spatiotemporal initialization against a fixed reference trajectory: a 1 ms
// offset grid where each cell solves the classical rotation-then-translation
// alignment from relative-pose pairs, then a joint refinement of all seven
// parameters around the best cell. Throws InsufficientDataError when too few
// pose pairs land inside the trajectory.
HandEyeResult hand_eye_init(const PiecewiseTrajectory& traj,
                            const std::vector<TimedPose>& target_poses,
                            const HandEyeOptions& options = {});

}  // namespace stcalib
