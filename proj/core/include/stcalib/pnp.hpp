#pragma once

#include "stcalib/geometry.hpp"
#include "stcalib/tracking.hpp"

namespace stcalib {

struct PnpResult {
  Pose camera_in_world;  // the board frame is the world frame
  double rms_px = 0.0;   // per-point RMS reprojection error at the refined pose
};

// Planar-target pose recovery: homography initialization on undistorted
// normalized coordinates, then reprojection refinement through the full
// camera model. Throws DegeneratePatternError for < 4 points or a collinear
// board configuration, PnpFailureError when refinement diverges or ends with
// RMS above 5 px.
PnpResult solve_pnp(const GridPattern& pattern, const CameraIntrinsics& intr);

// Inverts the distortion model by fixed-point iteration; input and output are
// normalized image coordinates.
Eigen::Vector2d undistort_normalized(const Eigen::Vector2d& distorted, const Distortion& d);

}  // namespace stcalib
