#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace stcalib {

// Asymmetric circle grid. Circle (r, c) sits at x = c*spacing,
// y = (2r + c%2)*spacing/2, z = 0 in the board frame; flat index j = r*cols + c.
struct BoardSpec {
  int rows = 0;
  int cols = 0;
  double spacing = 0.0;  // center-to-center, meters

  int circle_count() const { return rows * cols; }
  void validate() const;  // rows >= 2, cols >= 2, spacing > 0
};

std::vector<Eigen::Vector3d> board_object_points(const BoardSpec& spec);

// One recognizer/tracker output frame: unorganized ellipse centers sharing a
// timestamp on that camera's clock.
struct EllipseFrame {
  double timestamp = 0.0;
  std::vector<Eigen::Vector2d> centers;
};

struct PatternPoint {
  int circle_index = 0;
  Eigen::Vector2d image_point = Eigen::Vector2d::Zero();
  Eigen::Vector3d board_point = Eigen::Vector3d::Zero();
};

// A recognized or tracked grid observation. Points are kept sorted by
// circle_index; complete means every circle of the board is present.
struct GridPattern {
  double timestamp = 0.0;
  std::vector<PatternPoint> points;
  bool complete = false;
};

// Throws InvalidArgumentError unless indices are unique, sorted, in range,
// board points match board_object_points, and the complete flag matches the
// point count.
void validate_pattern(const GridPattern& pattern, const BoardSpec& spec);

// Time-ordered patterns of one camera.
struct PatternTrack {
  std::vector<GridPattern> patterns;

  int size() const { return static_cast<int>(patterns.size()); }
  int complete_count() const;
};

// Componentwise quadratic interpolation/extrapolation through three timed
// samples. Throws InvalidArgumentError on duplicate sample times.
Eigen::Vector2d lagrange_predict(const std::array<std::pair<double, Eigen::Vector2d>, 3>& samples,
                                 double tau_query);

int default_min_points(const BoardSpec& spec);  // max(5, ceil(0.3 * rows * cols))

// One accepted circle association made while tracking; kept for auditing the
// distance bound.
struct AssociationRecord {
  double frame_timestamp = 0.0;
  int circle_index = 0;
  double prediction_error = 0.0;  // px, predicted center to matched ellipse
};

// Motion-prior recovery of grid patterns in frames where recognition failed.
// Every circle seen in three consecutive track entries is predicted into
// nearby ellipse frames (offset grows only while both sweep directions
// stall), greedily matched within d_thd, and frames that gather at least
// min_points circles join the track; repeats until a fixed point. Returns the
// merged track; input patterns pass through untouched.
PatternTrack track_incomplete(const PatternTrack& complete_patterns,
                              const std::vector<EllipseFrame>& ellipse_frames, double d_thd,
                              int min_points, int max_prediction_offset = 5,
                              std::vector<AssociationRecord>* associations = nullptr);

// 0 if track_a has at least as many patterns as track_b, else 1. Throws
// InsufficientDataError when either track is empty.
int select_reference(const PatternTrack& track_a, const PatternTrack& track_b);

}  // namespace stcalib
