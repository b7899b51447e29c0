#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stcalib/geometry.hpp"
#include "stcalib/initialization.hpp"
#include "stcalib/tracking.hpp"

namespace stcalib {

// Deterministic random source: one engine, fixed draw order, so a scenario
// replays bit-identically from its seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed == 0 ? 0x9e3779b97f4a7c15ull : seed) {}

  uint64_t next_u64();
  double uniform();                 // [0, 1)
  double gaussian();                // standard normal
  uint64_t integer(uint64_t bound); // [0, bound)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<size_t>(integer(i))]);
    }
  }

 private:
  uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

struct SinusoidTerm {
  double amplitude = 0.0;
  double frequency_hz = 0.0;
  double phase = 0.0;  // radians
};

// Reference-camera motion: a hover pose above the board center (looking at
// the board) plus per-axis sums of sinusoids on position and on the
// orientation wobble applied on the right of the hover attitude.
struct TrajectoryRecipe {
  std::array<std::vector<SinusoidTerm>, 3> position;     // meters
  std::array<std::vector<SinusoidTerm>, 3> orientation;  // radians
  double standoff = 0.5;                                 // meters above the board center
};

struct DropoutModel {
  double bernoulli_rate = 0.0;      // independent per-circle drop probability
  double oblique_cutoff_deg = 65.0; // drop when the view ray grazes the board
};

struct ScenarioSpec {
  std::string id;  // carried through detection files and reports
  BoardSpec board;
  std::array<CameraIntrinsics, 2> intrinsics;
  Rotation extrinsic_rotation;  // camera 1 expressed in camera 0
  Eigen::Vector3d extrinsic_translation = Eigen::Vector3d::Zero();
  double clock_shift = 0.0;  // seconds subtracted from camera 1 timestamps
  TrajectoryRecipe trajectory;
  double duration = 0.0;     // seconds
  double frame_rate_hz = 0.0;
  double pixel_noise_sigma = 0.0;
  DropoutModel dropout;
  uint64_t seed = 1;

  void validate() const;
  int frame_count() const;
  // Analytic camera-0 pose (camera-in-world) at reference-clock tau.
  Pose reference_pose(double tau) const;
};

struct CameraStream {
  std::vector<EllipseFrame> frames;  // every frame with at least one survivor
  PatternTrack complete;             // frames where all circles survived
};

struct GroundTruthBundle {
  ScenarioSpec spec;
  std::array<CameraStream, 2> cameras;
  SpatiotemporalParams truth;  // camera 1 w.r.t. camera 0; offset = +clock_shift
};

// Projects the board through both cameras at every frame time, applies FOV
// clipping, the oblique cutoff, Bernoulli dropout, and pixel noise, and
// relabels camera 1 timestamps by -clock_shift. Throws ScenarioError when the
// board is fully visible in fewer than 60% of frames.
GroundTruthBundle generate(const ScenarioSpec& spec);

struct ErrorMetrics {
  double geodesic_deg = 0.0;
  Eigen::Vector3d euler_error_deg = Eigen::Vector3d::Zero();  // display convention
  Eigen::Vector3d translation_error_cm = Eigen::Vector3d::Zero();
  double offset_error_ms = 0.0;
};

// Errors of an estimate against the scenario truth. reference_camera tells
// which input camera the calibration treated as reference; with camera 1 the
// truth transform is inverted to match the estimate's direction.
ErrorMetrics evaluate(const SpatiotemporalParams& estimated, int reference_camera,
                      const SpatiotemporalParams& truth);

}  // namespace stcalib
