#include "stcalib/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stcalib/errors.hpp"

namespace stcalib {

namespace {

constexpr double kPi = 3.14159265358979323846;

double sinusoid_sum(const std::vector<SinusoidTerm>& terms, double tau) {
  double s = 0.0;
  for (const auto& term : terms) {
    s += term.amplitude * std::sin(2.0 * kPi * term.frequency_hz * tau + term.phase);
  }
  return s;
}

void validate_terms(const std::vector<SinusoidTerm>& terms, const char* what) {
  for (const auto& term : terms) {
    if (!std::isfinite(term.amplitude) || !std::isfinite(term.frequency_hz) ||
        !std::isfinite(term.phase)) {
      throw InvalidArgumentError(std::string(what) + " sinusoid has non-finite parameters");
    }
    if (term.frequency_hz < 0.0) {
      throw InvalidArgumentError(std::string(what) + " sinusoid frequency is negative");
    }
  }
}

}  // namespace

uint64_t Rng::next_u64() {
  // splitmix64: tiny, fast, and identical everywhere.
  state_ += 0x9e3779b97f4a7c15ull;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::gaussian() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(1.0 - u1));  // 1-u1 in (0,1]
  const double angle = 2.0 * kPi * u2;
  cached_ = radius * std::sin(angle);
  has_cached_ = true;
  return radius * std::cos(angle);
}

uint64_t Rng::integer(uint64_t bound) {
  if (bound == 0) {
    throw InvalidArgumentError("Rng::integer bound must be positive");
  }
  // Modulo bias is negligible for the small bounds used here and keeps the
  // draw count independent of the value stream.
  return next_u64() % bound;
}

void ScenarioSpec::validate() const {
  if (id.empty()) {
    throw InvalidArgumentError("scenario id must not be empty");
  }
  board.validate();
  for (const auto& intr : intrinsics) {
    intr.validate();
  }
  if (!extrinsic_translation.allFinite()) {
    throw InvalidArgumentError("extrinsic translation must be finite");
  }
  if (!std::isfinite(clock_shift)) {
    throw InvalidArgumentError("clock shift must be finite");
  }
  for (int axis = 0; axis < 3; ++axis) {
    validate_terms(trajectory.position[axis], "position");
    validate_terms(trajectory.orientation[axis], "orientation");
  }
  if (!std::isfinite(trajectory.standoff) || trajectory.standoff <= 0.0) {
    throw InvalidArgumentError("standoff must be positive");
  }
  if (!std::isfinite(duration) || duration <= 0.0) {
    throw InvalidArgumentError("duration must be positive");
  }
  if (!std::isfinite(frame_rate_hz) || frame_rate_hz <= 0.0) {
    throw InvalidArgumentError("frame rate must be positive");
  }
  if (!std::isfinite(pixel_noise_sigma) || pixel_noise_sigma < 0.0) {
    throw InvalidArgumentError("pixel noise sigma must be non-negative");
  }
  if (!std::isfinite(dropout.bernoulli_rate) || dropout.bernoulli_rate < 0.0 ||
      dropout.bernoulli_rate >= 1.0) {
    throw InvalidArgumentError("dropout rate must lie in [0, 1)");
  }
  if (!std::isfinite(dropout.oblique_cutoff_deg) || dropout.oblique_cutoff_deg <= 0.0 ||
      dropout.oblique_cutoff_deg > 90.0) {
    throw InvalidArgumentError("oblique cutoff must lie in (0, 90] degrees");
  }
  if (frame_count() < 3) {
    throw InvalidArgumentError("scenario produces fewer than 3 frames");
  }
}

int ScenarioSpec::frame_count() const {
  return static_cast<int>(std::floor(duration * frame_rate_hz + 1e-9));
}

Pose ScenarioSpec::reference_pose(double tau) const {
  const auto object = board_object_points(board);
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  for (const auto& p : object) {
    center += p;
  }
  center /= static_cast<double>(object.size());

  Eigen::Vector3d position = center + Eigen::Vector3d(0.0, 0.0, trajectory.standoff);
  Eigen::Vector3d wobble;
  for (int axis = 0; axis < 3; ++axis) {
    position[axis] += sinusoid_sum(trajectory.position[axis], tau);
    wobble[axis] = sinusoid_sum(trajectory.orientation[axis], tau);
  }

  // Hover attitude: camera forward axis points down at the board, image x
  // stays aligned with board x.
  Eigen::Matrix3d hover;
  hover << 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0;
  const Rotation rotation = Rotation::from_matrix(hover) * so3_exp(wobble);
  return Pose{rotation, position};
}

GroundTruthBundle generate(const ScenarioSpec& spec) {
  spec.validate();

  const auto object = board_object_points(spec.board);
  const int n_circles = static_cast<int>(object.size());
  const int n_frames = spec.frame_count();
  const double dt = 1.0 / spec.frame_rate_hz;
  const double cos_cutoff = std::cos(spec.dropout.oblique_cutoff_deg * kPi / 180.0);
  const Pose extrinsic{spec.extrinsic_rotation, spec.extrinsic_translation};

  GroundTruthBundle bundle;
  bundle.spec = spec;
  bundle.truth.rotation = spec.extrinsic_rotation;
  bundle.truth.translation = spec.extrinsic_translation;
  bundle.truth.time_offset = spec.clock_shift;

  Rng rng(spec.seed);
  int fully_visible = 0;

  struct Survivor {
    int circle;
    Eigen::Vector2d pixel;
  };
  std::vector<Survivor> survivors;
  survivors.reserve(static_cast<size_t>(n_circles));

  for (int f = 0; f < n_frames; ++f) {
    const double tau = static_cast<double>(f) * dt;
    const Pose pose0 = spec.reference_pose(tau);
    const std::array<Pose, 2> poses = {pose0, pose0 * extrinsic};
    bool both_geometric_full = true;

    for (int cam = 0; cam < 2; ++cam) {
      const Pose world_to_cam = poses[cam].inverse();
      const auto& intr = spec.intrinsics[cam];
      const Eigen::Vector3d cam_position = poses[cam].translation;
      survivors.clear();
      int geometric = 0;

      for (int j = 0; j < n_circles; ++j) {
        const Eigen::Vector3d p_cam = world_to_cam * object[j];
        if (p_cam.z() <= 1e-6) {
          continue;
        }
        // The board normal is world +z; reject grazing views.
        const Eigen::Vector3d ray = object[j] - cam_position;
        const double cos_incidence = std::abs(ray.z()) / ray.norm();
        if (cos_incidence < cos_cutoff) {
          continue;
        }
        Eigen::Vector2d pixel;
        try {
          pixel = project(p_cam, intr);
        } catch (const BehindCameraError&) {
          continue;
        }
        if (!intr.in_sensor(pixel)) {
          continue;
        }
        ++geometric;
        if (spec.dropout.bernoulli_rate > 0.0 && rng.uniform() < spec.dropout.bernoulli_rate) {
          continue;
        }
        if (spec.pixel_noise_sigma > 0.0) {
          pixel.x() += spec.pixel_noise_sigma * rng.gaussian();
          pixel.y() += spec.pixel_noise_sigma * rng.gaussian();
        }
        survivors.push_back({j, pixel});
      }

      if (geometric != n_circles) {
        both_geometric_full = false;
      }

      // Camera 1 runs on its own clock, behind the reference by clock_shift.
      const double stamp = cam == 0 ? tau : tau - spec.clock_shift;

      if (static_cast<int>(survivors.size()) == n_circles) {
        GridPattern pattern;
        pattern.timestamp = stamp;
        pattern.points.reserve(survivors.size());
        for (const auto& s : survivors) {
          pattern.points.push_back({s.circle, s.pixel, object[s.circle]});
        }
        pattern.complete = true;
        bundle.cameras[cam].complete.patterns.push_back(std::move(pattern));
      }

      if (!survivors.empty()) {
        rng.shuffle(survivors);
        EllipseFrame frame;
        frame.timestamp = stamp;
        frame.centers.reserve(survivors.size());
        for (const auto& s : survivors) {
          frame.centers.push_back(s.pixel);
        }
        bundle.cameras[cam].frames.push_back(std::move(frame));
      }
    }

    if (both_geometric_full) {
      ++fully_visible;
    }
  }

  if (fully_visible < static_cast<int>(std::ceil(0.6 * n_frames))) {
    throw ScenarioError("board leaves the cameras' view too often: fully visible in " +
                        std::to_string(fully_visible) + " of " + std::to_string(n_frames) +
                        " frames");
  }

  return bundle;
}

ErrorMetrics evaluate(const SpatiotemporalParams& estimated, int reference_camera,
                      const SpatiotemporalParams& truth) {
  if (reference_camera != 0 && reference_camera != 1) {
    throw InvalidArgumentError("reference camera must be 0 or 1");
  }
  SpatiotemporalParams expected = truth;
  if (reference_camera == 1) {
    expected.rotation = truth.rotation.inverse();
    expected.translation = -(expected.rotation * truth.translation);
    expected.time_offset = -truth.time_offset;
  }

  const Rotation error_rotation = expected.rotation.inverse() * estimated.rotation;
  ErrorMetrics metrics;
  metrics.geodesic_deg = expected.rotation.angle_to(estimated.rotation) * 180.0 / kPi;
  metrics.euler_error_deg = euler_xyz(error_rotation) * 180.0 / kPi;
  metrics.translation_error_cm = (estimated.translation - expected.translation) * 100.0;
  metrics.offset_error_ms = (estimated.time_offset - expected.time_offset) * 1000.0;
  return metrics;
}

}  // namespace stcalib
