#include "stcalib/tracking.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stcalib/errors.hpp"

namespace stcalib {

void BoardSpec::validate() const {
  if (rows < 2 || cols < 2) {
    throw InvalidArgumentError("board needs at least 2x2 circles");
  }
  if (!(spacing > 0.0) || !std::isfinite(spacing)) {
    throw InvalidArgumentError("board spacing must be positive and finite");
  }
}

std::vector<Eigen::Vector3d> board_object_points(const BoardSpec& spec) {
  spec.validate();
  std::vector<Eigen::Vector3d> points;
  points.reserve(static_cast<size_t>(spec.circle_count()));
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      points.emplace_back(c * spec.spacing, (2 * r + c % 2) * spec.spacing / 2.0, 0.0);
    }
  }
  return points;
}

void validate_pattern(const GridPattern& pattern, const BoardSpec& spec) {
  const auto board = board_object_points(spec);
  if (pattern.points.empty()) {
    throw InvalidArgumentError("pattern has no points");
  }
  if (!std::isfinite(pattern.timestamp)) {
    throw InvalidArgumentError("pattern timestamp must be finite");
  }
  int prev = -1;
  for (const auto& p : pattern.points) {
    if (p.circle_index <= prev) {
      throw InvalidArgumentError("pattern circle indices must be strictly increasing");
    }
    if (p.circle_index >= spec.circle_count()) {
      throw InvalidArgumentError("circle index out of range for the board");
    }
    if (!p.image_point.allFinite()) {
      throw InvalidArgumentError("non-finite image point in pattern");
    }
    if ((p.board_point - board[static_cast<size_t>(p.circle_index)]).norm() > 1e-12) {
      throw InvalidArgumentError("board point does not match the board layout");
    }
    prev = p.circle_index;
  }
  bool full = static_cast<int>(pattern.points.size()) == spec.circle_count();
  if (pattern.complete != full) {
    throw InvalidArgumentError("complete flag inconsistent with point count");
  }
}

int PatternTrack::complete_count() const {
  return static_cast<int>(
      std::count_if(patterns.begin(), patterns.end(), [](const GridPattern& g) { return g.complete; }));
}

Eigen::Vector2d lagrange_predict(const std::array<std::pair<double, Eigen::Vector2d>, 3>& samples,
                                 double tau_query) {
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      if (samples[static_cast<size_t>(a)].first == samples[static_cast<size_t>(b)].first) {
        throw InvalidArgumentError("lagrange samples need distinct timestamps");
      }
    }
  }
  Eigen::Vector2d out = Eigen::Vector2d::Zero();
  for (int k = 0; k < 3; ++k) {
    double w = 1.0;
    for (int l = 0; l < 3; ++l) {
      if (l == k) continue;
      w *= (tau_query - samples[static_cast<size_t>(l)].first) /
           (samples[static_cast<size_t>(k)].first - samples[static_cast<size_t>(l)].first);
    }
    out += w * samples[static_cast<size_t>(k)].second;
  }
  return out;
}

int default_min_points(const BoardSpec& spec) {
  spec.validate();
  return std::max(5, static_cast<int>(std::ceil(0.3 * spec.circle_count())));
}

namespace {

struct Tracker {
  std::vector<GridPattern> track;
  const std::vector<EllipseFrame>& frames;
  double d_thd;
  int min_points;
  int full_count;  // points in a complete pattern; INT_MAX when unknown
  std::vector<double> frame_times;
  std::vector<char> occupied;
  std::vector<AssociationRecord>* associations;

  Tracker(const PatternTrack& input, const std::vector<EllipseFrame>& ellipse_frames,
          double d_thd_, int min_points_, std::vector<AssociationRecord>* assoc)
      : frames(ellipse_frames), d_thd(d_thd_), min_points(min_points_), associations(assoc) {
    track = input.patterns;
    full_count = std::numeric_limits<int>::max();
    for (const auto& g : track) {
      if (g.complete) {
        full_count = static_cast<int>(g.points.size());
        break;
      }
    }
    frame_times.reserve(frames.size());
    for (const auto& f : frames) {
      if (!frame_times.empty() && f.timestamp <= frame_times.back()) {
        throw InvalidArgumentError("ellipse frames must have strictly increasing timestamps");
      }
      frame_times.push_back(f.timestamp);
    }
    occupied.assign(frames.size(), 0);
    for (const auto& g : track) {
      int f = exact_frame(g.timestamp);
      if (f >= 0) occupied[static_cast<size_t>(f)] = 1;
    }
  }

  int exact_frame(double t) const {
    auto it = std::lower_bound(frame_times.begin(), frame_times.end(), t);
    if (it != frame_times.end() && *it == t) {
      return static_cast<int>(it - frame_times.begin());
    }
    return -1;
  }

  // Frame targeted by the triple starting at track index k, |i| = absi steps
  // past the triple along dir (absi = 2 is the adjacent frame).
  int target_frame(size_t k, int dir, int absi) const {
    if (dir > 0) {
      auto it = std::upper_bound(frame_times.begin(), frame_times.end(), track[k + 2].timestamp);
      return static_cast<int>(it - frame_times.begin()) + (absi - 2);
    }
    auto it = std::lower_bound(frame_times.begin(), frame_times.end(), track[k].timestamp);
    return static_cast<int>(it - frame_times.begin()) - 1 - (absi - 2);
  }

  std::optional<GridPattern> attempt(size_t k, int dir, int absi) {
    int target = target_frame(k, dir, absi);
    if (target < 0 || target >= static_cast<int>(frames.size()) ||
        occupied[static_cast<size_t>(target)]) {
      return std::nullopt;
    }
    const EllipseFrame& frame = frames[static_cast<size_t>(target)];
    if (frame.centers.empty()) return std::nullopt;

    // Circles present in all three patterns, predicted at the frame time.
    struct Candidate {
      int circle;
      Eigen::Vector2d predicted;
      Eigen::Vector3d board_point;
    };
    std::vector<Candidate> candidates;
    const auto& g0 = track[k];
    const auto& g1 = track[k + 1];
    const auto& g2 = track[k + 2];
    size_t i0 = 0, i1 = 0, i2 = 0;
    while (i0 < g0.points.size() && i1 < g1.points.size() && i2 < g2.points.size()) {
      int c0 = g0.points[i0].circle_index;
      int c1 = g1.points[i1].circle_index;
      int c2 = g2.points[i2].circle_index;
      int lead = std::max({c0, c1, c2});
      if (c0 == c1 && c1 == c2) {
        candidates.push_back(
            {c0,
             lagrange_predict({{{g0.timestamp, g0.points[i0].image_point},
                                {g1.timestamp, g1.points[i1].image_point},
                                {g2.timestamp, g2.points[i2].image_point}}},
                              frame.timestamp),
             g1.points[i1].board_point});
        ++i0, ++i1, ++i2;
        continue;
      }
      if (c0 < lead) ++i0;
      if (c1 < lead) ++i1;
      if (c2 < lead) ++i2;
    }
    if (static_cast<int>(candidates.size()) < min_points) return std::nullopt;

    // Greedy globally-nearest association, each ellipse consumed once.
    struct PairCand {
      double dist;
      int cand;
      int ellipse;
    };
    std::vector<PairCand> pairs;
    for (size_t ci = 0; ci < candidates.size(); ++ci) {
      for (size_t ei = 0; ei < frame.centers.size(); ++ei) {
        double d = (candidates[ci].predicted - frame.centers[ei]).norm();
        if (d <= d_thd) {
          pairs.push_back({d, static_cast<int>(ci), static_cast<int>(ei)});
        }
      }
    }
    std::sort(pairs.begin(), pairs.end(), [&](const PairCand& a, const PairCand& b) {
      if (a.dist != b.dist) return a.dist < b.dist;
      int ca = candidates[static_cast<size_t>(a.cand)].circle;
      int cb = candidates[static_cast<size_t>(b.cand)].circle;
      if (ca != cb) return ca < cb;
      return a.ellipse < b.ellipse;
    });
    std::vector<char> cand_used(candidates.size(), 0), ellipse_used(frame.centers.size(), 0);
    GridPattern out;
    out.timestamp = frame.timestamp;
    std::vector<double> pick_dist;
    for (const auto& pc : pairs) {
      if (cand_used[static_cast<size_t>(pc.cand)] || ellipse_used[static_cast<size_t>(pc.ellipse)]) {
        continue;
      }
      cand_used[static_cast<size_t>(pc.cand)] = 1;
      ellipse_used[static_cast<size_t>(pc.ellipse)] = 1;
      const auto& cand = candidates[static_cast<size_t>(pc.cand)];
      out.points.push_back(
          {cand.circle, frame.centers[static_cast<size_t>(pc.ellipse)], cand.board_point});
      pick_dist.push_back(pc.dist);
    }
    if (static_cast<int>(out.points.size()) < min_points) return std::nullopt;

    std::vector<size_t> order(out.points.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return out.points[a].circle_index < out.points[b].circle_index;
    });
    GridPattern sorted;
    sorted.timestamp = out.timestamp;
    for (size_t i : order) sorted.points.push_back(out.points[i]);
    sorted.complete = static_cast<int>(sorted.points.size()) == full_count;
    if (associations != nullptr) {
      for (size_t i : order) {
        associations->push_back(
            {frame.timestamp, out.points[i].circle_index, pick_dist[i]});
      }
    }
    return sorted;
  }

  bool sweep(int dir, int absi) {
    bool progress = false;
    for (size_t k = 0; k + 2 < track.size(); ++k) {
      auto cand = attempt(k, dir, absi);
      if (!cand) continue;
      auto it = std::upper_bound(
          track.begin(), track.end(), cand->timestamp,
          [](double t, const GridPattern& g) { return t < g.timestamp; });
      size_t ip = static_cast<size_t>(it - track.begin());
      occupied[static_cast<size_t>(exact_frame(cand->timestamp))] = 1;
      track.insert(it, std::move(*cand));
      progress = true;
      if (ip <= k) ++k;  // insertion landed before this triple; keep the scan aligned
    }
    return progress;
  }

  void run(int max_prediction_offset) {
    int absi = 2;
    while (absi <= max_prediction_offset) {
      bool fwd = sweep(+1, absi);
      bool bwd = sweep(-1, absi);
      absi = (fwd || bwd) ? 2 : absi + 1;
    }
  }
};

}  // namespace

PatternTrack track_incomplete(const PatternTrack& complete_patterns,
                              const std::vector<EllipseFrame>& ellipse_frames, double d_thd,
                              int min_points, int max_prediction_offset,
                              std::vector<AssociationRecord>* associations) {
  if (complete_patterns.patterns.empty()) {
    throw InsufficientDataError("tracking needs a nonempty pattern track");
  }
  if (!(d_thd > 0.0)) {
    throw InvalidArgumentError("association distance threshold must be positive");
  }
  if (min_points < 1) {
    throw InvalidArgumentError("min_points must be at least 1");
  }
  if (max_prediction_offset < 2) {
    throw InvalidArgumentError("max_prediction_offset must be at least 2");
  }
  for (size_t i = 0; i < complete_patterns.patterns.size(); ++i) {
    if (i > 0 && complete_patterns.patterns[i].timestamp <=
                     complete_patterns.patterns[i - 1].timestamp) {
      throw InvalidArgumentError("pattern track timestamps must be strictly increasing");
    }
    const auto& pts = complete_patterns.patterns[i].points;
    for (size_t j = 1; j < pts.size(); ++j) {
      if (pts[j].circle_index <= pts[j - 1].circle_index) {
        throw InvalidArgumentError("pattern points must be sorted by circle index");
      }
    }
  }

  Tracker tracker(complete_patterns, ellipse_frames, d_thd, min_points, associations);
  tracker.run(max_prediction_offset);
  PatternTrack out;
  out.patterns = std::move(tracker.track);
  return out;
}

int select_reference(const PatternTrack& track_a, const PatternTrack& track_b) {
  if (track_a.patterns.empty() || track_b.patterns.empty()) {
    throw InsufficientDataError("reference selection needs patterns from both cameras");
  }
  return track_b.size() > track_a.size() ? 1 : 0;
}

}  // namespace stcalib
