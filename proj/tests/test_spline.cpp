#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "stcalib/errors.hpp"
#include "stcalib/spline.hpp"
#include "support/oracles.hpp"

using namespace stcalib;

namespace {

std::vector<Eigen::Vector3d> random_positions(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<Eigen::Vector3d> cps(static_cast<size_t>(n));
  for (auto& p : cps) p = Eigen::Vector3d(g(rng), g(rng), g(rng));
  return cps;
}

Rotation random_rotation(std::mt19937_64& rng, double max_angle = 3.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Vector3d axis(u(rng), u(rng), u(rng));
  while (axis.norm() < 1e-6) axis = Eigen::Vector3d(u(rng), u(rng), u(rng));
  axis.normalize();
  std::uniform_real_distribution<double> a(0.0, max_angle);
  return so3_exp(a(rng) * axis);
}

// Control points tracing a smooth rotation path (increments well below pi).
std::vector<Rotation> smooth_rotation_cps(std::mt19937_64& rng, int n, double step = 0.25) {
  std::vector<Rotation> cps;
  cps.reserve(static_cast<size_t>(n));
  Rotation q = random_rotation(rng);
  std::uniform_real_distribution<double> u(-step, step);
  for (int j = 0; j < n; ++j) {
    cps.push_back(q);
    q = q * so3_exp(Eigen::Vector3d(u(rng), u(rng), u(rng)));
  }
  return cps;
}

}  // namespace

TEST_CASE("cumulative basis boundary values and domain") {
  const Eigen::Vector3d l0 = cumulative_basis(0.0);
  CHECK(l0[0] == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
  CHECK(l0[1] == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  CHECK(l0[2] == doctest::Approx(0.0).epsilon(1e-15));

  // Approaching u = 1 the weights must flow into the u = 0 weights of the
  // next interval, which is what makes the spline continuous across knots.
  const double u_end = std::nextafter(1.0, 0.0);
  const Eigen::Vector3d l1 = cumulative_basis(u_end);
  CHECK(l1[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(l1[1] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(l1[2] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));

  CHECK_THROWS_AS(cumulative_basis(-1e-12), InvalidArgumentError);
  CHECK_THROWS_AS(cumulative_basis(1.0), InvalidArgumentError);
  CHECK_THROWS_AS(cumulative_basis_derivative(1.0), InvalidArgumentError);
}

TEST_CASE("position spline matches de Boor recursion") {
  std::mt19937_64 rng(101);
  const double start = 0.3, dt = 0.07;
  const int n = 12;
  const auto cps = random_positions(rng, n);
  const PositionSpline spline(start, dt, cps);

  std::uniform_real_distribution<double> pick(spline.t_min(), spline.t_max());
  double worst = 0.0;
  for (int k = 0; k < 2000; ++k) {
    const double tau = std::min(pick(rng), std::nextafter(spline.t_max(), 0.0));
    const Eigen::Vector3d got = spline.position(tau);
    const Eigen::Vector3d want = oracles::de_boor_position(start, dt, cps, tau);
    worst = std::max(worst, (got - want).norm());
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("position spline knot identities") {
  std::mt19937_64 rng(202);
  const double start = -1.25, dt = 0.05;
  const int n = 9;
  const auto cps = random_positions(rng, n, 2.0);
  const PositionSpline spline(start, dt, cps);

  for (int i = 1; i <= n - 3; ++i) {
    const double ti = start + i * dt;
    // Value at a knot blends the three neighbouring control points 1:4:1.
    const Eigen::Vector3d expected =
        (cps[static_cast<size_t>(i - 1)] + 4.0 * cps[static_cast<size_t>(i)] +
         cps[static_cast<size_t>(i + 1)]) /
        6.0;
    CHECK((spline.position(ti) - expected).norm() <= 1e-12);
    // Velocity at a knot is the centered difference of the neighbours.
    const Eigen::Vector3d vel_expected =
        (cps[static_cast<size_t>(i + 1)] - cps[static_cast<size_t>(i - 1)]) / (2.0 * dt);
    CHECK((spline.velocity(ti) - vel_expected).norm() <= 1e-9);
  }
}

TEST_CASE("position spline velocity matches finite differences") {
  std::mt19937_64 rng(303);
  const PositionSpline spline(0.0, 0.1, random_positions(rng, 10));
  std::uniform_real_distribution<double> pick(spline.t_min() + 1e-5, spline.t_max() - 1e-5);
  for (int k = 0; k < 200; ++k) {
    const double tau = pick(rng);
    const Eigen::Vector3d got = spline.velocity(tau);
    const Eigen::Vector3d want = oracles::fd_position_velocity(spline, tau);
    CHECK((got - want).norm() <= 1e-6 * std::max(1.0, got.norm()));
  }
}

TEST_CASE("position spline valid interval is half open") {
  std::mt19937_64 rng(404);
  const PositionSpline spline(2.0, 0.25, random_positions(rng, 6));
  CHECK(spline.t_min() == doctest::Approx(2.25));
  CHECK(spline.t_max() == doctest::Approx(3.0));

  CHECK_NOTHROW(spline.position(spline.t_min()));
  CHECK_NOTHROW(spline.position(std::nextafter(spline.t_max(), 0.0)));
  CHECK_THROWS_AS(spline.position(spline.t_max()), OutOfIntervalError);
  CHECK_THROWS_AS(spline.position(spline.t_min() - 1e-9), OutOfIntervalError);
  CHECK_THROWS_AS(spline.position(std::nan("")), OutOfIntervalError);
}

TEST_CASE("evaluate_in_span agrees with evaluate and survives edge rounding") {
  std::mt19937_64 rng(505);
  const double start = 10.0, dt = 0.05;
  const int n = 10;
  const auto cps = random_positions(rng, n);
  const PositionSpline spline(start, dt, cps);

  std::uniform_real_distribution<double> pick(spline.t_min(), spline.t_max());
  for (int k = 0; k < 500; ++k) {
    const double tau = std::min(pick(rng), std::nextafter(spline.t_max(), 0.0));
    const PositionSplineEval ref = spline.evaluate(tau);
    const PositionSplineEval pinned = spline.evaluate_in_span(ref.base + 1, tau);
    CHECK(pinned.base == ref.base);
    CHECK((pinned.value - ref.value).norm() <= 1e-15);
  }

  // At an interior knot both adjacent spans are acceptable and agree.
  const double knot = start + 4 * dt;
  const Eigen::Vector3d left = spline.evaluate_in_span(3, knot).value;
  const Eigen::Vector3d right = spline.evaluate_in_span(4, knot).value;
  CHECK((left - right).norm() <= 1e-12);

  // A query a hair outside the span clamps instead of throwing.
  CHECK_NOTHROW(spline.evaluate_in_span(4, knot - 1e-12));
  CHECK_NOTHROW(spline.evaluate_in_span(3, knot + 1e-12));
  CHECK((spline.evaluate_in_span(4, knot - 1e-12).value - right).norm() <= 1e-9);

  CHECK_THROWS_AS(spline.evaluate_in_span(0, knot), InvalidArgumentError);
  CHECK_THROWS_AS(spline.evaluate_in_span(n - 2, knot), InvalidArgumentError);
}

TEST_CASE("spline construction rejects bad arguments") {
  std::mt19937_64 rng(606);
  CHECK_THROWS_AS(PositionSpline(0.0, 0.0, random_positions(rng, 6)), InvalidArgumentError);
  CHECK_THROWS_AS(PositionSpline(0.0, -0.1, random_positions(rng, 6)), InvalidArgumentError);
  CHECK_THROWS_AS(PositionSpline(0.0, 0.1, random_positions(rng, 3)), InvalidArgumentError);
  CHECK_NOTHROW(PositionSpline(0.0, 0.1, random_positions(rng, 4)));
}

TEST_CASE("rotation spline with constant control points is constant") {
  std::mt19937_64 rng(707);
  const Rotation q = random_rotation(rng);
  const RotationSpline spline(0.0, 0.2, std::vector<Rotation>(8, q));
  for (double tau = spline.t_min(); tau < spline.t_max(); tau += 0.11) {
    CHECK(spline.rotation(tau).angle_to(q) <= 1e-14);
    CHECK(spline.angular_velocity(tau).norm() <= 1e-12);
  }
}

TEST_CASE("rotation spline reproduces constant rate screw motion") {
  const Eigen::Vector3d w(0.4, -0.2, 0.7);  // body rate, rad/s
  const double dt = 0.1;
  std::vector<Rotation> cps;
  Rotation q = so3_exp(Eigen::Vector3d(0.1, 0.2, -0.3));
  for (int j = 0; j < 10; ++j) {
    cps.push_back(q * so3_exp(Eigen::Vector3d(j * dt * w)));
  }
  const RotationSpline spline(0.0, dt, cps);
  for (double tau = spline.t_min(); tau < spline.t_max() - 1e-9; tau += 0.033) {
    CHECK((spline.angular_velocity(tau) - w).norm() <= 1e-10);
    // Relative rotation over a step matches the screw increment.
    const double h = 0.05;
    if (tau + h < spline.t_max()) {
      const Rotation rel = spline.rotation(tau).inverse() * spline.rotation(tau + h);
      CHECK(rel.angle_to(so3_exp(h * w)) <= 1e-10);
    }
  }
}

TEST_CASE("rotation spline is left invariant") {
  std::mt19937_64 rng(808);
  const auto cps = smooth_rotation_cps(rng, 9);
  const RotationSpline spline(1.0, 0.08, cps);

  const Rotation q = random_rotation(rng);
  std::vector<Rotation> moved;
  for (const auto& cp : cps) moved.push_back(q * cp);
  const RotationSpline spline_moved(1.0, 0.08, moved);

  std::uniform_real_distribution<double> pick(spline.t_min(), spline.t_max());
  for (int k = 0; k < 300; ++k) {
    const double tau = std::min(pick(rng), std::nextafter(spline.t_max(), 0.0));
    const Rotation expected = q * spline.rotation(tau);
    CHECK(spline_moved.rotation(tau).angle_to(expected) <= 1e-12);
  }
}

TEST_CASE("rotation spline velocity matches finite differences") {
  std::mt19937_64 rng(909);
  const RotationSpline spline(0.0, 0.1, smooth_rotation_cps(rng, 10));
  std::uniform_real_distribution<double> pick(spline.t_min() + 1e-4, spline.t_max() - 1e-4);
  for (int k = 0; k < 100; ++k) {
    const double tau = pick(rng);
    const Eigen::Vector3d got = spline.angular_velocity(tau);
    const Eigen::Vector3d want = oracles::fd_angular_velocity(spline, tau);
    CHECK((got - want).norm() <= 1e-6 * std::max(1.0, got.norm()));
  }
}

TEST_CASE("rotation spline knot jacobians match finite differences") {
  std::mt19937_64 rng(1010);
  const RotationSpline spline(0.0, 0.1, smooth_rotation_cps(rng, 7));
  std::uniform_real_distribution<double> pick(spline.t_min() + 1e-3, spline.t_max() - 1e-3);
  for (int k = 0; k < 25; ++k) {
    const double tau = pick(rng);
    const RotationSplineEval eval = spline.evaluate(tau, true, false);
    for (int m = 0; m < 4; ++m) {
      const Eigen::Matrix3d fd =
          oracles::fd_knot_jacobian(spline, tau, eval.base + m);
      const Eigen::Matrix3d got = eval.knot_jacobians[static_cast<size_t>(m)];
      CHECK((got - fd).norm() <= 5e-6);
    }
  }
}

TEST_CASE("rotation spline value is continuous across knots") {
  std::mt19937_64 rng(1111);
  const RotationSpline spline(0.0, 0.1, smooth_rotation_cps(rng, 9));
  for (int i = 2; i <= 6; ++i) {
    const double knot = 0.0 + i * 0.1;
    const Rotation before = spline.rotation(std::nextafter(knot, 0.0));
    const Rotation at = spline.rotation(knot);
    CHECK(before.angle_to(at) <= 1e-12);
  }
}

TEST_CASE("rotation spline evaluate_in_span agrees with evaluate") {
  std::mt19937_64 rng(1212);
  const RotationSpline spline(0.0, 0.1, smooth_rotation_cps(rng, 9));
  std::uniform_real_distribution<double> pick(spline.t_min(), spline.t_max());
  for (int k = 0; k < 200; ++k) {
    const double tau = std::min(pick(rng), std::nextafter(spline.t_max(), 0.0));
    const RotationSplineEval ref = spline.evaluate(tau, true, true);
    const RotationSplineEval pinned = spline.evaluate_in_span(ref.base + 1, tau, true, true);
    CHECK(pinned.base == ref.base);
    CHECK(pinned.value.angle_to(ref.value) <= 1e-15);
    CHECK((pinned.angular_velocity - ref.angular_velocity).norm() <= 1e-15);
    for (int m = 0; m < 4; ++m) {
      CHECK((pinned.knot_jacobians[static_cast<size_t>(m)] -
             ref.knot_jacobians[static_cast<size_t>(m)])
                .norm() <= 1e-15);
    }
  }
}

TEST_CASE("trajectory segment validates its interval") {
  std::mt19937_64 rng(1313);
  RotationSpline rot(0.0, 0.1, smooth_rotation_cps(rng, 8));
  PositionSpline pos(0.0, 0.1, random_positions(rng, 8));
  // Splines valid on [0.1, 0.6).
  CHECK_NOTHROW(TrajectorySegment(rot, pos, 0.1, 0.6));
  CHECK_THROWS_AS(TrajectorySegment(rot, pos, 0.05, 0.5), InvalidArgumentError);
  CHECK_THROWS_AS(TrajectorySegment(rot, pos, 0.1, 0.65), InvalidArgumentError);
  CHECK_THROWS_AS(TrajectorySegment(rot, pos, 0.4, 0.4), InvalidArgumentError);

  TrajectorySegment seg(rot, pos, 0.15, 0.55);
  CHECK(seg.contains(0.15));
  CHECK(seg.contains(0.549999));
  CHECK_FALSE(seg.contains(0.55));
  CHECK_NOTHROW(seg.pose(0.3));
  CHECK_THROWS_AS(seg.pose(0.56), OutOfIntervalError);
  CHECK(seg.pose(0.3).rotation.angle_to(rot.rotation(0.3)) <= 1e-15);
}

TEST_CASE("piecewise trajectory lookup and overlap rejection") {
  std::mt19937_64 rng(1414);
  auto make_segment = [&](double start) {
    RotationSpline rot(start, 0.1, smooth_rotation_cps(rng, 8));
    PositionSpline pos(start, 0.1, random_positions(rng, 8));
    return TrajectorySegment(rot, pos, start + 0.1, start + 0.6);
  };

  // Supplied out of order on purpose; the trajectory sorts by start.
  std::vector<TrajectorySegment> segs;
  segs.push_back(make_segment(2.0));
  segs.push_back(make_segment(0.0));
  const PiecewiseTrajectory traj(segs);
  CHECK(traj.segments().size() == 2);
  CHECK(traj.segments()[0].t_min() < traj.segments()[1].t_min());

  CHECK(traj.segment_for(0.3) == 0);
  CHECK(traj.segment_for(2.3) == 1);
  CHECK(traj.segment_for(1.0) == -1);   // in the gap
  CHECK(traj.segment_for(5.0) == -1);   // past the end
  CHECK(traj.try_pose(1.0) == std::nullopt);
  CHECK(traj.try_pose(0.3).has_value());
  CHECK_THROWS_AS(traj.pose(1.0), OutOfIntervalError);

  std::vector<TrajectorySegment> overlapping;
  overlapping.push_back(make_segment(0.0));
  overlapping.push_back(make_segment(0.2));
  CHECK_THROWS_AS(PiecewiseTrajectory(std::move(overlapping)), InvalidArgumentError);
}
