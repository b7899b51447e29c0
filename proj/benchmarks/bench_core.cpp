// Microbenchmarks for the numeric hot paths: camera projection, spline
// evaluation, planar pose recovery, incomplete-pattern tracking, spline
// fitting, scenario generation, and a full sparse solve of a linear chain.

#include <cmath>
#include <memory>
#include <vector>

#include <benchmark/benchmark.h>

#include <Eigen/Core>

#include "stcalib/geometry.hpp"
#include "stcalib/initialization.hpp"
#include "stcalib/nlls.hpp"
#include "stcalib/pnp.hpp"
#include "stcalib/simulator.hpp"
#include "stcalib/spline.hpp"
#include "stcalib/tracking.hpp"

namespace {

using namespace stcalib;

CameraIntrinsics bench_intrinsics() {
  CameraIntrinsics intr;
  intr.fx = 450.0;
  intr.fy = 452.0;
  intr.cx = 320.0;
  intr.cy = 240.0;
  intr.width = 640;
  intr.height = 480;
  intr.distortion = {-0.08, 0.03, 0.0002, -0.0001};
  return intr;
}

BoardSpec bench_board() {
  BoardSpec board;
  board.rows = 6;
  board.cols = 9;
  board.spacing = 0.04;
  return board;
}

ScenarioSpec bench_scenario(double duration, double rate, double dropout) {
  ScenarioSpec spec;
  spec.id = "bench";
  spec.board = bench_board();
  spec.intrinsics = {bench_intrinsics(), bench_intrinsics()};
  spec.extrinsic_rotation = so3_exp(Eigen::Vector3d(0.0035, 0.0087, 0.0017));
  spec.extrinsic_translation = Eigen::Vector3d(0.12, 0.0, 0.0);
  spec.clock_shift = 0.01;
  spec.trajectory.standoff = 0.65;
  spec.trajectory.position[0] = {{0.05, 0.31, 0.0}};
  spec.trajectory.position[1] = {{0.04, 0.23, 1.0}};
  spec.trajectory.position[2] = {{0.03, 0.17, 2.0}};
  spec.trajectory.orientation[0] = {{0.08, 0.21, 0.3}};
  spec.trajectory.orientation[1] = {{0.08, 0.27, 1.3}};
  spec.trajectory.orientation[2] = {{0.06, 0.13, 2.3}};
  spec.duration = duration;
  spec.frame_rate_hz = rate;
  spec.pixel_noise_sigma = 0.1;
  spec.dropout.bernoulli_rate = dropout;
  spec.seed = 17;
  return spec;
}

void project_point(benchmark::State& state) {
  const CameraIntrinsics intr = bench_intrinsics();
  const Eigen::Vector3d p_cam(0.08, -0.05, 0.65);
  Eigen::Matrix<double, 2, 3> jac;
  for (auto _ : state) {
    benchmark::DoNotOptimize(project(p_cam, intr, &jac));
    benchmark::DoNotOptimize(jac);
  }
}
BENCHMARK(project_point);

void spline_position_eval(benchmark::State& state) {
  std::vector<Eigen::Vector3d> cps;
  for (int j = 0; j < 64; ++j) {
    cps.emplace_back(std::sin(0.3 * j), std::cos(0.2 * j), 0.1 * j);
  }
  const PositionSpline spline(0.0, 0.05, cps);
  double tau = spline.t_min();
  const double step = (spline.t_max() - spline.t_min()) / 1024.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(spline.evaluate(tau));
    tau += step;
    if (tau >= spline.t_max()) {
      tau = spline.t_min();
    }
  }
}
BENCHMARK(spline_position_eval);

void spline_rotation_eval_with_jacobians(benchmark::State& state) {
  std::vector<Rotation> cps;
  Rotation walk;
  for (int j = 0; j < 64; ++j) {
    walk = walk * so3_exp(Eigen::Vector3d(0.02, 0.015 * std::sin(0.4 * j), -0.01));
    cps.push_back(walk);
  }
  const RotationSpline spline(0.0, 0.05, cps);
  double tau = spline.t_min();
  const double step = (spline.t_max() - spline.t_min()) / 1024.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(spline.evaluate(tau, true, true));
    tau += step;
    if (tau >= spline.t_max()) {
      tau = spline.t_min();
    }
  }
}
BENCHMARK(spline_rotation_eval_with_jacobians);

void pnp_full_board(benchmark::State& state) {
  const CameraIntrinsics intr = bench_intrinsics();
  const BoardSpec board = bench_board();
  const auto object = board_object_points(board);
  const Pose camera_in_world(so3_exp(Eigen::Vector3d(0.05, -0.04, 0.02)),
                             Eigen::Vector3d(0.16, 0.10, -0.65));
  const Pose world_in_camera = camera_in_world.inverse();

  GridPattern pattern;
  pattern.timestamp = 0.0;
  pattern.complete = true;
  for (int j = 0; j < board.circle_count(); ++j) {
    PatternPoint p;
    p.circle_index = j;
    p.board_point = object[static_cast<size_t>(j)];
    p.image_point = project(world_in_camera * p.board_point, intr);
    pattern.points.push_back(p);
  }

  for (auto _ : state) {
    benchmark::DoNotOptimize(solve_pnp(pattern, intr));
  }
}
BENCHMARK(pnp_full_board);

void track_dropout_stream(benchmark::State& state) {
  const ScenarioSpec spec = bench_scenario(8.0, 50.0, 0.011);
  const GroundTruthBundle bundle = generate(spec);
  const auto& stream = bundle.cameras[0];
  const int min_points = default_min_points(spec.board);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        track_incomplete(stream.complete, stream.frames, 3.0, min_points, 5, nullptr));
  }
}
BENCHMARK(track_dropout_stream)->Unit(benchmark::kMillisecond);

void fit_segment_two_seconds(benchmark::State& state) {
  std::vector<TimedPose> run;
  for (int k = 0; k <= 200; ++k) {
    const double t = 0.01 * k;
    TimedPose tp;
    tp.timestamp = t;
    tp.pattern_id = k;
    tp.pose.rotation = so3_exp(Eigen::Vector3d(0.08 * std::sin(1.3 * t),
                                               0.08 * std::cos(1.7 * t), 0.06 * std::sin(0.8 * t)));
    tp.pose.translation = Eigen::Vector3d(0.05 * std::sin(1.9 * t), 0.04 * std::cos(1.4 * t),
                                          0.65 + 0.03 * std::sin(1.1 * t));
    run.push_back(tp);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit_spline_segment(run, 0.05));
  }
}
BENCHMARK(fit_segment_two_seconds)->Unit(benchmark::kMillisecond);

void generate_short_scenario(benchmark::State& state) {
  const ScenarioSpec spec = bench_scenario(2.0, 50.0, 0.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate(spec));
  }
}
BENCHMARK(generate_short_scenario)->Unit(benchmark::kMillisecond);

class ChainResidual : public nlls::ResidualFunction {
 public:
  explicit ChainResidual(Eigen::Vector3d target) : target_(std::move(target)) {}

  int dimension() const override { return 3; }

  void evaluate(const nlls::BlockValues& values,
                Eigen::Ref<Eigen::VectorXd> residual) const override {
    residual = values.vec3(1) - values.vec3(0) - target_;
  }

  bool evaluate_with_jacobians(const nlls::BlockValues& values,
                               Eigen::Ref<Eigen::VectorXd> residual,
                               std::vector<Eigen::MatrixXd>& jacobians) const override {
    evaluate(values, residual);
    jacobians[0] = -Eigen::Matrix3d::Identity();
    jacobians[1] = Eigen::Matrix3d::Identity();
    return true;
  }

 private:
  Eigen::Vector3d target_;
};

class AnchorResidual : public nlls::ResidualFunction {
 public:
  int dimension() const override { return 3; }

  void evaluate(const nlls::BlockValues& values,
                Eigen::Ref<Eigen::VectorXd> residual) const override {
    residual = values.vec3(0);
  }

  bool evaluate_with_jacobians(const nlls::BlockValues& values,
                               Eigen::Ref<Eigen::VectorXd> residual,
                               std::vector<Eigen::MatrixXd>& jacobians) const override {
    evaluate(values, residual);
    jacobians[0] = Eigen::Matrix3d::Identity();
    return true;
  }
};

// One sparse normal-equation build + factorization + back-substitution on a
// 120-block banded chain, the same structure the trajectory refinement has.
void solve_linear_chain(benchmark::State& state) {
  for (auto _ : state) {
    state.PauseTiming();
    nlls::Problem problem;
    std::vector<int> blocks;
    for (int j = 0; j < 120; ++j) {
      blocks.push_back(problem.add_block("x" + std::to_string(j),
                                         Eigen::Vector3d(0.1 * j, -0.05 * j, 0.2)));
    }
    problem.add_residual("anchor", {blocks[0]}, std::make_shared<AnchorResidual>());
    for (size_t j = 0; j + 1 < blocks.size(); ++j) {
      problem.add_residual("chain", {blocks[j], blocks[j + 1]},
                           std::make_shared<ChainResidual>(Eigen::Vector3d(0.01, 0.02, -0.01)));
    }
    nlls::SolveOptions options;
    options.max_iterations = 1;
    state.ResumeTiming();
    benchmark::DoNotOptimize(nlls::solve(problem, options));
  }
}
BENCHMARK(solve_linear_chain)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
