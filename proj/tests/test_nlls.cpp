#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "stcalib/errors.hpp"
#include "stcalib/nlls.hpp"

using namespace stcalib;

namespace {

class LinearResidual final : public nlls::ResidualFunction {
 public:
  LinearResidual(Eigen::MatrixXd a, Eigen::VectorXd b) : a_(std::move(a)), b_(std::move(b)) {}

  int dimension() const override { return static_cast<int>(a_.rows()); }

  void evaluate(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r) const override {
    r = a_ * v.vec(0) - b_;
  }

  bool evaluate_with_jacobians(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r,
                               std::vector<Eigen::MatrixXd>& jac) const override {
    evaluate(v, r);
    jac[0] = a_;
    return true;
  }

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd b_;
};

// Classic banana-valley test function in least-squares form:
// r = (10 (y - x^2), 1 - x), minimum at (1, 1) with zero cost.
class BananaResidual final : public nlls::ResidualFunction {
 public:
  explicit BananaResidual(bool analytic) : analytic_(analytic) {}

  int dimension() const override { return 2; }

  void evaluate(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r) const override {
    const double x = v.vec(0)[0], y = v.vec(0)[1];
    r[0] = 10.0 * (y - x * x);
    r[1] = 1.0 - x;
  }

  bool evaluate_with_jacobians(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r,
                               std::vector<Eigen::MatrixXd>& jac) const override {
    if (!analytic_) return false;
    evaluate(v, r);
    const double x = v.vec(0)[0];
    jac[0] << -20.0 * x, 10.0, -1.0, 0.0;
    return true;
  }

 private:
  bool analytic_;
};

class ScalarOffsetResidual final : public nlls::ResidualFunction {
 public:
  explicit ScalarOffsetResidual(double target) : target_(target) {}
  int dimension() const override { return 1; }
  void evaluate(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r) const override {
    r[0] = v.scalar(0) - target_;
  }

 private:
  double target_;
};

class FixedResidual final : public nlls::ResidualFunction {
 public:
  explicit FixedResidual(Eigen::VectorXd value) : value_(std::move(value)) {}
  int dimension() const override { return static_cast<int>(value_.size()); }
  void evaluate(const nlls::BlockValues&, Eigen::Ref<Eigen::VectorXd> r) const override {
    r = value_;
  }

 private:
  Eigen::VectorXd value_;
};

// Couples two 1-d blocks: r = (x + y - 3).
class SumResidual final : public nlls::ResidualFunction {
 public:
  int dimension() const override { return 1; }
  void evaluate(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r) const override {
    r[0] = v.scalar(0) + v.scalar(1) - 3.0;
  }
};

class RotationAlignResidual final : public nlls::ResidualFunction {
 public:
  explicit RotationAlignResidual(Rotation target) : target_(std::move(target)) {}

  int dimension() const override { return 3; }

  void evaluate(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r) const override {
    r = so3_log(target_.inverse() * v.rotation(0));
  }

  bool evaluate_with_jacobians(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r,
                               std::vector<Eigen::MatrixXd>& jac) const override {
    const Eigen::Vector3d phi = so3_log(target_.inverse() * v.rotation(0));
    r = phi;
    jac[0] = so3_right_jacobian_inverse(phi);
    return true;
  }

 private:
  Rotation target_;
};

}  // namespace

TEST_CASE("huber loss is continuous at the knee") {
  const double delta = 0.7;
  const double knee = delta * delta;

  // Quadratic branch passes through the knee with matching slope.
  auto [rho_in, w_in] = nlls::huber_loss(knee * (1.0 - 1e-9), delta);
  auto [rho_at, w_at] = nlls::huber_loss(knee, delta);
  auto [rho_out, w_out] = nlls::huber_loss(knee * (1.0 + 1e-9), delta);
  CHECK(std::abs(rho_in - rho_at) <= 2e-9 * knee);
  CHECK(std::abs(rho_out - rho_at) <= 2e-9 * knee);
  CHECK(std::abs(w_in - 1.0) <= 1e-8);
  CHECK(w_at == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(w_out - 1.0) <= 1e-8);

  // Inside: identity. Outside: 2 delta sqrt(s) - delta^2 with weight delta/sqrt(s).
  auto [rho_q, w_q] = nlls::huber_loss(0.25 * knee, delta);
  CHECK(rho_q == doctest::Approx(0.25 * knee).epsilon(1e-15));
  CHECK(w_q == doctest::Approx(1.0).epsilon(1e-15));
  const double s_big = 9.0 * knee;
  auto [rho_b, w_b] = nlls::huber_loss(s_big, delta);
  CHECK(rho_b == doctest::Approx(2.0 * delta * std::sqrt(s_big) - knee).epsilon(1e-15));
  CHECK(w_b == doctest::Approx(delta / std::sqrt(s_big)).epsilon(1e-15));

  // The function itself demands a positive delta; disabling the loss is the
  // job of LossSpec, which skips the call entirely.
  CHECK_THROWS_AS(nlls::huber_loss(42.0, 0.0), InvalidArgumentError);
  CHECK_THROWS_AS(nlls::huber_loss(-1.0, delta), InvalidArgumentError);
}

TEST_CASE("linear problem solves in one accepted step") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(6, 3);
  Eigen::VectorXd b(6);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 3; ++j) a(i, j) = g(rng);
    b[i] = g(rng);
  }
  const Eigen::VectorXd x_star = (a.transpose() * a).ldlt().solve(a.transpose() * b);

  nlls::Problem problem;
  const int x = problem.add_block("x", Eigen::Vector3d(5.0, -3.0, 2.0));
  problem.add_residual("lin", {x}, std::make_shared<LinearResidual>(a, b));

  nlls::SolveOptions options;
  options.max_iterations = 1;
  const nlls::SolveReport report = nlls::solve(problem, options);

  CHECK(report.iterations == 1);
  CHECK((problem.value(x) - x_star).norm() <= 1e-10);
  CHECK(report.final_cost <= report.initial_cost);
}

TEST_CASE("accepted cost is monotone in the iteration budget") {
  const Eigen::Vector2d x0(-1.2, 1.0);
  double previous = std::numeric_limits<double>::infinity();
  for (int budget = 1; budget <= 40; ++budget) {
    nlls::Problem problem;
    const int x = problem.add_block("x", x0);
    problem.add_residual("banana", {x}, std::make_shared<BananaResidual>(true));
    nlls::SolveOptions options;
    options.max_iterations = budget;
    const nlls::SolveReport report = nlls::solve(problem, options);
    CHECK(report.final_cost <= previous * (1.0 + 1e-12));
    previous = report.final_cost;
  }
  CHECK(previous <= 1e-12);
}

TEST_CASE("finite difference fallback reaches the same optimum") {
  nlls::Problem problem;
  const int x = problem.add_block("x", Eigen::Vector2d(-1.2, 1.0));
  problem.add_residual("banana", {x}, std::make_shared<BananaResidual>(false));
  const nlls::SolveReport report = nlls::solve(problem);
  CHECK(report.final_cost <= 1e-10);
  CHECK((problem.value(x) - Eigen::Vector2d(1.0, 1.0)).norm() <= 1e-4);
}

TEST_CASE("jacobian_consistency flags a wrong analytic jacobian") {
  class WrongJacobian final : public nlls::ResidualFunction {
   public:
    int dimension() const override { return 2; }
    void evaluate(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r) const override {
      const double x = v.vec(0)[0], y = v.vec(0)[1];
      r[0] = x * y;
      r[1] = x - y;
    }
    bool evaluate_with_jacobians(const nlls::BlockValues& v, Eigen::Ref<Eigen::VectorXd> r,
                                 std::vector<Eigen::MatrixXd>& jac) const override {
      evaluate(v, r);
      const double x = v.vec(0)[0], y = v.vec(0)[1];
      jac[0] << 1.07 * y, x, 1.0, -1.0;  // first entry deliberately off by 7%
      return true;
    }
  };

  nlls::Problem problem;
  const int x = problem.add_block("x", Eigen::Vector2d(0.7, -1.3));
  const int good = problem.add_residual("good", {x}, std::make_shared<BananaResidual>(true));
  const int bad = problem.add_residual("bad", {x}, std::make_shared<WrongJacobian>());
  const int fd = problem.add_residual("fd", {x}, std::make_shared<BananaResidual>(false));

  CHECK(nlls::jacobian_consistency(problem, good) <= 1e-5);
  CHECK(nlls::jacobian_consistency(problem, bad) >= 1e-3);
  CHECK(nlls::jacobian_consistency(problem, fd) == 0.0);
}

TEST_CASE("rotation block converges with analytic tangent jacobian") {
  const Rotation target = so3_exp(Eigen::Vector3d(0.4, -0.8, 1.1));

  nlls::Problem problem;
  const int q = problem.add_rotation_block("q", so3_exp(Eigen::Vector3d(-0.5, 0.2, 0.1)));
  const int res =
      problem.add_residual("align", {q}, std::make_shared<RotationAlignResidual>(target));
  CHECK(nlls::jacobian_consistency(problem, res) <= 1e-5);

  const nlls::SolveReport report = nlls::solve(problem);
  CHECK(problem.rotation_value(q).angle_to(target) <= 1e-9);
  CHECK(report.final_cost <= 1e-16);
}

TEST_CASE("bounds clamp the solution") {
  nlls::Problem problem;
  const int x = problem.add_scalar_block("x", 0.0);
  problem.add_residual("pull", {x}, std::make_shared<ScalarOffsetResidual>(2.0));
  Eigen::VectorXd lo(1), hi(1);
  lo[0] = -1.0;
  hi[0] = 1.0;
  problem.set_bounds(x, lo, hi);
  nlls::solve(problem);
  CHECK(problem.scalar_value(x) == doctest::Approx(1.0).epsilon(1e-9));

  nlls::Problem problem2;
  const int y = problem2.add_scalar_block("y", 0.0);
  problem2.add_residual("pull", {y}, std::make_shared<ScalarOffsetResidual>(-5.0));
  problem2.set_bounds(y, lo, hi);
  nlls::solve(problem2);
  CHECK(problem2.scalar_value(y) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("constant blocks do not move") {
  nlls::Problem problem;
  const int x = problem.add_scalar_block("x", 0.25);
  const int y = problem.add_scalar_block("y", 1.0);
  problem.set_constant(x);
  problem.add_residual("sum", {x, y}, std::make_shared<SumResidual>());
  nlls::solve(problem);
  CHECK(problem.scalar_value(x) == 0.25);
  CHECK(problem.scalar_value(y) == doctest::Approx(2.75).epsilon(1e-9));
  CHECK(problem.is_constant(x));
  CHECK_FALSE(problem.is_constant(y));
}

TEST_CASE("group rms reports per-tag unweighted rms") {
  nlls::Problem problem;
  const int x = problem.add_scalar_block("x", 0.0);
  problem.add_residual("fit", {x}, std::make_shared<ScalarOffsetResidual>(3.0));
  Eigen::VectorXd fixed(2);
  fixed << 3.0, 4.0;
  problem.add_residual("floor", {x}, std::make_shared<FixedResidual>(fixed));
  const nlls::SolveReport report = nlls::solve(problem);

  CHECK(problem.scalar_value(x) == doctest::Approx(3.0).epsilon(1e-9));
  REQUIRE(report.group_rms.count("fit") == 1);
  REQUIRE(report.group_rms.count("floor") == 1);
  CHECK(report.group_rms.at("fit") <= 1e-9);
  CHECK(report.group_rms.at("floor") == doctest::Approx(std::sqrt(25.0 / 2.0)).epsilon(1e-12));
}

TEST_CASE("termination reasons") {
  // Starting at the optimum stops on the gradient test without iterating.
  {
    nlls::Problem problem;
    const int x = problem.add_scalar_block("x", 3.0);
    problem.add_residual("fit", {x}, std::make_shared<ScalarOffsetResidual>(3.0));
    const nlls::SolveReport report = nlls::solve(problem);
    CHECK(report.termination == nlls::Termination::kGradientTolerance);
    CHECK(report.iterations == 0);
  }
  // An exhausted budget reports max iterations.
  {
    nlls::Problem problem;
    const int x = problem.add_block("x", Eigen::Vector2d(-1.2, 1.0));
    problem.add_residual("banana", {x}, std::make_shared<BananaResidual>(true));
    nlls::SolveOptions options;
    options.max_iterations = 2;
    const nlls::SolveReport report = nlls::solve(problem, options);
    CHECK(report.termination == nlls::Termination::kMaxIterations);
    CHECK(report.iterations == 2);
  }
  CHECK(nlls::to_string(nlls::Termination::kCostTolerance) != "");
}

TEST_CASE("non-finite residual at the initial state throws") {
  class NanResidual final : public nlls::ResidualFunction {
   public:
    int dimension() const override { return 1; }
    void evaluate(const nlls::BlockValues&, Eigen::Ref<Eigen::VectorXd> r) const override {
      r[0] = std::nan("");
    }
  };

  nlls::Problem problem;
  const int x = problem.add_scalar_block("x", 1.0);
  problem.add_residual("nan", {x}, std::make_shared<NanResidual>());
  CHECK_THROWS_AS(nlls::solve(problem), EvaluationError);
}

TEST_CASE("huber loss suppresses an outlier") {
  // Fit a scalar location to inliers around zero plus one gross outlier.
  const std::vector<double> samples = {0.05, -0.03, 0.01, -0.06, 0.04, 10.0};

  auto fit = [&](double delta) {
    nlls::Problem problem;
    const int x = problem.add_scalar_block("x", 0.5);
    for (size_t i = 0; i < samples.size(); ++i) {
      problem.add_residual("sample", {x}, std::make_shared<ScalarOffsetResidual>(samples[i]),
                           {delta, 1});
    }
    nlls::solve(problem);
    return problem.scalar_value(x);
  };

  const double plain = fit(0.0);
  const double robust = fit(0.5);
  CHECK(plain == doctest::Approx(10.01 / 6.0).epsilon(1e-6));
  CHECK(std::abs(robust) < 0.2);
}
