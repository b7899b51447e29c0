#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "stcalib/geometry.hpp"

namespace stcalib::nlls {

// Huber loss on the squared residual norm s:
//   rho(s) = s                         for s <= delta^2
//   rho(s) = 2*delta*sqrt(s) - delta^2 otherwise.
// Returns (rho(s), rho'(s)); rho'(s) is the IRLS weight.
std::pair<double, double> huber_loss(double s, double delta);

enum class ManifoldKind {
  kEuclidean,  // ambient = tangent
  kRotation,   // ambient: unit quaternion (w,x,y,z); tangent: 3, right-multiplied
};

struct LossSpec {
  double huber_delta = 0.0;  // <= 0 disables the robust loss
  int group_size = 0;        // rows per independently-weighted group; 0 = whole block
};

// Read-only view of the parameter blocks a residual was registered with,
// in registration order.
class BlockValues {
 public:
  BlockValues(const Eigen::VectorXd* const* blocks, int count)
      : blocks_(blocks), count_(count) {}

  int count() const { return count_; }
  const Eigen::VectorXd& vec(int i) const { return *blocks_[i]; }
  Eigen::Vector3d vec3(int i) const { return *blocks_[i]; }
  double scalar(int i) const { return (*blocks_[i])[0]; }
  Rotation rotation(int i) const {
    const Eigen::VectorXd& q = *blocks_[i];
    return Rotation::from_quaternion(q[0], q[1], q[2], q[3]);
  }

 private:
  const Eigen::VectorXd* const* blocks_;
  int count_;
};

class ResidualFunction {
 public:
  virtual ~ResidualFunction() = default;

  virtual int dimension() const = 0;

  virtual void evaluate(const BlockValues& values,
                        Eigen::Ref<Eigen::VectorXd> residual) const = 0;

  // Tangent-space Jacobians, one dimension() x tangent_dim matrix per block
  // (pre-sized by the caller). Return false to fall back to forward finite
  // differences (step 1e-7 relative to the coordinate, floor 1e-9).
  virtual bool evaluate_with_jacobians(const BlockValues& values,
                                       Eigen::Ref<Eigen::VectorXd> residual,
                                       std::vector<Eigen::MatrixXd>& jacobians) const {
    (void)values;
    (void)residual;
    (void)jacobians;
    return false;
  }
};

struct SolveOptions {
  int max_iterations = 100;
  double cost_tolerance = 1e-10;      // relative cost decrease per accepted step
  double gradient_tolerance = 1e-12;  // max-norm of the cost gradient
  double initial_damping = 1e-4;      // x10 on rejected steps, x0.5 on accepted
  double fd_relative_step = 1e-7;
  double fd_min_step = 1e-9;
};

enum class Termination {
  kCostTolerance,
  kGradientTolerance,
  kMaxIterations,
  kNoDecrease,  // every damping level was rejected; local minimum at precision
};

std::string to_string(Termination t);

struct SolveReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;  // accepted steps
  int rejected_steps = 0;
  Termination termination = Termination::kMaxIterations;
  double condition_estimate = 0.0;  // max/min |D| of the last factorization
  // Unweighted RMS per residual tag at the final state.
  std::map<std::string, double> group_rms;
};

// Parameter blocks plus residual blocks. Blocks are addressed by the integer
// handle add_* returns; the string id only appears in diagnostics.
class Problem {
 public:
  int add_block(const std::string& id, const Eigen::VectorXd& value);
  int add_rotation_block(const std::string& id, const Rotation& value);
  int add_scalar_block(const std::string& id, double value);

  void set_constant(int block, bool constant = true);
  void set_bounds(int block, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);

  int add_residual(const std::string& tag, std::vector<int> blocks,
                   std::shared_ptr<const ResidualFunction> fn, LossSpec loss = {});

  int block_count() const { return static_cast<int>(blocks_.size()); }
  int residual_count() const { return static_cast<int>(residuals_.size()); }

  const Eigen::VectorXd& value(int block) const;
  Rotation rotation_value(int block) const;
  double scalar_value(int block) const;
  void set_value(int block, const Eigen::VectorXd& value);
  void set_rotation_value(int block, const Rotation& value);

  const std::string& block_id(int block) const;
  ManifoldKind block_kind(int block) const;
  bool is_constant(int block) const;
  const std::string& residual_tag(int r) const;

 private:
  friend struct Solver;
  friend double jacobian_consistency(const Problem&, int);

  struct Block {
    std::string id;
    ManifoldKind kind;
    Eigen::VectorXd value;
    bool constant = false;
    Eigen::VectorXd lower, upper;  // empty when unbounded
    int tangent_dim() const {
      return kind == ManifoldKind::kRotation ? 3 : static_cast<int>(value.size());
    }
  };

  struct Residual {
    std::string tag;
    std::vector<int> blocks;
    std::shared_ptr<const ResidualFunction> fn;
    LossSpec loss;
  };

  std::vector<Block> blocks_;
  std::vector<Residual> residuals_;
};

// Levenberg-Marquardt with sparse block normal equations. Each iteration
// first tries the undamped Gauss-Newton step and falls back to the damped
// schedule when that fails to decrease the cost. Throws ConditioningError
// when the normal equations stay unfactorizable at maximum damping and
// EvaluationError when a residual is non-finite at an accepted state.
SolveReport solve(Problem& problem, const SolveOptions& options = {});

// Max relative deviation between the analytic and finite-difference Jacobians
// of one residual block at the current state; 0 when no analytic override.
double jacobian_consistency(const Problem& problem, int residual_index);

}  // namespace stcalib::nlls
