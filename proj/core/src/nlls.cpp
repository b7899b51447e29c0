#include "stcalib/nlls.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <optional>

#include "stcalib/errors.hpp"

namespace stcalib::nlls {

std::pair<double, double> huber_loss(double s, double delta) {
  if (!(delta > 0.0)) {
    throw InvalidArgumentError("huber delta must be positive");
  }
  if (s < 0.0) {
    throw InvalidArgumentError("huber loss argument is a squared norm, got negative");
  }
  double d2 = delta * delta;
  if (s <= d2) {
    return {s, 1.0};
  }
  double sq = std::sqrt(s);
  return {2.0 * delta * sq - d2, delta / sq};
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::kCostTolerance: return "cost_tolerance";
    case Termination::kGradientTolerance: return "gradient_tolerance";
    case Termination::kMaxIterations: return "max_iterations";
    case Termination::kNoDecrease: return "no_decrease";
  }
  return "unknown";
}

int Problem::add_block(const std::string& id, const Eigen::VectorXd& value) {
  if (value.size() == 0) {
    throw InvalidArgumentError("parameter block '" + id + "' is empty");
  }
  blocks_.push_back({id, ManifoldKind::kEuclidean, value, false, {}, {}});
  return static_cast<int>(blocks_.size()) - 1;
}

int Problem::add_rotation_block(const std::string& id, const Rotation& value) {
  Eigen::VectorXd q(4);
  const auto& quat = value.quaternion();
  q << quat.w(), quat.x(), quat.y(), quat.z();
  blocks_.push_back({id, ManifoldKind::kRotation, q, false, {}, {}});
  return static_cast<int>(blocks_.size()) - 1;
}

int Problem::add_scalar_block(const std::string& id, double value) {
  return add_block(id, Eigen::VectorXd::Constant(1, value));
}

void Problem::set_constant(int block, bool constant) {
  blocks_.at(static_cast<size_t>(block)).constant = constant;
}

void Problem::set_bounds(int block, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  Block& b = blocks_.at(static_cast<size_t>(block));
  if (b.kind != ManifoldKind::kEuclidean) {
    throw InvalidArgumentError("bounds are only supported on Euclidean blocks");
  }
  if (lower.size() != b.value.size() || upper.size() != b.value.size()) {
    throw InvalidArgumentError("bound size mismatch on block '" + b.id + "'");
  }
  if (((upper - lower).array() < 0.0).any()) {
    throw InvalidArgumentError("lower bound exceeds upper bound on block '" + b.id + "'");
  }
  if ((b.value.array() < lower.array()).any() || (b.value.array() > upper.array()).any()) {
    throw InvalidArgumentError("block '" + b.id + "' starts outside its bounds");
  }
  b.lower = lower;
  b.upper = upper;
}

int Problem::add_residual(const std::string& tag, std::vector<int> blocks,
                          std::shared_ptr<const ResidualFunction> fn, LossSpec loss) {
  if (!fn || fn->dimension() <= 0) {
    throw InvalidArgumentError("residual '" + tag + "' has no dimension");
  }
  if (blocks.empty()) {
    throw InvalidArgumentError("residual '" + tag + "' references no blocks");
  }
  for (int b : blocks) {
    if (b < 0 || b >= block_count()) {
      throw InvalidArgumentError("residual '" + tag + "' references unknown block");
    }
  }
  if (loss.group_size < 0 ||
      (loss.group_size > 0 && fn->dimension() % loss.group_size != 0)) {
    throw InvalidArgumentError("loss group size must divide the residual dimension");
  }
  if (loss.huber_delta < 0.0) {
    throw InvalidArgumentError("huber delta must be nonnegative");
  }
  residuals_.push_back({tag, std::move(blocks), std::move(fn), loss});
  return static_cast<int>(residuals_.size()) - 1;
}

const Eigen::VectorXd& Problem::value(int block) const {
  return blocks_.at(static_cast<size_t>(block)).value;
}

Rotation Problem::rotation_value(int block) const {
  const Block& b = blocks_.at(static_cast<size_t>(block));
  if (b.kind != ManifoldKind::kRotation) {
    throw InvalidArgumentError("block '" + b.id + "' is not a rotation");
  }
  return Rotation::from_quaternion(b.value[0], b.value[1], b.value[2], b.value[3]);
}

double Problem::scalar_value(int block) const {
  return blocks_.at(static_cast<size_t>(block)).value[0];
}

void Problem::set_value(int block, const Eigen::VectorXd& value) {
  Block& b = blocks_.at(static_cast<size_t>(block));
  if (value.size() != b.value.size()) {
    throw InvalidArgumentError("value size mismatch on block '" + b.id + "'");
  }
  b.value = value;
}

void Problem::set_rotation_value(int block, const Rotation& value) {
  Block& b = blocks_.at(static_cast<size_t>(block));
  if (b.kind != ManifoldKind::kRotation) {
    throw InvalidArgumentError("block '" + b.id + "' is not a rotation");
  }
  const auto& q = value.quaternion();
  b.value << q.w(), q.x(), q.y(), q.z();
}

const std::string& Problem::block_id(int block) const {
  return blocks_.at(static_cast<size_t>(block)).id;
}

ManifoldKind Problem::block_kind(int block) const {
  return blocks_.at(static_cast<size_t>(block)).kind;
}

bool Problem::is_constant(int block) const {
  return blocks_.at(static_cast<size_t>(block)).constant;
}

const std::string& Problem::residual_tag(int r) const {
  return residuals_.at(static_cast<size_t>(r)).tag;
}

// Internal engine. Lives behind the Problem friendship so the public surface
// stays small; everything here operates on a detached copy of the block
// values and only writes back on return.
struct Solver {
  using State = std::vector<Eigen::VectorXd>;

  struct Slot {
    int r0, c0, rows, cols;
    Eigen::Matrix3d data;  // top-left rows x cols in use
  };

  struct Work {
    const Problem::Residual* res = nullptr;
    int dim = 0;
    std::vector<int> active;     // positions into res->blocks, sorted by tangent offset
    std::vector<int> pair_slot;  // slot per ordered active pair (i <= j)
  };

  Problem& problem;
  const SolveOptions& opt;
  std::vector<int> offset;  // tangent offset per block, -1 if held fixed
  int n_tangent = 0;
  std::vector<Work> works;
  std::vector<Slot> slots;

  // scratch
  Eigen::VectorXd r_scratch;
  std::vector<Eigen::MatrixXd> jac_scratch;
  std::vector<const Eigen::VectorXd*> ptr_scratch;

  Solver(Problem& p, const SolveOptions& o) : problem(p), opt(o) { plan(); }

  static Eigen::VectorXd retract_block(const Problem::Block& blk, const Eigen::VectorXd& x,
                                       const Eigen::Ref<const Eigen::VectorXd>& delta,
                                       bool clamp) {
    if (blk.kind == ManifoldKind::kRotation) {
      Rotation r = Rotation::from_quaternion(x[0], x[1], x[2], x[3]) * so3_exp(delta);
      Eigen::VectorXd out(4);
      const auto& q = r.quaternion();
      out << q.w(), q.x(), q.y(), q.z();
      return out;
    }
    Eigen::VectorXd out = x + delta;
    if (clamp && blk.lower.size() > 0) {
      out = out.cwiseMax(blk.lower).cwiseMin(blk.upper);
    }
    return out;
  }

  void plan() {
    const auto& blocks = problem.blocks_;
    std::vector<char> used(blocks.size(), 0);
    for (const auto& res : problem.residuals_) {
      for (int b : res.blocks) used[static_cast<size_t>(b)] = 1;
    }
    offset.assign(blocks.size(), -1);
    for (size_t i = 0; i < blocks.size(); ++i) {
      if (used[i] && !blocks[i].constant) {
        offset[i] = n_tangent;
        n_tangent += blocks[i].tangent_dim();
      }
    }
    std::unordered_map<long long, int> slot_of;
    works.reserve(problem.residuals_.size());
    for (const auto& res : problem.residuals_) {
      Work w;
      w.res = &res;
      w.dim = res.fn->dimension();
      for (size_t p = 0; p < res.blocks.size(); ++p) {
        if (offset[static_cast<size_t>(res.blocks[p])] >= 0) {
          w.active.push_back(static_cast<int>(p));
        }
      }
      std::sort(w.active.begin(), w.active.end(), [&](int a, int b) {
        return offset[static_cast<size_t>(res.blocks[static_cast<size_t>(a)])] <
               offset[static_cast<size_t>(res.blocks[static_cast<size_t>(b)])];
      });
      for (size_t i = 0; i < w.active.size(); ++i) {
        for (size_t j = i; j < w.active.size(); ++j) {
          int ba = res.blocks[static_cast<size_t>(w.active[i])];
          int bb = res.blocks[static_cast<size_t>(w.active[j])];
          long long key = static_cast<long long>(ba) * problem.block_count() + bb;
          auto it = slot_of.find(key);
          if (it == slot_of.end()) {
            Slot s;
            s.r0 = offset[static_cast<size_t>(ba)];
            s.c0 = offset[static_cast<size_t>(bb)];
            s.rows = blocks[static_cast<size_t>(ba)].tangent_dim();
            s.cols = blocks[static_cast<size_t>(bb)].tangent_dim();
            s.data.setZero();
            it = slot_of.emplace(key, static_cast<int>(slots.size())).first;
            slots.push_back(s);
          }
          w.pair_slot.push_back(it->second);
        }
      }
      works.push_back(std::move(w));
    }
  }

  // Evaluates one residual block; with jac != nullptr also fills tangent
  // Jacobians for every block (analytic when provided, else forward FD on the
  // non-constant ones).
  void eval_residual(const Work& w, const State& state, Eigen::VectorXd& r,
                     std::vector<Eigen::MatrixXd>* jac) {
    const auto& res = *w.res;
    const auto& blocks = problem.blocks_;
    ptr_scratch.clear();
    for (int b : res.blocks) ptr_scratch.push_back(&state[static_cast<size_t>(b)]);
    BlockValues values(ptr_scratch.data(), static_cast<int>(res.blocks.size()));
    r.resize(w.dim);
    if (jac == nullptr) {
      res.fn->evaluate(values, r);
      return;
    }
    jac->resize(res.blocks.size());
    for (size_t p = 0; p < res.blocks.size(); ++p) {
      (*jac)[p].setZero(w.dim, blocks[static_cast<size_t>(res.blocks[p])].tangent_dim());
    }
    if (res.fn->evaluate_with_jacobians(values, r, *jac)) {
      return;
    }
    res.fn->evaluate(values, r);
    Eigen::VectorXd perturbed, r_plus(w.dim);
    for (int p : w.active) {
      size_t sp = static_cast<size_t>(p);
      const auto& blk = blocks[static_cast<size_t>(res.blocks[sp])];
      int td = blk.tangent_dim();
      const Eigen::VectorXd& x = state[static_cast<size_t>(res.blocks[sp])];
      for (int t = 0; t < td; ++t) {
        double scale = blk.kind == ManifoldKind::kRotation ? 1.0 : std::abs(x[t]);
        double h = std::max(opt.fd_relative_step * scale, opt.fd_min_step);
        Eigen::VectorXd delta = Eigen::VectorXd::Zero(td);
        delta[t] = h;
        perturbed = retract_block(blk, x, delta, false);
        ptr_scratch[sp] = &perturbed;
        BlockValues pv(ptr_scratch.data(), static_cast<int>(res.blocks.size()));
        res.fn->evaluate(pv, r_plus);
        (*jac)[sp].col(t) = (r_plus - r) / h;
        ptr_scratch[sp] = &state[static_cast<size_t>(res.blocks[sp])];
      }
    }
  }

  // Robust total cost at a state. strict: non-finite residuals throw; else
  // returns nullopt so the caller can reject the step.
  std::optional<double> total_cost(const State& state, bool strict) {
    double cost = 0.0;
    for (const auto& w : works) {
      eval_residual(w, state, r_scratch, nullptr);
      if (!r_scratch.allFinite()) {
        if (strict) {
          throw EvaluationError(w.res->tag, "non-finite residual");
        }
        return std::nullopt;
      }
      cost += robust_cost(w, r_scratch, nullptr);
    }
    return cost;
  }

  // rho-summed cost of one residual vector; optionally writes sqrt(rho') row
  // scales per group for the reweighted normal equations.
  double robust_cost(const Work& w, const Eigen::VectorXd& r, Eigen::VectorXd* row_scale) const {
    const LossSpec& loss = w.res->loss;
    int gs = loss.group_size > 0 ? loss.group_size : w.dim;
    double cost = 0.0;
    for (int g0 = 0; g0 < w.dim; g0 += gs) {
      double s = r.segment(g0, gs).squaredNorm();
      double rho = s, weight = 1.0;
      if (loss.huber_delta > 0.0) {
        std::tie(rho, weight) = huber_loss(s, loss.huber_delta);
      }
      cost += rho;
      if (row_scale != nullptr) {
        row_scale->segment(g0, gs).setConstant(std::sqrt(weight));
      }
    }
    return cost;
  }

  // One full pass: fills the Hessian slots and gradient, returns the cost.
  double build_normal_equations(const State& state, Eigen::VectorXd& grad) {
    for (auto& s : slots) s.data.setZero();
    grad.setZero(n_tangent);
    double cost = 0.0;
    Eigen::VectorXd row_scale;
    for (auto& w : works) {
      eval_residual(w, state, r_scratch, &jac_scratch);
      if (!r_scratch.allFinite()) {
        throw EvaluationError(w.res->tag, "non-finite residual");
      }
      row_scale.resize(w.dim);
      cost += robust_cost(w, r_scratch, &row_scale);
      r_scratch.array() *= row_scale.array();
      for (int p : w.active) {
        jac_scratch[static_cast<size_t>(p)].array().colwise() *= row_scale.array();
      }
      int pair = 0;
      for (size_t i = 0; i < w.active.size(); ++i) {
        int pa = w.active[i];
        int ba = w.res->blocks[static_cast<size_t>(pa)];
        const auto& ja = jac_scratch[static_cast<size_t>(pa)];
        grad.segment(offset[static_cast<size_t>(ba)], ja.cols()).noalias() +=
            ja.transpose() * r_scratch;
        for (size_t j = i; j < w.active.size(); ++j, ++pair) {
          int pb = w.active[j];
          const auto& jb = jac_scratch[static_cast<size_t>(pb)];
          Slot& slot = slots[static_cast<size_t>(w.pair_slot[static_cast<size_t>(pair)])];
          slot.data.topLeftCorner(slot.rows, slot.cols).noalias() += ja.transpose() * jb;
        }
      }
    }
    return cost;
  }

  State candidate_state(const State& state, const Eigen::VectorXd& delta) const {
    State out = state;
    const auto& blocks = problem.blocks_;
    for (size_t i = 0; i < blocks.size(); ++i) {
      if (offset[i] < 0) continue;
      out[i] = retract_block(blocks[i], state[i],
                             delta.segment(offset[i], blocks[i].tangent_dim()), true);
    }
    return out;
  }

  SolveReport run() {
    State state;
    state.reserve(problem.blocks_.size());
    for (const auto& b : problem.blocks_) state.push_back(b.value);

    SolveReport report;
    auto finalize = [&](double final_cost) {
      for (size_t i = 0; i < state.size(); ++i) problem.blocks_[i].value = state[i];
      report.final_cost = final_cost;
      // Unweighted per-tag RMS at the final state.
      std::map<std::string, std::pair<double, long>> acc;
      Eigen::VectorXd r;
      for (const auto& w : works) {
        eval_residual(w, state, r, nullptr);
        auto& a = acc[w.res->tag];
        a.first += r.squaredNorm();
        a.second += w.dim;
      }
      for (const auto& [tag, a] : acc) {
        report.group_rms[tag] = std::sqrt(a.first / static_cast<double>(a.second));
      }
      return report;
    };

    double cost = total_cost(state, true).value();
    report.initial_cost = cost;

    if (n_tangent == 0) {
      report.termination = Termination::kGradientTolerance;
      return finalize(cost);
    }

    Eigen::SparseMatrix<double> A(n_tangent, n_tangent);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Upper> ldlt;
    bool pattern_analyzed = false;
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd grad(n_tangent), dvec(n_tangent);

    auto assemble = [&](double lambda) {
      triplets.clear();
      for (const auto& s : slots) {
        for (int i = 0; i < s.rows; ++i) {
          int jstart = (s.r0 == s.c0) ? i : 0;
          for (int j = jstart; j < s.cols; ++j) {
            triplets.emplace_back(s.r0 + i, s.c0 + j, s.data(i, j));
          }
        }
      }
      for (int k = 0; k < n_tangent; ++k) {
        triplets.emplace_back(k, k, lambda * dvec[k]);
      }
      A.setFromTriplets(triplets.begin(), triplets.end());
      if (!pattern_analyzed) {
        ldlt.analyzePattern(A);
        pattern_analyzed = true;
      }
    };

    constexpr double kMaxDamping = 1e32;
    double lambda = opt.initial_damping;
    report.termination = Termination::kMaxIterations;

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
      cost = build_normal_equations(state, grad);

      if (2.0 * grad.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance) {
        report.termination = Termination::kGradientTolerance;
        break;
      }

      dvec.setConstant(1e-12);
      for (const auto& s : slots) {
        if (s.r0 == s.c0) {
          for (int i = 0; i < s.rows; ++i) {
            dvec[s.r0 + i] = std::max(s.data(i, i), 1e-12);
          }
        }
      }

      // Try the pure Gauss-Newton step first, then the damped schedule.
      bool accepted = false;
      bool any_factorization = false;
      double accepted_cost = cost;
      double try_lambda = 0.0;
      while (true) {
        assemble(try_lambda);
        ldlt.factorize(A);
        bool ok = ldlt.info() == Eigen::Success && (ldlt.vectorD().array() > 0.0).all();
        if (ok) {
          any_factorization = true;
          report.condition_estimate =
              ldlt.vectorD().cwiseAbs().maxCoeff() / ldlt.vectorD().cwiseAbs().minCoeff();
          Eigen::VectorXd delta = ldlt.solve(-grad);
          if (delta.allFinite()) {
            State cand = candidate_state(state, delta);
            std::optional<double> cand_cost;
            try {
              cand_cost = total_cost(cand, false);
            } catch (const Error&) {
              cand_cost = std::nullopt;  // step left the residuals' domain
            }
            if (cand_cost && *cand_cost < cost) {
              state = std::move(cand);
              accepted_cost = *cand_cost;
              lambda = (try_lambda == 0.0 ? lambda : try_lambda) * 0.5;
              accepted = true;
              break;
            }
          }
          report.rejected_steps += 1;
        }
        try_lambda = (try_lambda == 0.0) ? lambda : try_lambda * 10.0;
        if (try_lambda > kMaxDamping) {
          if (!any_factorization) {
            throw ConditioningError("normal equations rank-deficient at maximum damping");
          }
          break;
        }
      }

      if (!accepted) {
        report.termination = Termination::kNoDecrease;
        break;
      }

      report.iterations += 1;
      double decrease = cost - accepted_cost;
      cost = accepted_cost;
      if (decrease <= opt.cost_tolerance * std::max(cost + decrease, 1e-300)) {
        report.termination = Termination::kCostTolerance;
        break;
      }
    }

    return finalize(cost);
  }
};

SolveReport solve(Problem& problem, const SolveOptions& options) {
  Solver solver(problem, options);
  return solver.run();
}

double jacobian_consistency(const Problem& problem, int residual_index) {
  const auto& res = problem.residuals_.at(static_cast<size_t>(residual_index));
  std::vector<const Eigen::VectorXd*> ptrs;
  for (int b : res.blocks) ptrs.push_back(&problem.blocks_[static_cast<size_t>(b)].value);
  BlockValues values(ptrs.data(), static_cast<int>(res.blocks.size()));

  int dim = res.fn->dimension();
  Eigen::VectorXd r(dim);
  std::vector<Eigen::MatrixXd> analytic(res.blocks.size());
  for (size_t p = 0; p < res.blocks.size(); ++p) {
    analytic[p].setZero(dim, problem.blocks_[static_cast<size_t>(res.blocks[p])].tangent_dim());
  }
  if (!res.fn->evaluate_with_jacobians(values, r, analytic)) {
    return 0.0;  // nothing to compare
  }

  double worst = 0.0;
  Eigen::VectorXd r0(dim), r_plus(dim), perturbed;
  res.fn->evaluate(values, r0);
  for (size_t p = 0; p < res.blocks.size(); ++p) {
    const auto& blk = problem.blocks_[static_cast<size_t>(res.blocks[p])];
    int td = blk.tangent_dim();
    Eigen::MatrixXd fd(dim, td);
    for (int t = 0; t < td; ++t) {
      double scale = blk.kind == ManifoldKind::kRotation ? 1.0 : std::abs(blk.value[t]);
      double h = std::max(1e-7 * scale, 1e-9);
      Eigen::VectorXd delta = Eigen::VectorXd::Zero(td);
      delta[t] = h;
      perturbed = Solver::retract_block(blk, blk.value, delta, false);
      ptrs[p] = &perturbed;
      BlockValues pv(ptrs.data(), static_cast<int>(res.blocks.size()));
      res.fn->evaluate(pv, r_plus);
      fd.col(t) = (r_plus - r0) / h;
      ptrs[p] = &problem.blocks_[static_cast<size_t>(res.blocks[p])].value;
    }
    double denom = std::max({1.0, analytic[p].cwiseAbs().maxCoeff(), fd.cwiseAbs().maxCoeff()});
    worst = std::max(worst, (analytic[p] - fd).cwiseAbs().maxCoeff() / denom);
  }
  return worst;
}

}  // namespace stcalib::nlls
