// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/pullback.hpp"

#include "dflow/error.hpp"
#include "dflow/optim.hpp"

#include <Eigen/QR>

#include <cmath>
#include <fstream>
#include <limits>

namespace dflow {

namespace {

void check_oracle_inputs(const Mat& jac, const Vec& v) {
  if (jac.rows() > 512 || jac.cols() > 512) {
    throw ParameterError("explicit pullbacks are limited to m, p <= 512");
  }
  if (jac.rows() != v.size()) {
    throw DimensionError("pullback: J has " + std::to_string(jac.rows()) + " rows but v has " +
                         std::to_string(v.size()) + " entries");
  }
  if (!jac.allFinite() || !v.allFinite()) {
    throw ParameterError("pullback: non-finite input");
  }
}

struct Evaluation {
  double objective;
  Vec gradient;
};

class StepObjective {
 public:
  StepObjective(const PullbackStepProblem& problem, const DiffRep& rep) : problem_(problem), rep_(rep) {
    base_.reserve(problem.views.size());
    for (std::size_t j = 0; j < problem.views.size(); ++j) {
      // r_j(dtheta) = base_j - f(theta - dtheta, pi_j)
      base_.push_back(rep.render(problem.theta, problem.views[j]) - problem.increments[j]);
    }
  }

  Evaluation operator()(const Vec& delta) const {
    const Vec point = problem_.theta - delta;
    const double inv_b = 1.0 / static_cast<double>(base_.size());
    Evaluation ev{0.0, Vec::Zero(delta.size())};
    for (std::size_t j = 0; j < base_.size(); ++j) {
      const Vec r = base_[j] - rep_.render(point, problem_.views[j]);
      ev.objective += inv_b * r.squaredNorm();
      ev.gradient += (2.0 * inv_b) * rep_.vjp(point, problem_.views[j], r);
    }
    return ev;
  }

  /// Largest eigenvalue of the Gauss-Newton Hessian (2/B) sum_j J_j^T J_j.
  double curvature_bound() const {
    Rng rng = make_stream(0x5eed, 0);
    Vec v = standard_normal(problem_.theta.size(), rng);
    double lambda = 0.0;
    const double inv_b = 1.0 / static_cast<double>(base_.size());
    for (int it = 0; it < 30; ++it) {
      const double n = v.norm();
      if (n == 0.0) {
        return 0.0;
      }
      v /= n;
      Vec hv = Vec::Zero(v.size());
      for (const auto& view : problem_.views) {
        hv += rep_.vjp(problem_.theta, view, rep_.jvp(problem_.theta, view, v));
      }
      hv *= 2.0 * inv_b;
      lambda = v.dot(hv);
      v = hv;
    }
    return lambda;
  }

 private:
  const PullbackStepProblem& problem_;
  const DiffRep& rep_;
  std::vector<Vec> base_;
};

void check_problem(const PullbackStepProblem& problem, const DiffRep& rep) {
  if (problem.views.empty()) {
    throw ParameterError("pullback step needs at least one view");
  }
  if (problem.views.size() != problem.increments.size()) {
    throw DimensionError("pullback step: one increment per view required");
  }
  if (problem.theta.size() != rep.param_dim()) {
    throw DimensionError("pullback step: theta does not match the rep");
  }
  for (const auto& d : problem.increments) {
    if (d.size() != rep.output_dim()) {
      throw DimensionError("pullback step: increment does not match the rep's output");
    }
    if (!d.allFinite()) {
      throw ParameterError("pullback step: non-finite increment");
    }
  }
  if (problem.solver.iterations < 1) {
    throw ParameterError("pullback step: solver needs at least one iteration");
  }
}

/// Convergence test on the objective history: stalled once the last
/// kWindow iterations together lowered it by at most tol (relative). A
/// single-step test fires early on accelerated methods, whose per-step
/// progress fluctuates.
class StallTest {
 public:
  static constexpr std::size_t kWindow = 10;

  explicit StallTest(double tol) : tol_(tol) {}

  bool push(double objective) {
    history_.push_back(objective);
    if (history_.size() <= kWindow) {
      return false;
    }
    const double old = history_[history_.size() - 1 - kWindow];
    return objective <= old && old - objective <= tol_ * old;
  }

 private:
  double tol_;
  std::vector<double> history_;
};

PullbackSolution solve_nesterov(const StepObjective& objective, const SolverConfig& cfg, Index p) {
  PullbackSolution sol;
  sol.delta_theta = Vec::Zero(p);

  Evaluation ev = objective(sol.delta_theta);
  sol.residual = ev.objective;
  if (!std::isfinite(ev.objective)) {
    throw DivergenceError("pullback objective is not finite", 0);
  }
  if (cfg.record_trace) {
    sol.trace.push_back(ev.objective);
  }
  if (ev.objective == 0.0 || ev.gradient.squaredNorm() == 0.0) {
    sol.converged = true;
    return sol;
  }
  const double curvature = objective.curvature_bound();
  if (curvature <= 0.0) {
    sol.converged = true;
    return sol;
  }

  // Accelerated gradient with adaptive restart. The power iteration slightly
  // underestimates the top eigenvalue, hence the margin.
  double step = 1.0 / (1.1 * curvature);
  Vec x = sol.delta_theta;
  Vec y = x;
  double t = 1.0;
  double previous = ev.objective;
  StallTest stall(cfg.tol);
  stall.push(ev.objective);
  for (int it = 1; it <= cfg.iterations; ++it) {
    const Vec x_next = y - step * ev.gradient;
    if (ev.gradient.dot(x_next - x) > 0.0) {
      t = 1.0;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    Vec y_next = x_next + ((t - 1.0) / t_next) * (x_next - x);

    Evaluation next = objective(y_next);
    if (!std::isfinite(next.objective)) {
      throw DivergenceError("pullback objective is not finite", it);
    }
    if (next.objective > previous) {
      // Overshoot: drop the momentum and retry from the plain gradient step.
      y_next = x_next;
      t = 1.0;
      next = objective(y_next);
      if (!std::isfinite(next.objective)) {
        throw DivergenceError("pullback objective is not finite", it);
      }
      if (next.objective > previous) {
        step *= 0.5;
        sol.iterations = it;
        if (cfg.record_trace) {
          sol.trace.push_back(previous);
        }
        continue;
      }
    } else {
      t = t_next;
    }
    x = x_next;
    y = y_next;
    ev = std::move(next);
    sol.iterations = it;
    if (cfg.record_trace) {
      sol.trace.push_back(ev.objective);
    }
    if (ev.objective < sol.residual) {
      sol.residual = ev.objective;
      sol.delta_theta = y;
    }
    const bool done = ev.objective == 0.0 || stall.push(ev.objective);
    previous = ev.objective;
    if (done) {
      sol.converged = true;
      break;
    }
  }
  return sol;
}

PullbackSolution solve_adam(const StepObjective& objective, const SolverConfig& cfg, Index p) {
  PullbackSolution sol;
  Vec delta = Vec::Zero(p);
  Adam adam(p, AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
  Evaluation ev = objective(delta);
  sol.delta_theta = delta;
  sol.residual = ev.objective;
  if (cfg.record_trace) {
    sol.trace.push_back(ev.objective);
  }
  StallTest stall(cfg.tol);
  stall.push(ev.objective);
  for (int it = 1; it <= cfg.iterations; ++it) {
    if (!std::isfinite(ev.objective)) {
      throw DivergenceError("pullback objective is not finite", it - 1);
    }
    if (ev.objective == 0.0) {
      sol.converged = true;
      break;
    }
    delta -= adam.step(ev.gradient);
    ev = objective(delta);
    sol.iterations = it;
    if (!std::isfinite(ev.objective)) {
      throw DivergenceError("pullback objective is not finite", it);
    }
    if (cfg.record_trace) {
      sol.trace.push_back(ev.objective);
    }
    if (ev.objective < sol.residual) {
      sol.residual = ev.objective;
      sol.delta_theta = delta;
    }
    if (stall.push(ev.objective)) {
      sol.converged = true;
      break;
    }
  }
  return sol;
}

}  // namespace

Vec exact_pullback(const Mat& jac, const Vec& v) {
  check_oracle_inputs(jac, v);
  if (jac.size() == 0) {
    return Vec::Zero(jac.cols());
  }
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(jac);
  return cod.solve(v);
}

Vec sjc_pullback(const Mat& jac, const Vec& v) {
  check_oracle_inputs(jac, v);
  return jac.transpose() * v;
}

Vec scaled_sjc_pullback(const Mat& jac, const Vec& v, double lambda) {
  return lambda * sjc_pullback(jac, v);
}

SolverKind parse_solver_kind(const std::string& name) {
  if (name == "nesterov") {
    return SolverKind::nesterov;
  }
  if (name == "adam") {
    return SolverKind::adam;
  }
  throw ParameterError("unknown solver '" + name + "' (expected nesterov or adam)");
}

const char* to_string(SolverKind kind) noexcept {
  return kind == SolverKind::nesterov ? "nesterov" : "adam";
}

PullbackSolution solve_delta_theta(const PullbackStepProblem& problem, const DiffRep& rep) {
  check_problem(problem, rep);
  const StepObjective objective(problem, rep);
  if (problem.solver.kind == SolverKind::adam) {
    return solve_adam(objective, problem.solver, rep.param_dim());
  }
  return solve_nesterov(objective, problem.solver, rep.param_dim());
}

void write_solver_trace_csv(const std::string& path, const PullbackSolution& sol) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot open " + path + " for writing");
  }
  out.precision(17);
  out << "iteration,objective\n";
  for (std::size_t i = 0; i < sol.trace.size(); ++i) {
    out << i << ',' << sol.trace[i] << '\n';
  }
}

}  // namespace dflow
