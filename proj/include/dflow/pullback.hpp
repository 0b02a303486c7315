// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dflow/diffrep.hpp"
#include "dflow/types.hpp"

#include <string>
#include <vector>

namespace dflow {

/// Minimum-norm least-squares solution of J u = v (pseudoinverse semantics).
/// Requires m, p <= 512.
Vec exact_pullback(const Mat& jac, const Vec& v);

/// J^T v: the covector pullback used by score-chaining baselines.
Vec sjc_pullback(const Mat& jac, const Vec& v);

/// lambda J^T v.
Vec scaled_sjc_pullback(const Mat& jac, const Vec& v, double lambda);

enum class SolverKind { nesterov, adam };

SolverKind parse_solver_kind(const std::string& name);
const char* to_string(SolverKind kind) noexcept;

struct SolverConfig {
  SolverKind kind = SolverKind::nesterov;
  int iterations = 200;
  /// Adam only; the accelerated solver picks 1/L from a power iteration.
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  /// Stop once ten consecutive iterations lower the objective by at most tol
  /// (relative).
  double tol = 1e-10;
  bool record_trace = false;
};

/// One per-step suboptimization: find dtheta minimizing
///   (1/B) sum_j || f(theta, pi_j) - f(theta - dtheta, pi_j) - d_j ||^2.
/// The caller applies theta <- theta - dtheta.
struct PullbackStepProblem {
  Vec theta;
  std::vector<View> views;
  std::vector<Vec> increments;
  SolverConfig solver;
};

struct PullbackSolution {
  Vec delta_theta;
  /// Objective at delta_theta.
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Objective per iteration when solver.record_trace is set.
  std::vector<double> trace;
};

/// Starts from dtheta = 0. Throws DivergenceError on a non-finite objective.
PullbackSolution solve_delta_theta(const PullbackStepProblem& problem, const DiffRep& rep);

/// Writes "iteration,objective" rows.
void write_solver_trace_csv(const std::string& path, const PullbackSolution& sol);

}  // namespace dflow
