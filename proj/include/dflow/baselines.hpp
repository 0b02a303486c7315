// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dflow/diffrep.hpp"
#include "dflow/optim.hpp"
#include "dflow/sampler.hpp"
#include "dflow/schedule.hpp"
#include "dflow/score.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dflow {

/// One SDS draw: weight * J^T (eps_hat(f(theta, pi) + sigma eps) - eps).
/// Points uphill in the loss, so gradient ascent on the density subtracts it.
Vec sds_gradient(const DiffRep& rep, const Vec& theta, const View& view, const ScoreModel& score, double sigma,
                 double weight, const Vec& eps, const Conditioning& cond = {}, double cfg_scale = 1.0);

/// One SJC draw: J^T grad log p_sigma(f(theta, pi) + sigma eps), with the
/// score recovered from the noise predictor. Points uphill in the density.
///
/// For the same (eps, pi), sds_gradient with weight w and without the -eps
/// term equals -w sigma times this, so the two coincide (up to sign) when
/// w = 1 / sigma.
Vec sjc_gradient(const DiffRep& rep, const Vec& theta, const View& view, const ScoreModel& score, double sigma,
                 const Vec& eps, const Conditioning& cond = {}, double cfg_scale = 1.0);

enum class GAMethod { sds, sjc };
enum class SigmaRule { uniform, annealed, fixed };
enum class Weighting { sigma, unit };

GAMethod parse_ga_method(const std::string& name);
SigmaRule parse_sigma_rule(const std::string& name);
Weighting parse_weighting(const std::string& name);
const char* to_string(GAMethod m) noexcept;
const char* to_string(SigmaRule r) noexcept;
const char* to_string(Weighting w) noexcept;

struct GAConfig {
  GAMethod method = GAMethod::sds;
  int iterations = 1000;
  Weighting weighting = Weighting::sigma;
  SigmaRule sigma_rule = SigmaRule::uniform;
  /// Annealing runs linearly from sigma_start to sigma_end; `fixed` uses sigma_start.
  double sigma_start = 1.0;
  double sigma_end = 0.01;
  AdamConfig adam;
  /// Learning rate decays geometrically to lr * lr_final_fraction.
  double lr_final_fraction = 1.0;
  int views_per_step = 1;
  /// Pair every noise draw with its negation.
  bool antithetic = false;
  double cfg_scale = 1.0;
  Conditioning conditioning;
};

struct GAResult {
  Vec theta;
  /// residual holds the norm of the step's gradient estimate.
  std::vector<TraceRecord> trace;
  long nfe = 0;
};

/// SDS / SJC gradient ascent from `theta0` (init_params when absent).
/// `schedule` supplies the levels of the uniform sigma rule.
GAResult run_gradient_ascent(const DiffRep& rep, const ScoreModel& score, const NoiseSchedule& schedule,
                             const GAConfig& cfg, Rng& rng, const std::optional<Vec>& theta0 = std::nullopt,
                             std::uint64_t seed_tag = 0);

/// Norm of the descent direction averaged over `draws` noise draws (antithetic
/// pairs) at a fixed sigma: the stationarity measure of a GA endpoint.
double gradient_norm_estimate(const DiffRep& rep, const Vec& theta, const ScoreModel& score, const GAConfig& cfg,
                              double sigma, int draws, Rng& rng);

}  // namespace dflow
