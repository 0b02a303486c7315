// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dflow/diffrep.hpp"
#include "dflow/pullback.hpp"
#include "dflow/schedule.hpp"
#include "dflow/score.hpp"
#include "dflow/types.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace dflow {

/// Euler integration of the probability-flow ODE from sigma_N down to 0:
///   x_{i-1} = x_i + (sigma_{i-1} - sigma_i) eps_hat(x_i, sigma_i).
Vec pf_ode_sample_x(const ScoreModel& score, const NoiseSchedule& schedule, const Vec& x_init,
                    const Conditioning& cond = {}, double cfg_scale = 1.0);

/// Reverse DDIM step:
///   x_t - sigma_t eps_hat + sqrt(1 - sigma_l^2) sigma_prev eps_hat + sigma_prev noise_draw
/// where noise_draw ~ N(0, sigma_l^2 I).
Vec ddim_reverse_step(const Vec& x_t, const Vec& eps_hat, double sigma_t, double sigma_prev, double sigma_l,
                      const Vec& noise_draw);

/// Forward (renoising) step of the non-Markovian process:
///   s_t x0 + (sigma_t / sigma_prev) (sqrt(sigma_prev^2 - tau^2) eps0 + tau noise_draw)
/// with noise_draw ~ N(0, I) and 0 <= tau <= sigma_prev.
Vec ddim_forward_step(const Vec& x0_tilde, const Vec& eps0_tilde, double sigma_t, double sigma_prev, double tau,
                      double s_t, const Vec& noise_draw);

/// x-space DDIM sampler with stochasticity eta (eta = 0 matches pf_ode_sample_x).
/// `observe`, when set, sees the state at every index from N down to 0.
Vec ddim_sample_x(const ScoreModel& score, const NoiseSchedule& schedule, const Vec& x_init, double eta, Rng& rng,
                  const Conditioning& cond = {}, double cfg_scale = 1.0,
                  const std::function<void(std::size_t, const Vec&)>& observe = {});

/// What a DDRep step saw, for diagnostics. eps_hat is empty on forward steps.
struct StepEvent {
  std::size_t entry;
  const RePaintStep& step;
  double sigma_t;
  const std::vector<View>& views;
  const std::vector<Vec>& x_t;
  const std::vector<Vec>& eps_hat;
};

struct SamplerConfig {
  double eta = 0.0;
  double cfg_scale = 1.0;
  Conditioning conditioning;
  int views_per_step = 1;
  SolverConfig solver;
  std::function<void(const StepEvent&)> on_step;
};

struct TraceRecord {
  std::uint64_t seed = 0;
  std::size_t step = 0;
  double sigma = 0.0;
  Direction direction = Direction::reverse;
  double residual = 0.0;
  long nfe = 0;
};

/// Optional starting state; missing pieces come from init_params and a
/// standard-normal noise field.
struct DdrepStart {
  std::optional<Vec> theta;
  std::optional<Vec> noise;
};

struct DdrepResult {
  Vec theta;
  NoiseField noise{Vec()};
  long nfe = 0;
  std::vector<TraceRecord> trace;
};

/// The DDRep sampler: the probability-flow dynamics pulled back to parameter
/// space with a separately tracked noise field, DDIM stochasticity eta and
/// RePaint forward/reverse interleaving. Each schedule entry renders a view
/// batch, forms per-view targets, refreshes the noise on the rendered lattice
/// sites and re-fits theta to the targets with one pullback step solve.
/// `seed_tag` is copied into the trace records.
DdrepResult ddrep_sample(const DiffRep& rep, const ScoreModel& score, const NoiseSchedule& schedule,
                         const RePaintSchedule& repaint, const SamplerConfig& cfg, Rng& rng,
                         const DdrepStart& start = {}, std::uint64_t seed_tag = 0);

/// Plain reverse schedule N -> 0 without jumps.
RePaintSchedule reverse_only_schedule(std::size_t steps);

}  // namespace dflow
