// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/baselines.hpp"

#include "dflow/error.hpp"

#include <cmath>
#include <random>

namespace dflow {

namespace {

Conditioning view_conditioning(const DiffRep& rep, const View& view, const Conditioning& base) {
  return Conditioning{base.label, rep.view_tag(view)};
}

double weight_for(Weighting w, double sigma) { return w == Weighting::sigma ? sigma : 1.0; }

/// Descent direction for one (view, eps) draw.
Vec descent_direction(const DiffRep& rep, const Vec& theta, const View& view, const ScoreModel& score,
                      const GAConfig& cfg, double sigma, const Vec& eps) {
  const Conditioning cond = view_conditioning(rep, view, cfg.conditioning);
  if (cfg.method == GAMethod::sds) {
    return sds_gradient(rep, theta, view, score, sigma, weight_for(cfg.weighting, sigma), eps, cond, cfg.cfg_scale);
  }
  return -sjc_gradient(rep, theta, view, score, sigma, eps, cond, cfg.cfg_scale);
}

double draw_sigma(const GAConfig& cfg, const NoiseSchedule& schedule, int it, Rng& rng) {
  switch (cfg.sigma_rule) {
    case SigmaRule::uniform: {
      std::uniform_int_distribution<std::size_t> pick(1, schedule.steps());
      return schedule.sigma(pick(rng));
    }
    case SigmaRule::annealed: {
      const double frac = cfg.iterations > 1 ? static_cast<double>(it) / (cfg.iterations - 1) : 1.0;
      return cfg.sigma_start + frac * (cfg.sigma_end - cfg.sigma_start);
    }
    case SigmaRule::fixed:
      return cfg.sigma_start;
  }
  return cfg.sigma_start;
}

/// Mean descent direction over the view batch and noise draws.
Vec batch_direction(const DiffRep& rep, const Vec& theta, const ScoreModel& score, const GAConfig& cfg,
                    double sigma, int draws, Rng& rng, long& nfe) {
  Vec g = Vec::Zero(rep.param_dim());
  int count = 0;
  for (int d = 0; d < draws; ++d) {
    const View view = rep.singleton_view() ? View{} : rep.sample_view(rng);
    const Vec eps = standard_normal(rep.output_dim(), rng);
    g += descent_direction(rep, theta, view, score, cfg, sigma, eps);
    ++count;
    ++nfe;
    if (cfg.antithetic) {
      g += descent_direction(rep, theta, view, score, cfg, sigma, -eps);
      ++count;
      ++nfe;
    }
  }
  return g / static_cast<double>(count);
}

}  // namespace

Vec sds_gradient(const DiffRep& rep, const Vec& theta, const View& view, const ScoreModel& score, double sigma,
                 double weight, const Vec& eps, const Conditioning& cond, double cfg_scale) {
  if (eps.size() != rep.output_dim()) {
    throw DimensionError("SDS noise draw does not match the render size");
  }
  const Vec x = rep.render(theta, view) + sigma * eps;
  const Vec eps_hat = score.eps_hat(x, sigma, cond, cfg_scale);
  return weight * rep.vjp(theta, view, eps_hat - eps);
}

Vec sjc_gradient(const DiffRep& rep, const Vec& theta, const View& view, const ScoreModel& score, double sigma,
                 const Vec& eps, const Conditioning& cond, double cfg_scale) {
  if (eps.size() != rep.output_dim()) {
    throw DimensionError("SJC noise draw does not match the render size");
  }
  const Vec x = rep.render(theta, view) + sigma * eps;
  const Vec eps_hat = score.eps_hat(x, sigma, cond, cfg_scale);
  return rep.vjp(theta, view, score_from_eps(eps_hat, sigma));
}

GAMethod parse_ga_method(const std::string& name) {
  if (name == "sds") return GAMethod::sds;
  if (name == "sjc") return GAMethod::sjc;
  throw ParameterError("unknown baseline method '" + name + "' (expected sds or sjc)");
}

SigmaRule parse_sigma_rule(const std::string& name) {
  if (name == "uniform") return SigmaRule::uniform;
  if (name == "annealed") return SigmaRule::annealed;
  if (name == "fixed") return SigmaRule::fixed;
  throw ParameterError("unknown sigma rule '" + name + "' (expected uniform, annealed or fixed)");
}

Weighting parse_weighting(const std::string& name) {
  if (name == "sigma") return Weighting::sigma;
  if (name == "unit") return Weighting::unit;
  throw ParameterError("unknown weighting '" + name + "' (expected sigma or unit)");
}

const char* to_string(GAMethod m) noexcept { return m == GAMethod::sds ? "sds" : "sjc"; }

const char* to_string(SigmaRule r) noexcept {
  switch (r) {
    case SigmaRule::uniform:
      return "uniform";
    case SigmaRule::annealed:
      return "annealed";
    case SigmaRule::fixed:
      return "fixed";
  }
  return "?";
}

const char* to_string(Weighting w) noexcept { return w == Weighting::sigma ? "sigma" : "unit"; }

GAResult run_gradient_ascent(const DiffRep& rep, const ScoreModel& score, const NoiseSchedule& schedule,
                             const GAConfig& cfg, Rng& rng, const std::optional<Vec>& theta0,
                             std::uint64_t seed_tag) {
  if (cfg.iterations < 1) {
    throw ParameterError("gradient ascent needs iterations >= 1");
  }
  if (cfg.views_per_step < 1) {
    throw ParameterError("views_per_step must be >= 1");
  }
  if (cfg.lr_final_fraction <= 0.0) {
    throw ParameterError("lr_final_fraction must be positive");
  }
  if (score.dim() != rep.output_dim()) {
    throw DimensionError("score model dimension does not match render size");
  }
  GAResult result;
  if (theta0) {
    if (theta0->size() != rep.param_dim()) {
      throw DimensionError("initial theta does not match the rep");
    }
    result.theta = *theta0;
  } else {
    result.theta = init_params(rep, InitOptions{}, rng).theta;
  }

  Adam adam(rep.param_dim(), cfg.adam);
  const double decay =
      cfg.iterations > 1 ? std::pow(cfg.lr_final_fraction, 1.0 / static_cast<double>(cfg.iterations - 1)) : 1.0;
  double lr_scale = 1.0;
  for (int it = 0; it < cfg.iterations; ++it) {
    const double sigma = draw_sigma(cfg, schedule, it, rng);
    const Vec g = batch_direction(rep, result.theta, score, cfg, sigma, cfg.views_per_step, rng, result.nfe);
    result.theta -= adam.step(g, lr_scale);
    lr_scale *= decay;
    if (!result.theta.allFinite()) {
      throw DivergenceError("gradient ascent produced non-finite parameters", static_cast<std::size_t>(it));
    }
    result.trace.push_back(
        TraceRecord{seed_tag, static_cast<std::size_t>(it), sigma, Direction::reverse, g.norm(), result.nfe});
  }
  return result;
}

double gradient_norm_estimate(const DiffRep& rep, const Vec& theta, const ScoreModel& score, const GAConfig& cfg,
                              double sigma, int draws, Rng& rng) {
  if (draws < 1) {
    throw ParameterError("need at least one draw");
  }
  GAConfig paired = cfg;
  paired.antithetic = true;
  long nfe = 0;
  return batch_direction(rep, theta, score, paired, sigma, draws, rng, nfe).norm();
}

}  // namespace dflow
