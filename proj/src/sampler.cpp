// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/sampler.hpp"

#include "dflow/error.hpp"

#include <cmath>
#include <unordered_map>

namespace dflow {

namespace {

void check_finite(const Vec& x, std::size_t step, const char* what) {
  if (!x.allFinite()) {
    throw DivergenceError(std::string(what) + " became non-finite", step);
  }
}

void check_init(const ScoreModel& score, const Vec& x_init) {
  if (x_init.size() != score.dim()) {
    throw DimensionError("initial state has " + std::to_string(x_init.size()) + " entries, score model expects " +
                         std::to_string(score.dim()));
  }
}

}  // namespace

Vec pf_ode_sample_x(const ScoreModel& score, const NoiseSchedule& schedule, const Vec& x_init,
                    const Conditioning& cond, double cfg_scale) {
  check_init(score, x_init);
  Vec x = x_init;
  for (std::size_t i = schedule.steps(); i >= 1; --i) {
    const Vec eps = score.eps_hat(x, schedule.sigma(i), cond, cfg_scale);
    x += (schedule.sigma(i - 1) - schedule.sigma(i)) * eps;
    check_finite(x, i, "x-space state");
  }
  return x;
}

Vec ddim_reverse_step(const Vec& x_t, const Vec& eps_hat, double sigma_t, double sigma_prev, double sigma_l,
                      const Vec& noise_draw) {
  if (!(sigma_prev < sigma_t)) {
    throw ScheduleOrderError("reverse step needs sigma_prev < sigma_t");
  }
  if (sigma_l < 0.0 || sigma_l > 1.0) {
    throw ParameterError("sigma_langevin must lie in [0, 1]");
  }
  if (eps_hat.size() != x_t.size() || noise_draw.size() != x_t.size()) {
    throw DimensionError("reverse step operands differ in size");
  }
  const double keep = std::sqrt(1.0 - sigma_l * sigma_l);
  return x_t - sigma_t * eps_hat + (keep * sigma_prev) * eps_hat + sigma_prev * noise_draw;
}

Vec ddim_forward_step(const Vec& x0_tilde, const Vec& eps0_tilde, double sigma_t, double sigma_prev, double tau,
                      double s_t, const Vec& noise_draw) {
  if (!(sigma_prev > 0.0)) {
    throw ParameterError("forward step needs sigma_prev > 0");
  }
  if (tau < 0.0 || tau > sigma_prev) {
    throw ParameterError("forward step needs 0 <= tau <= sigma_prev");
  }
  if (eps0_tilde.size() != x0_tilde.size() || noise_draw.size() != x0_tilde.size()) {
    throw DimensionError("forward step operands differ in size");
  }
  const double keep = std::sqrt(sigma_prev * sigma_prev - tau * tau);
  return s_t * x0_tilde + (sigma_t / sigma_prev) * (keep * eps0_tilde + tau * noise_draw);
}

Vec ddim_sample_x(const ScoreModel& score, const NoiseSchedule& schedule, const Vec& x_init, double eta, Rng& rng,
                  const Conditioning& cond, double cfg_scale,
                  const std::function<void(std::size_t, const Vec&)>& observe) {
  check_init(score, x_init);
  Vec x = x_init;
  if (observe) {
    observe(schedule.steps(), x);
  }
  for (std::size_t i = schedule.steps(); i >= 1; --i) {
    const double s_t = schedule.sigma(i);
    const double s_p = schedule.sigma(i - 1);
    const double sl = sigma_langevin(eta, s_t, s_p);
    const Vec eps = score.eps_hat(x, s_t, cond, cfg_scale);
    const Vec draw = sl == 0.0 ? Vec::Zero(x.size()) : Vec(sl * standard_normal(x.size(), rng));
    x = ddim_reverse_step(x, eps, s_t, s_p, sl, draw);
    check_finite(x, i, "x-space state");
    if (observe) {
      observe(i - 1, x);
    }
  }
  return x;
}

RePaintSchedule reverse_only_schedule(std::size_t steps) {
  const int n = static_cast<int>(steps);
  return build_repaint_schedule(n, n, 1, 0);
}

DdrepResult ddrep_sample(const DiffRep& rep, const ScoreModel& score, const NoiseSchedule& schedule,
                         const RePaintSchedule& repaint, const SamplerConfig& cfg, Rng& rng, const DdrepStart& start,
                         std::uint64_t seed_tag) {
  if (score.dim() != rep.output_dim()) {
    throw DimensionError("score model dimension " + std::to_string(score.dim()) + " does not match render size " +
                         std::to_string(rep.output_dim()));
  }
  if (repaint.start_index() != schedule.steps()) {
    throw ParameterError("RePaint schedule covers " + std::to_string(repaint.start_index()) +
                         " steps but the noise schedule has " + std::to_string(schedule.steps()));
  }
  if (cfg.views_per_step < 1) {
    throw ParameterError("views_per_step must be >= 1");
  }

  DdrepResult result;
  if (start.theta) {
    if (start.theta->size() != rep.param_dim()) {
      throw DimensionError("initial theta does not match the rep");
    }
    result.theta = *start.theta;
  } else {
    result.theta = init_params(rep, InitOptions{}, rng).theta;
  }
  if (start.noise) {
    if (start.noise->size() != rep.lattice_size()) {
      throw DimensionError("initial noise does not cover the rep's lattice");
    }
    result.noise = NoiseField(*start.noise);
  } else {
    result.noise = NoiseField::standard(rep.lattice_size(), rng);
  }

  Vec& theta = result.theta;
  NoiseField& field = result.noise;
  const auto entries = repaint.steps();
  const std::size_t b = static_cast<std::size_t>(cfg.views_per_step);

  for (std::size_t k = 0; k < entries.size(); ++k) {
    const RePaintStep& entry = entries[k];
    const bool reverse = entry.direction == Direction::reverse;
    const double sigma_t = schedule.sigma(entry.from);
    const double sigma_next = schedule.sigma(entry.to());
    const double sl = reverse ? sigma_langevin(cfg.eta, sigma_t, sigma_next)
                              : sigma_langevin(cfg.eta, sigma_next, sigma_t);
    const double keep = std::sqrt(1.0 - sl * sl);

    const auto views = sample_views(rep, cfg.views_per_step, rng);
    std::vector<std::vector<Index>> sites(b);
    std::vector<Vec> renders(b);
    std::vector<Vec> eps(b);
    std::vector<Vec> xs(b);
    for (std::size_t j = 0; j < b; ++j) {
      sites[j] = rep.lattice_sites(views[j]);
      renders[j] = rep.render(theta, views[j]);
      eps[j] = field.extract(sites[j]);
      xs[j] = renders[j] + sigma_t * eps[j];
    }

    // One Langevin draw per lattice site touched by the batch, in
    // first-touch order, so overlapping views see the same value.
    std::unordered_map<Index, double> langevin;
    std::vector<Index> touched;
    for (const auto& view_sites : sites) {
      for (Index s : view_sites) {
        if (langevin.emplace(s, 0.0).second) {
          touched.push_back(s);
        }
      }
    }
    if (sl > 0.0) {
      std::normal_distribution<double> normal;
      for (Index s : touched) {
        langevin[s] = sl * normal(rng);
      }
    }
    auto langevin_at = [&](const std::vector<Index>& view_sites) {
      Vec v(static_cast<Index>(view_sites.size()));
      for (std::size_t i = 0; i < view_sites.size(); ++i) {
        v[static_cast<Index>(i)] = langevin.at(view_sites[i]);
      }
      return v;
    };

    std::vector<Vec> eps_hat;
    std::vector<Vec> x_next(b);
    if (reverse) {
      std::vector<Conditioning> conds(b);
      eps_hat.resize(b);
      for (std::size_t j = 0; j < b; ++j) {
        const Conditioning cond{cfg.conditioning.label, rep.view_tag(views[j])};
        eps_hat[j] = score.eps_hat(xs[j], sigma_t, cond, cfg.cfg_scale);
        if (eps_hat[j].size() != xs[j].size()) {
          throw ShapeError("score model returned " + std::to_string(eps_hat[j].size()) + " values for a " +
                           std::to_string(xs[j].size()) + "-dim input");
        }
        ++result.nfe;
        x_next[j] = ddim_reverse_step(xs[j], eps_hat[j], sigma_t, sigma_next, sl, langevin_at(sites[j]));
      }
    } else {
      for (std::size_t j = 0; j < b; ++j) {
        x_next[j] = renders[j] + sigma_next * (keep * eps[j] + langevin_at(sites[j]));
      }
    }

    if (cfg.on_step) {
      cfg.on_step(StepEvent{k, entry, sigma_t, views, xs, eps_hat});
    }

    // Noise refresh on the rendered sites, before the parameter update.
    Vec& values = field.values();
    for (Index s : touched) {
      values[s] = keep * values[s] + langevin.at(s);
    }

    PullbackStepProblem problem{theta, views, {}, cfg.solver};
    problem.increments.reserve(b);
    for (std::size_t j = 0; j < b; ++j) {
      const Vec target = x_next[j] - sigma_next * field.extract(sites[j]);
      problem.increments.push_back(renders[j] - target);
    }
    PullbackSolution sol;
    try {
      sol = solve_delta_theta(problem, rep);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("suboptimizer diverged: ") + e.what(), k);
    }
    theta -= sol.delta_theta;
    check_finite(theta, k, "theta");

    result.trace.push_back(TraceRecord{seed_tag, k, sigma_t, entry.direction, sol.residual, result.nfe});
  }
  return result;
}

}  // namespace dflow
