// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/schedule.hpp"

#include "dflow/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dflow {

NoiseSchedule NoiseSchedule::from_levels(std::vector<double> levels, std::vector<double> scales) {
  if (levels.size() < 2) {
    throw ParameterError("noise schedule needs at least two levels");
  }
  if (levels.front() != 0.0) {
    throw ParameterError("noise schedule must start at sigma_0 = 0");
  }
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (!std::isfinite(levels[i]) || !(levels[i] > levels[i - 1])) {
      throw ParameterError("noise levels must be finite and strictly increasing with the index (at " +
                           std::to_string(i) + ")");
    }
  }
  if (scales.empty()) {
    scales.assign(levels.size(), 1.0);
  }
  if (scales.size() != levels.size()) {
    throw ParameterError("signal scales must match the number of noise levels");
  }
  if (std::any_of(scales.begin(), scales.end(), [](double s) { return !(s > 0.0) || !std::isfinite(s); })) {
    throw ParameterError("signal scales must be positive");
  }
  return NoiseSchedule(std::move(levels), std::move(scales));
}

NoiseSchedule make_schedule(int n_steps, double sigma_min, double sigma_max, double rho) {
  if (n_steps < 1) {
    throw ParameterError("n_steps must be >= 1");
  }
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min) || !std::isfinite(sigma_max)) {
    throw ParameterError("need 0 < sigma_min < sigma_max");
  }
  if (!(rho > 0.0)) {
    throw ParameterError("rho must be positive");
  }
  const auto n = static_cast<std::size_t>(n_steps);
  std::vector<double> levels(n + 1, 0.0);
  if (n == 1) {
    levels[1] = sigma_max;
    return NoiseSchedule::from_levels(std::move(levels));
  }
  const double lo = std::pow(sigma_min, 1.0 / rho);
  const double hi = std::pow(sigma_max, 1.0 / rho);
  for (std::size_t i = 1; i <= n; ++i) {
    const double frac = static_cast<double>(n - i) / static_cast<double>(n - 1);
    levels[i] = std::pow(hi + frac * (lo - hi), rho);
  }
  // pin the endpoints against pow round-off
  levels[1] = sigma_min;
  levels[n] = sigma_max;
  return NoiseSchedule::from_levels(std::move(levels));
}

double sigma_langevin(double eta, double sigma_t, double sigma_prev) {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw ParameterError("eta must lie in [0, 1]");
  }
  if (!(sigma_t > 0.0) || sigma_prev < 0.0) {
    throw ParameterError("sigma_langevin needs sigma_t > 0 and sigma_prev >= 0");
  }
  if (!(sigma_prev < sigma_t)) {
    throw ScheduleOrderError("sigma_langevin needs sigma_prev < sigma_t");
  }
  const double st2 = sigma_t * sigma_t;
  const double sp2 = sigma_prev * sigma_prev;
  const double inner = std::max(0.0, 1.0 - (sp2 + 1.0) / (st2 + 1.0));
  return eta * std::sqrt(1.0 / st2 + 1.0) * std::sqrt(inner);
}

const char* to_string(Direction d) noexcept {
  return d == Direction::reverse ? "reverse" : "forward";
}

std::size_t RePaintSchedule::count(Direction d) const noexcept {
  return static_cast<std::size_t>(
      std::count_if(steps_.begin(), steps_.end(), [d](const RePaintStep& s) { return s.direction == d; }));
}

RePaintSchedule build_repaint_schedule(int reverse_steps, int jump_interval, int jump_len, int jump_repeat) {
  if (reverse_steps < 1) {
    throw ParameterError("reverse_steps must be >= 1");
  }
  if (jump_interval < 1 || jump_len < 1) {
    throw ParameterError("jump_interval and jump_len must be >= 1");
  }
  if (jump_repeat < 0) {
    throw ParameterError("jump_repeat must be >= 0");
  }
  const auto n = static_cast<std::size_t>(reverse_steps);
  std::vector<RePaintStep> steps;
  std::size_t index = n;
  std::size_t net_reverse = 0;
  while (index > 0) {
    steps.push_back({Direction::reverse, index});
    --index;
    ++net_reverse;
    if (index == 0 || jump_repeat == 0 || net_reverse % static_cast<std::size_t>(jump_interval) != 0) {
      continue;
    }
    const std::size_t len = std::min(static_cast<std::size_t>(jump_len), n - index);
    for (int r = 0; r < jump_repeat; ++r) {
      for (std::size_t k = 0; k < len; ++k) {
        steps.push_back({Direction::forward, index});
        ++index;
      }
      for (std::size_t k = 0; k < len; ++k) {
        steps.push_back({Direction::reverse, index});
        --index;
      }
    }
  }
  return RePaintSchedule({reverse_steps, jump_interval, jump_len, jump_repeat}, std::move(steps));
}

}  // namespace dflow
