// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dflow {

/// Discretized noise-to-signal levels sigma_0 = 0 < sigma_1 < ... < sigma_N.
///
/// Time is an integer index; the product sigma-dot * dt of the continuous
/// formulation is realized as the level difference sigma_i - sigma_{i-1}.
/// Immutable after construction.
class NoiseSchedule {
 public:
  /// Levels ordered by index (levels[0] must be 0, strictly increasing after).
  /// `scales` defaults to all ones (variance-exploding convention).
  static NoiseSchedule from_levels(std::vector<double> levels, std::vector<double> scales = {});

  std::size_t steps() const noexcept { return levels_.size() - 1; }
  double sigma(std::size_t i) const { return levels_.at(i); }
  double scale(std::size_t i) const { return scales_.at(i); }
  double sigma_max() const noexcept { return levels_.back(); }

  /// sigma_i - sigma_{i-1}, i >= 1.
  double sigma_delta(std::size_t i) const { return levels_.at(i) - levels_.at(i - 1); }

  std::span<const double> levels() const noexcept { return levels_; }
  std::span<const double> scales() const noexcept { return scales_; }

 private:
  NoiseSchedule(std::vector<double> levels, std::vector<double> scales)
      : levels_(std::move(levels)), scales_(std::move(scales)) {}

  std::vector<double> levels_;
  std::vector<double> scales_;
};

/// Power-law (rho) discretization between sigma_min and sigma_max.
///
/// sigma_0 = 0 and, for i = 1..N,
///   sigma_i = (smax^(1/rho) + (N - i)/(N - 1) * (smin^(1/rho) - smax^(1/rho)))^rho
/// so that sigma_1 = sigma_min and sigma_N = sigma_max. With N = 1 the single
/// level is sigma_max.
NoiseSchedule make_schedule(int n_steps, double sigma_min, double sigma_max, double rho = 7.0);

/// Per-step stochasticity of the DDIM update:
///   eta * sqrt(sigma_t^-2 + 1) * sqrt(1 - (sigma_prev^2 + 1) / (sigma_t^2 + 1)).
/// Requires sigma_prev < sigma_t. For forward (renoising) moves pass the
/// levels ordered by magnitude.
double sigma_langevin(double eta, double sigma_t, double sigma_prev);

enum class Direction { reverse, forward };

const char* to_string(Direction d) noexcept;

/// One entry of a RePaint schedule. Reverse steps move from `from` to
/// `from - 1`, forward steps from `from` to `from + 1`.
struct RePaintStep {
  Direction direction;
  std::size_t from;

  std::size_t to() const noexcept { return direction == Direction::reverse ? from - 1 : from + 1; }
  bool operator==(const RePaintStep&) const = default;
};

struct RePaintParams {
  int reverse_steps = 1;
  int jump_interval = 1;
  int jump_len = 1;
  int jump_repeat = 0;
};

class RePaintSchedule {
 public:
  RePaintSchedule(RePaintParams params, std::vector<RePaintStep> steps)
      : params_(params), steps_(std::move(steps)) {}

  const RePaintParams& params() const noexcept { return params_; }
  std::span<const RePaintStep> steps() const noexcept { return steps_; }
  std::size_t size() const noexcept { return steps_.size(); }
  std::size_t count(Direction d) const noexcept;

  /// Index the schedule starts from (N).
  std::size_t start_index() const noexcept { return static_cast<std::size_t>(params_.reverse_steps); }

 private:
  RePaintParams params_;
  std::vector<RePaintStep> steps_;
};

/// Reverse steps descend from index N. Whenever the number of net reverse
/// steps taken is a multiple of `jump_interval` and the index is still above
/// 0, `jump_repeat` cycles of (jump_len forward, jump_len reverse) are
/// inserted. A jump is shortened so it never climbs above N.
RePaintSchedule build_repaint_schedule(int reverse_steps, int jump_interval, int jump_len, int jump_repeat);

inline RePaintSchedule build_repaint_schedule(const RePaintParams& p) {
  return build_repaint_schedule(p.reverse_steps, p.jump_interval, p.jump_len, p.jump_repeat);
}

}  // namespace dflow
