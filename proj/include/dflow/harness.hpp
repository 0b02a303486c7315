// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dflow/baselines.hpp"
#include "dflow/diffrep.hpp"
#include "dflow/pullback.hpp"
#include "dflow/sampler.hpp"
#include "dflow/schedule.hpp"
#include "dflow/score.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dflow {

/// Version string embedded in every artifact.
const char* version_string() noexcept;

struct TargetSpec {
  std::vector<double> weights = {1.0};
  /// One entry per component, each `dim` long.
  std::vector<std::vector<double>> means = {{0.0}};
  std::vector<std::vector<double>> variances = {{1.0}};
  /// Conditional densities as component subsets, addressable by label.
  std::map<std::string, std::vector<Index>> conditions;
};

struct RepSpec {
  /// identity | linear | lowpass | siren | panorama
  std::string kind = "identity";
  Index dim = 1;
  /// linear: row-major m x p matrix.
  std::vector<std::vector<double>> matrix;
  Index grid = 16;
  Index modes = 4;
  SirenConfig siren;
};

struct ScheduleSpec {
  int steps = 64;
  double sigma_min = 0.002;
  double sigma_max = 80.0;
  double rho = 7.0;
  /// Overrides the parametric schedule when non-empty (levels[0] = 0).
  std::vector<double> levels;
};

struct SamplerSpec {
  double eta = 0.0;
  double cfg_scale = 1.0;
  std::string conditioning = "uncond";
  int views_per_step = 1;
  int trajectories = 16;
  SolverConfig solver;
};

struct RepaintSpec {
  bool enabled = false;
  int jump_interval = 10;
  int jump_len = 1;
  int jump_repeat = 1;
};

struct BaselineSpec {
  int runs = 16;
  GAConfig ga;
};

struct MetricsSpec {
  /// Mode radius for coverage counts; <= 0 picks a quarter of the smallest
  /// inter-mean distance.
  double mode_radius = 0.0;
  /// MMD against exact draws from the target (0 disables).
  int permutations = 200;
  /// MMD bandwidth; <= 0 selects the median heuristic.
  double bandwidth = 0.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "run";
  TargetSpec target;
  RepSpec rep;
  ScheduleSpec schedule;
  SamplerSpec sampler;
  RepaintSpec repaint;
  BaselineSpec baseline;
  MetricsSpec metrics;
  /// Remote noise predictor; empty uses the analytic target score.
  std::string endpoint;
};

/// Parses and validates a JSON config. Unknown keys, wrong types and
/// out-of-range values throw ConfigError naming the dotted key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical JSON text of a config (every field, fixed key order).
std::string config_snapshot(const RunConfig& cfg);

/// FNV-1a 64 of the canonical snapshot (output directory excluded), as 16
/// hex digits.
std::string config_hash(const RunConfig& cfg);

GaussianMixture build_target(const TargetSpec& spec);
std::shared_ptr<ScoreModel> build_score(const RunConfig& cfg);
std::unique_ptr<DiffRep> build_rep(const RepSpec& spec);
NoiseSchedule build_schedule(const ScheduleSpec& spec);
RePaintSchedule build_repaint(const RunConfig& cfg);

/// One trace line: {"seed","step","sigma","direction","residual","nfe"}.
std::string trace_line(const TraceRecord& rec);

struct RunOutput {
  std::filesystem::path dir;
  std::vector<Vec> thetas;
  /// One row per trajectory: the render of its final parameters.
  Mat samples;
  long nfe = 0;
};

/// DDRep sampling run. Trajectory t draws from make_stream(seed + t) and is
/// tagged with seed + t; `jobs` threads share the trajectories. Writes
/// config.snapshot, trace.jsonl, theta.ckpt, renders/, samples.csv and
/// metrics.json under cfg.out.
RunOutput run_sample(const RunConfig& cfg, int jobs = 1);

/// SDS / SJC gradient-ascent run with the same artifact layout.
RunOutput run_baseline(const RunConfig& cfg, int jobs = 1);

struct OracleCheck {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double tolerance = 0.0;
};

/// Jacobian-product, pullback and solver checks on the configured rep.
std::vector<OracleCheck> run_oracle_check(const RunConfig& cfg);
void print_oracle_table(std::ostream& os, const std::vector<OracleCheck>& checks);

/// Reads a samples.csv written by a run (comment lines start with '#').
Mat read_samples_csv(const std::filesystem::path& path);
void write_samples_csv(const std::filesystem::path& path, const Mat& samples, const std::string& header);

/// Two-sample comparison of stored batches, as a flat JSON object.
std::string compare_batches(const Mat& a, const Mat& b, int permutations, double bandwidth, std::uint64_t seed);

}  // namespace dflow
