// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dflow/diffrep.hpp"
#include "dflow/types.hpp"

#include <string>
#include <utility>
#include <vector>

namespace dflow {

/// n samples (rows) x d dims, tagged with where they came from.
struct SampleBatch {
  Mat samples;
  std::string provenance;

  Index size() const noexcept { return samples.rows(); }
  Index dim() const noexcept { return samples.cols(); }
};

/// Median pairwise Euclidean distance over the pooled rows of a and b.
double median_bandwidth(const Mat& a, const Mat& b);

/// Unbiased MMD^2 with kernel exp(-|x - y|^2 / (2 bw^2)). Needs >= 2 rows each.
double mmd(const Mat& a, const Mat& b, double bandwidth);

struct MmdTest {
  double mmd2 = 0.0;
  double p_value = 1.0;
  double bandwidth = 0.0;
};

/// Permutation test of mmd(a, b) > 0. bandwidth <= 0 selects the median
/// heuristic.
MmdTest mmd_permutation_test(const Mat& a, const Mat& b, double bandwidth, int permutations, Rng& rng);

struct ModeCoverage {
  std::vector<long> counts;
  long unassigned = 0;
};

/// Quarter of the smallest distance between two means (columns of `means`).
double default_mode_radius(const Mat& means);

/// Index of the nearest mean if it lies within radius, else -1.
Index nearest_mode(const Vec& x, const Mat& means, double radius);

/// Assigns each row of `batch` to its nearest mean within `radius`.
ModeCoverage mode_coverage(const Mat& batch, const Mat& means, double radius);

struct ShellStats {
  double mean_norm = 0.0;
  double std_norm = 0.0;
};

/// Mean and sample standard deviation of the row norms.
ShellStats shell_stats(const Mat& batch);

/// Mean Euclidean distance over all distinct row pairs.
double mean_pairwise_distance(const Mat& batch);

/// Mean squared render discrepancy on lattice sites shared by each view pair.
/// Always 0 for a diffrep, since both renders read the same theta.
double view_consistency_residual(const DiffRep& rep, const Vec& theta,
                                 const std::vector<std::pair<View, View>>& view_pairs);

/// Per-view values rendered by something other than a shared diffrep.
struct ViewSample {
  View view;
  Vec values;
};

/// Same discrepancy for independently produced per-view values; `rep` only
/// supplies the lattice-site bookkeeping.
double view_consistency_residual(const DiffRep& rep, const std::vector<std::pair<ViewSample, ViewSample>>& pairs);

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Asymptotic Kolmogorov distribution tail P(K > t).
double kolmogorov_tail(double t);

/// One-sample Kolmogorov-Smirnov test against N(mean, sd^2).
KsResult ks_test_normal(std::vector<double> samples, double mean = 0.0, double sd = 1.0);

/// Central `level` acceptance band [lo, hi] of Binomial(n, p).
std::pair<long, long> binomial_band(long n, double p, double level);

/// One-sided sign test: P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(long wins, long n);

}  // namespace dflow
