// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/metrics.hpp"

#include "dflow/error.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace dflow {

namespace {

void check_batch(const Mat& m, Index min_rows, const char* what) {
  if (m.rows() < min_rows) {
    throw ParameterError(std::string(what) + " needs at least " + std::to_string(min_rows) + " samples");
  }
  if (!m.allFinite()) {
    throw ParameterError(std::string(what) + ": non-finite sample");
  }
}

Mat squared_distances(const Mat& pooled) {
  const Vec sq = pooled.rowwise().squaredNorm();
  Mat d = (-2.0 * pooled * pooled.transpose()).colwise() + sq;
  d.rowwise() += sq.transpose();
  return d.cwiseMax(0.0);
}

/// Unbiased MMD^2 from a pooled kernel matrix and a split assignment.
double mmd_from_kernel(const Mat& k, const std::vector<Index>& idx, Index na) {
  const Index n = static_cast<Index>(idx.size());
  const Index nb = n - na;
  double xx = 0.0;
  double yy = 0.0;
  double xy = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) {
        continue;
      }
      const double v = k(idx[i], idx[j]);
      const bool ia = i < na;
      const bool ja = j < na;
      if (ia && ja) {
        xx += v;
      } else if (!ia && !ja) {
        yy += v;
      } else if (ia) {
        xy += v;
      }
    }
  }
  const double fa = static_cast<double>(na);
  const double fb = static_cast<double>(nb);
  return xx / (fa * (fa - 1.0)) + yy / (fb * (fb - 1.0)) - 2.0 * xy / (fa * fb);
}

Mat pooled_rows(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("sample batches differ in dimension");
  }
  Mat pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  return pooled;
}

}  // namespace

double median_bandwidth(const Mat& a, const Mat& b) {
  const Mat pooled = pooled_rows(a, b);
  const Mat d2 = squared_distances(pooled);
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Index i = 0; i < pooled.rows(); ++i) {
    for (Index j = i + 1; j < pooled.rows(); ++j) {
      dists.push_back(std::sqrt(d2(i, j)));
    }
  }
  if (dists.empty()) {
    throw ParameterError("median bandwidth needs at least two samples");
  }
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  return *mid > 0.0 ? *mid : 1.0;
}

double mmd(const Mat& a, const Mat& b, double bandwidth) {
  check_batch(a, 2, "mmd");
  check_batch(b, 2, "mmd");
  if (!(bandwidth > 0.0)) {
    throw ParameterError("mmd bandwidth must be positive");
  }
  const Mat pooled = pooled_rows(a, b);
  const Mat k = (-squared_distances(pooled) / (2.0 * bandwidth * bandwidth)).array().exp().matrix();
  std::vector<Index> idx(static_cast<std::size_t>(pooled.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  return mmd_from_kernel(k, idx, a.rows());
}

MmdTest mmd_permutation_test(const Mat& a, const Mat& b, double bandwidth, int permutations, Rng& rng) {
  check_batch(a, 2, "mmd");
  check_batch(b, 2, "mmd");
  if (permutations < 1) {
    throw ParameterError("permutation test needs at least one permutation");
  }
  MmdTest out;
  out.bandwidth = bandwidth > 0.0 ? bandwidth : median_bandwidth(a, b);
  const Mat pooled = pooled_rows(a, b);
  const Mat k = (-squared_distances(pooled) / (2.0 * out.bandwidth * out.bandwidth)).array().exp().matrix();
  std::vector<Index> idx(static_cast<std::size_t>(pooled.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  out.mmd2 = mmd_from_kernel(k, idx, a.rows());
  int at_least = 0;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(idx.begin(), idx.end(), rng);
    if (mmd_from_kernel(k, idx, a.rows()) >= out.mmd2) {
      ++at_least;
    }
  }
  out.p_value = static_cast<double>(at_least + 1) / static_cast<double>(permutations + 1);
  return out;
}

double default_mode_radius(const Mat& means) {
  if (means.cols() < 2) {
    throw ParameterError("default mode radius needs at least two means");
  }
  double best = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < means.cols(); ++i) {
    for (Index j = i + 1; j < means.cols(); ++j) {
      best = std::min(best, (means.col(i) - means.col(j)).norm());
    }
  }
  return 0.25 * best;
}

Index nearest_mode(const Vec& x, const Mat& means, double radius) {
  if (x.size() != means.rows()) {
    throw DimensionError("sample and means differ in dimension");
  }
  Index best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index k = 0; k < means.cols(); ++k) {
    const double d = (x - means.col(k)).norm();
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best_d <= radius ? best : -1;
}

ModeCoverage mode_coverage(const Mat& batch, const Mat& means, double radius) {
  if (batch.rows() == 0) {
    throw ParameterError("mode coverage of an empty batch");
  }
  if (!(radius > 0.0)) {
    throw ParameterError("mode radius must be positive");
  }
  if (means.cols() == 0) {
    throw ParameterError("mode coverage needs at least one mean");
  }
  ModeCoverage cov;
  cov.counts.assign(static_cast<std::size_t>(means.cols()), 0);
  for (Index i = 0; i < batch.rows(); ++i) {
    const Index k = nearest_mode(batch.row(i).transpose(), means, radius);
    if (k < 0) {
      ++cov.unassigned;
    } else {
      ++cov.counts[static_cast<std::size_t>(k)];
    }
  }
  return cov;
}

ShellStats shell_stats(const Mat& batch) {
  check_batch(batch, 1, "shell_stats");
  const Vec norms = batch.rowwise().norm();
  ShellStats s;
  s.mean_norm = norms.mean();
  if (norms.size() > 1) {
    s.std_norm = std::sqrt((norms.array() - s.mean_norm).square().sum() / static_cast<double>(norms.size() - 1));
  }
  return s;
}

double mean_pairwise_distance(const Mat& batch) {
  check_batch(batch, 2, "mean_pairwise_distance");
  double total = 0.0;
  long pairs = 0;
  for (Index i = 0; i < batch.rows(); ++i) {
    for (Index j = i + 1; j < batch.rows(); ++j) {
      total += (batch.row(i) - batch.row(j)).norm();
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double view_consistency_residual(const DiffRep& rep, const Vec& theta,
                                 const std::vector<std::pair<View, View>>& view_pairs) {
  std::vector<std::pair<ViewSample, ViewSample>> samples;
  samples.reserve(view_pairs.size());
  for (const auto& [a, b] : view_pairs) {
    samples.emplace_back(ViewSample{a, rep.render(theta, a)}, ViewSample{b, rep.render(theta, b)});
  }
  return view_consistency_residual(rep, samples);
}

double view_consistency_residual(const DiffRep& rep, const std::vector<std::pair<ViewSample, ViewSample>>& pairs) {
  double total = 0.0;
  long shared = 0;
  for (const auto& [a, b] : pairs) {
    if (a.values.size() != rep.output_dim() || b.values.size() != rep.output_dim()) {
      throw DimensionError("per-view values do not match the rep's render size");
    }
    const auto sites_a = rep.lattice_sites(a.view);
    const auto sites_b = rep.lattice_sites(b.view);
    std::map<Index, Index> where_b;
    for (std::size_t i = 0; i < sites_b.size(); ++i) {
      where_b.emplace(sites_b[i], static_cast<Index>(i));
    }
    for (std::size_t i = 0; i < sites_a.size(); ++i) {
      const auto it = where_b.find(sites_a[i]);
      if (it != where_b.end()) {
        const double diff = a.values[static_cast<Index>(i)] - b.values[it->second];
        total += diff * diff;
        ++shared;
      }
    }
  }
  if (shared == 0) {
    throw ParameterError("view pairs share no lattice sites");
  }
  return total / static_cast<double>(shared);
}

double kolmogorov_tail(double t) {
  if (t <= 0.0) {
    return 1.0;
  }
  if (t < 0.3) {
    // The alternating series converges slowly here and the tail is 1 to
    // double precision anyway.
    return 1.0;
  }
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * t * t);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-300) {
      break;
    }
  }
  return std::clamp(sum, 0.0, 1.0);
}

KsResult ks_test_normal(std::vector<double> samples, double mean, double sd) {
  if (samples.empty()) {
    throw ParameterError("KS test of an empty sample");
  }
  if (!(sd > 0.0)) {
    throw ParameterError("KS reference sd must be positive");
  }
  std::sort(samples.begin(), samples.end());
  const boost::math::normal_distribution<double> ref(mean, sd);
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = boost::math::cdf(ref, samples[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  const double rn = std::sqrt(n);
  return {d, kolmogorov_tail((rn + 0.12 + 0.11 / rn) * d)};
}

std::pair<long, long> binomial_band(long n, double p, double level) {
  if (n < 1 || p < 0.0 || p > 1.0 || level <= 0.0 || level >= 1.0) {
    throw ParameterError("binomial band needs n >= 1, p in [0, 1], level in (0, 1)");
  }
  const boost::math::binomial_distribution<double> dist(static_cast<double>(n), p);
  const double alpha = 0.5 * (1.0 - level);
  // Smallest lo with P(X < lo) <= alpha and largest hi with P(X > hi) <= alpha.
  long lo = 0;
  while (lo < n && boost::math::cdf(dist, static_cast<double>(lo)) <= alpha) {
    ++lo;
  }
  long hi = n;
  while (hi > 0 && boost::math::cdf(boost::math::complement(dist, static_cast<double>(hi - 1))) <= alpha) {
    --hi;
  }
  return {lo, hi};
}

double sign_test_p(long wins, long n) {
  if (n < 1 || wins < 0 || wins > n) {
    throw ParameterError("sign test needs 0 <= wins <= n, n >= 1");
  }
  if (wins == 0) {
    return 1.0;
  }
  const boost::math::binomial_distribution<double> dist(static_cast<double>(n), 0.5);
  return boost::math::cdf(boost::math::complement(dist, static_cast<double>(wins - 1)));
}

}  // namespace dflow
