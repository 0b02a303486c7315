// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/error.hpp"
#include "dflow/metrics.hpp"
#include "dflow/sampler.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

namespace dflow {
namespace {

Mat normal_rows(Index n, Index d, double mean, Rng& rng) {
  return (standard_normal(n * d, rng).array() + mean).matrix().reshaped(n, d);
}

Mat shuffled_rows(const Mat& m, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(m.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  Mat out(m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) out.row(i) = m.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

TEST(Mmd, SplitHalfIsNotSignificant) {
  Rng rng = make_stream(81);
  const Mat all = normal_rows(400, 2, 0.0, rng);
  const MmdTest t = mmd_permutation_test(all.topRows(200), all.bottomRows(200), 0.0, 200, rng);
  EXPECT_GT(t.p_value, 0.05);
  EXPECT_GT(t.bandwidth, 0.0);
}

TEST(Mmd, ShiftedNormalsAreSignificant) {
  Rng rng = make_stream(82);
  const Mat a = normal_rows(500, 1, 0.0, rng);
  const Mat b = normal_rows(500, 1, 5.0, rng);
  const MmdTest t = mmd_permutation_test(a, b, 1.0, 200, rng);
  EXPECT_LT(t.p_value, 0.001 + 1.0 / 201.0);
  EXPECT_GT(t.mmd2, 0.5);
}

TEST(Mmd, SymmetricAndOrderInvariant) {
  Rng rng = make_stream(83);
  const Mat a = normal_rows(60, 3, 0.0, rng);
  const Mat b = normal_rows(50, 3, 0.4, rng);
  const double ab = mmd(a, b, 1.3);
  EXPECT_NEAR(ab, mmd(b, a, 1.3), 1e-12);
  EXPECT_NEAR(ab, mmd(shuffled_rows(a, rng), shuffled_rows(b, rng), 1.3), 1e-12);
  EXPECT_NEAR(median_bandwidth(a, b), median_bandwidth(shuffled_rows(b, rng), a), 1e-12);
}

TEST(Mmd, MatchesDirectUnbiasedEstimate) {
  Rng rng = make_stream(84);
  const Mat a = normal_rows(7, 2, 0.0, rng);
  const Mat b = normal_rows(9, 2, 1.0, rng);
  const double bw = 0.8;
  auto k = [&](const Vec& x, const Vec& y) { return std::exp(-(x - y).squaredNorm() / (2.0 * bw * bw)); };
  double xx = 0.0;
  double yy = 0.0;
  double xy = 0.0;
  for (Index i = 0; i < 7; ++i)
    for (Index j = 0; j < 7; ++j)
      if (i != j) xx += k(a.row(i), a.row(j));
  for (Index i = 0; i < 9; ++i)
    for (Index j = 0; j < 9; ++j)
      if (i != j) yy += k(b.row(i), b.row(j));
  for (Index i = 0; i < 7; ++i)
    for (Index j = 0; j < 9; ++j) xy += k(a.row(i), b.row(j));
  const double expect = xx / 42.0 + yy / 72.0 - 2.0 * xy / 63.0;
  EXPECT_NEAR(mmd(a, b, bw), expect, 1e-12);
  EXPECT_THROW(mmd(a, b, 0.0), ParameterError);
  EXPECT_THROW(mmd(a.topRows(1), b, 1.0), ParameterError);
}

TEST(ModeCoverage, AllAtFirstMean) {
  Mat means(2, 3);
  means << 0.0, 5.0, 10.0, 0.0, 0.0, 0.0;
  const Mat batch = means.col(0).transpose().replicate(25, 1);
  const ModeCoverage c = mode_coverage(batch, means, default_mode_radius(means));
  EXPECT_EQ(c.counts, (std::vector<long>{25, 0, 0}));
  EXPECT_EQ(c.unassigned, 0);
  EXPECT_DOUBLE_EQ(default_mode_radius(means), 1.25);
}

TEST(ModeCoverage, SymmetricMixtureHitsBothModes) {
  Mat means(2, 2);
  means << -3.0, 3.0, 0.0, 0.0;
  const AnalyticScoreModel score(GaussianMixture(Vec::Constant(2, 0.5), means, Mat::Constant(2, 2, 0.25)));
  const NoiseSchedule sched = make_schedule(64, 0.002, 80.0);
  Rng rng = make_stream(85);
  const long n = 400;
  Mat batch(n, 2);
  for (long i = 0; i < n; ++i) {
    batch.row(i) = pf_ode_sample_x(score, sched, 80.0 * standard_normal(2, rng)).transpose();
  }
  const ModeCoverage c = mode_coverage(batch, means, default_mode_radius(means));
  EXPECT_EQ(c.counts[0] + c.counts[1] + c.unassigned, n);
  const auto band = oracle::binomial_band(n, 0.5, 0.99);
  EXPECT_GE(c.counts[0], band.first);
  EXPECT_LE(c.counts[0], band.second);
  const ModeCoverage shuffled = mode_coverage(shuffled_rows(batch, rng), means, default_mode_radius(means));
  EXPECT_EQ(shuffled.counts, c.counts);
}

TEST(ModeCoverage, Errors) {
  const Mat means = Mat::Zero(2, 2);
  EXPECT_THROW(mode_coverage(Mat(0, 2), means, 1.0), ParameterError);
  EXPECT_THROW(mode_coverage(Mat::Zero(3, 2), means, 0.0), ParameterError);
  EXPECT_EQ(nearest_mode(Vec::Constant(2, 100.0), Mat::Identity(2, 2), 1.0), -1);
}

TEST(ShellStats, StandardNormalMatchesChiMoments) {
  Rng rng = make_stream(86);
  const Index d = 1000;
  const Index n = 500;
  const ShellStats s = shell_stats(normal_rows(n, d, 0.0, rng));
  const auto [chi_mean, chi_sd] = oracle::chi_moments(static_cast<double>(d));
  EXPECT_NEAR(chi_mean, std::sqrt(999.5), 1e-3);
  EXPECT_NEAR(s.mean_norm, chi_mean, 3.0 * chi_sd / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(s.std_norm / chi_sd, 1.0, 0.2);
}

TEST(ShellStats, ZeroAndScaling) {
  const ShellStats z = shell_stats(Mat::Zero(5, 4));
  EXPECT_EQ(z.mean_norm, 0.0);
  EXPECT_EQ(z.std_norm, 0.0);
  Rng rng = make_stream(87);
  const Mat b = normal_rows(30, 4, 1.0, rng);
  const ShellStats s = shell_stats(b);
  const ShellStats s3 = shell_stats(2.5 * b);
  EXPECT_NEAR(s3.mean_norm, 2.5 * s.mean_norm, 1e-12);
  EXPECT_NEAR(s3.std_norm, 2.5 * s.std_norm, 1e-12);
}

TEST(PairwiseDistance, HandExample) {
  const Mat b = (Mat(3, 1) << 0.0, 1.0, 3.0).finished();
  EXPECT_NEAR(mean_pairwise_distance(b), (1.0 + 3.0 + 2.0) / 3.0, 1e-15);
}

SirenConfig wide_panorama() {
  SirenConfig c;
  c.height = 8;
  c.width = 64;
  c.channels = 1;
  c.embed_freqs = 2;
  c.hidden = {4};
  c.panorama = true;
  c.aspect = 4;
  return c;
}

TEST(ViewConsistency, SharedParametersGiveZero) {
  const SirenRep rep(wide_panorama());
  Rng rng = make_stream(88);
  const Vec theta = rep.random_params(rng);
  std::vector<std::pair<View, View>> pairs;
  for (std::int64_t k = 0; k < 10; ++k) pairs.push_back({View{7 * k}, View{7 * k + 4}});
  EXPECT_EQ(view_consistency_residual(rep, theta, pairs), 0.0);
}

TEST(ViewConsistency, IndependentViewsGiveTwiceTheVariance) {
  const SirenRep rep(wide_panorama());
  Rng rng = make_stream(89);
  Mat means(1, 2);
  means << -1.0, 1.0;
  const GaussianMixture site(Vec::Constant(2, 0.5), means, Mat::Constant(1, 2, 0.25));
  const double var = 0.25 + 1.0;
  auto draw_view = [&](const View& v) {
    const Mat s = site.sample(rep.output_dim(), rng);
    return ViewSample{v, Vec(s.row(0).transpose())};
  };
  std::vector<std::pair<ViewSample, ViewSample>> pairs;
  for (std::int64_t k = 0; k < 20; ++k) pairs.push_back({draw_view(View{9 * k}), draw_view(View{9 * k + 4})});
  EXPECT_NEAR(view_consistency_residual(rep, pairs) / (2.0 * var), 1.0, 0.1);
}

TEST(KsTest, NormalAndShiftedSamples) {
  Rng rng = make_stream(90);
  std::vector<double> xs(5000);
  std::normal_distribution<double> n01;
  for (double& x : xs) x = n01(rng);
  EXPECT_GT(ks_test_normal(xs).p_value, 0.01);
  for (double& x : xs) x += 0.2;
  EXPECT_LT(ks_test_normal(xs).p_value, 1e-6);
  EXPECT_NEAR(kolmogorov_tail(1.358), 0.05, 1e-3);
  EXPECT_NEAR(kolmogorov_tail(1.628), 0.01, 1e-3);
}

TEST(Binomial, BandAndSignTestMatchDirectSums) {
  for (long n : {20L, 50L, 200L}) {
    for (double p : {0.5, 0.3}) {
      EXPECT_EQ(binomial_band(n, p, 0.99), oracle::binomial_band(n, p, 0.99)) << n << " " << p;
    }
    for (long k = 0; k <= n; k += n / 10) {
      EXPECT_NEAR(sign_test_p(k, n), oracle::sign_test_upper(k, n), 1e-10);
    }
  }
  EXPECT_THROW(sign_test_p(5, 4), ParameterError);
}

}  // namespace
}  // namespace dflow
