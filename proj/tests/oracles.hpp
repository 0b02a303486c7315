// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

// Independent reference computations for tests. Nothing here calls the
// routine it is used to check.

#pragma once

#include "dflow/types.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <numbers>
#include <utility>

namespace oracle {

using dflow::Mat;
using dflow::Vec;

/// Moore-Penrose pseudoinverse through a full SVD with a relative cutoff.
inline Mat pinv(const Mat& j) {
  Eigen::JacobiSVD<Mat> svd(j, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec& s = svd.singularValues();
  const double cutoff = s.size() ? 1e-12 * s[0] * static_cast<double>(std::max(j.rows(), j.cols())) : 0.0;
  Mat s_inv = Mat::Zero(j.cols(), j.rows());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s[i] > cutoff) {
      s_inv(i, i) = 1.0 / s[i];
    }
  }
  return svd.matrixV() * s_inv * svd.matrixU().transpose();
}

/// (A^T A)^{-1} A^T d by Cholesky on the normal equations (full column rank).
inline Vec normal_equations(const Mat& a, const Vec& d) { return (a.transpose() * a).llt().solve(a.transpose() * d); }

/// Exact PF-ODE endpoint for p_0 = N(0, a^2) in 1-D: x(0) = x_T a / sqrt(a^2 + sigma_T^2).
inline double gaussian_ode_endpoint(double x_t, double a, double sigma_t) {
  return x_t * a / std::sqrt(a * a + sigma_t * sigma_t);
}

/// Mean and standard deviation of the chi distribution with k degrees of freedom.
inline std::pair<double, double> chi_moments(double k) {
  const double mean = std::sqrt(2.0) * std::exp(std::lgamma(0.5 * (k + 1.0)) - std::lgamma(0.5 * k));
  return {mean, std::sqrt(k - mean * mean)};
}

/// Binomial(n, p) probability mass by log-gamma.
inline double binomial_pmf(long k, long n, double p) {
  const double lc = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
  return std::exp(lc + k * std::log(p) + (n - k) * std::log1p(-p));
}

/// Central acceptance band by direct summation of the pmf.
inline std::pair<long, long> binomial_band(long n, double p, double level) {
  const double alpha = 0.5 * (1.0 - level);
  double cdf = 0.0;
  long lo = 0;
  while (lo < n && cdf + binomial_pmf(lo, n, p) <= alpha) {
    cdf += binomial_pmf(lo, n, p);
    ++lo;
  }
  double tail = 0.0;
  long hi = n;
  while (hi > 0 && tail + binomial_pmf(hi, n, p) <= alpha) {
    tail += binomial_pmf(hi, n, p);
    --hi;
  }
  return {lo, hi};
}

/// P(X >= k) for X ~ Binomial(n, 1/2).
inline double sign_test_upper(long k, long n) {
  double s = 0.0;
  for (long i = k; i <= n; ++i) {
    s += binomial_pmf(i, n, 0.5);
  }
  return s;
}

}  // namespace oracle
