// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dflow/types.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace dflow {

/// Selects a conditional density of a score model. `view_tag` carries view
/// information (the analogue of putting the view in the prompt); analytic
/// models ignore it.
struct Conditioning {
  std::string label = "uncond";
  std::string view_tag;
};

/// A noise predictor eps_hat(x, sigma, conditioning, cfg) over R^dim.
///
/// Implementations must be safe to call concurrently.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual Index dim() const = 0;

  virtual Vec eps_hat(const Vec& x, double sigma, const Conditioning& cond, double cfg_scale) const = 0;

  /// Batched evaluation. The default loops over `eps_hat`.
  virtual std::vector<Vec> eps_hat_batch(std::span<const Vec> xs, double sigma, const Conditioning& cond,
                                         double cfg_scale) const;
};

/// Gaussian mixture with diagonal covariances. Column k of `means` and
/// `variances` describes component k.
class GaussianMixture {
 public:
  GaussianMixture(Vec weights, Mat means, Mat variances);

  /// Single isotropic-or-diagonal Gaussian.
  static GaussianMixture gaussian(const Vec& mean, const Vec& variance);

  Index dim() const noexcept { return means_.rows(); }
  Index components() const noexcept { return means_.cols(); }
  const Vec& weights() const noexcept { return weights_; }
  const Mat& means() const noexcept { return means_; }
  const Mat& variances() const noexcept { return variances_; }

  /// Mixture restricted to a subset of components (weights renormalized).
  GaussianMixture subset(std::span<const Index> components) const;

  /// log p_sigma(x), where p_sigma is the mixture convolved with N(0, sigma^2 I).
  double log_density(const Vec& x, double sigma) const;

  /// Posterior component responsibilities at x under p_sigma.
  Vec responsibilities(const Vec& x, double sigma) const;

  /// Draws n samples from p_0, one per column.
  Mat sample(Index n, Rng& rng) const;

 private:
  Vec component_log_terms(const Vec& x, double sigma) const;

  Vec weights_;
  Mat means_;
  Mat variances_;
};

/// Exact gradient of log p_sigma(x) (log-sum-exp stabilized).
Vec gmm_score(const GaussianMixture& model, const Vec& x, double sigma);

/// Tweedie conversion: eps_hat = -sigma * score.
Vec eps_from_score(const Vec& score, double sigma);

/// Inverse conversion: score = -eps_hat / sigma. Throws for sigma == 0.
Vec score_from_eps(const Vec& eps, double sigma);

/// Classifier-free guidance: eps_u + w (eps_c - eps_u).
Vec cfg_combine(const Vec& eps_uncond, const Vec& eps_cond, double cfg_scale);

/// Closed-form score model over named Gaussian-mixture densities.
///
/// "uncond" is always the full mixture; additional labels name conditional
/// densities (typically component subsets) so guidance has exact analytic
/// semantics.
class AnalyticScoreModel : public ScoreModel {
 public:
  explicit AnalyticScoreModel(GaussianMixture uncond);

  /// Registers `label` as the subset of mixture components given.
  void add_condition(const std::string& label, std::span<const Index> components);
  void add_condition(const std::string& label, GaussianMixture density);

  Index dim() const override { return densities_.at("uncond").dim(); }

  const GaussianMixture& density(const std::string& label) const;

  Vec score(const Vec& x, double sigma, const std::string& label = "uncond") const;

  Vec eps_hat(const Vec& x, double sigma, const Conditioning& cond, double cfg_scale) const override;

 private:
  std::map<std::string, GaussianMixture> densities_;
};

/// Predicts zero noise everywhere; used by the loopback stub server.
class ZeroScoreModel : public ScoreModel {
 public:
  explicit ZeroScoreModel(Index dim) : dim_(dim) {}
  Index dim() const override { return dim_; }
  Vec eps_hat(const Vec& x, double, const Conditioning&, double) const override { return Vec::Zero(x.size()); }

 private:
  Index dim_;
};

}  // namespace dflow
