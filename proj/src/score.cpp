// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/score.hpp"

#include "dflow/error.hpp"

#include <cmath>
#include <numbers>

namespace dflow {

std::vector<Vec> ScoreModel::eps_hat_batch(std::span<const Vec> xs, double sigma, const Conditioning& cond,
                                           double cfg_scale) const {
  std::vector<Vec> out;
  out.reserve(xs.size());
  for (const auto& x : xs) {
    out.push_back(eps_hat(x, sigma, cond, cfg_scale));
  }
  return out;
}

GaussianMixture::GaussianMixture(Vec weights, Mat means, Mat variances)
    : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
  if (weights_.size() == 0 || means_.cols() == 0) {
    throw ModelError("Gaussian mixture needs at least one component");
  }
  if (means_.cols() != weights_.size() || variances_.cols() != weights_.size() ||
      variances_.rows() != means_.rows()) {
    throw ModelError("Gaussian mixture weights, means and variances disagree in shape");
  }
  if ((weights_.array() < 0.0).any() || !(weights_.sum() > 0.0)) {
    throw ModelError("mixture weights must be nonnegative with positive total");
  }
  if (!(variances_.array() > 0.0).all() || !variances_.allFinite() || !means_.allFinite()) {
    throw ModelError("mixture variances must be positive and finite");
  }
  weights_ /= weights_.sum();
}

GaussianMixture GaussianMixture::gaussian(const Vec& mean, const Vec& variance) {
  return GaussianMixture(Vec::Ones(1), mean, variance);
}

GaussianMixture GaussianMixture::subset(std::span<const Index> components) const {
  if (components.empty()) {
    throw ModelError("empty component subset");
  }
  const auto k = static_cast<Index>(components.size());
  Vec w(k);
  Mat mu(dim(), k);
  Mat var(dim(), k);
  for (Index j = 0; j < k; ++j) {
    const Index c = components[static_cast<std::size_t>(j)];
    if (c < 0 || c >= this->components()) {
      throw ModelError("component index out of range: " + std::to_string(c));
    }
    w[j] = weights_[c];
    mu.col(j) = means_.col(c);
    var.col(j) = variances_.col(c);
  }
  return GaussianMixture(std::move(w), std::move(mu), std::move(var));
}

Vec GaussianMixture::component_log_terms(const Vec& x, double sigma) const {
  if (x.size() != dim()) {
    throw DimensionError("point has dimension " + std::to_string(x.size()) + ", mixture " +
                         std::to_string(dim()));
  }
  if (sigma < 0.0) {
    throw ParameterError("sigma must be nonnegative");
  }
  const double s2 = sigma * sigma;
  Vec terms(components());
  for (Index k = 0; k < components(); ++k) {
    const auto var = (variances_.col(k).array() + s2);
    const auto diff = (x - means_.col(k)).array();
    const double quad = (diff.square() / var).sum();
    const double logdet = var.log().sum();
    terms[k] = std::log(weights_[k]) - 0.5 * (quad + logdet + static_cast<double>(dim()) *
                                                                   std::log(2.0 * std::numbers::pi));
  }
  return terms;
}

double GaussianMixture::log_density(const Vec& x, double sigma) const {
  const Vec terms = component_log_terms(x, sigma);
  const double m = terms.maxCoeff();
  return m + std::log((terms.array() - m).exp().sum());
}

Vec GaussianMixture::responsibilities(const Vec& x, double sigma) const {
  const Vec terms = component_log_terms(x, sigma);
  const double m = terms.maxCoeff();
  Vec r = (terms.array() - m).exp();
  return r / r.sum();
}

Mat GaussianMixture::sample(Index n, Rng& rng) const {
  std::discrete_distribution<Index> pick(weights_.data(), weights_.data() + weights_.size());
  Mat out(dim(), n);
  for (Index i = 0; i < n; ++i) {
    const Index k = pick(rng);
    out.col(i) = means_.col(k) + (variances_.col(k).array().sqrt() * standard_normal(dim(), rng).array()).matrix();
  }
  return out;
}

Vec gmm_score(const GaussianMixture& model, const Vec& x, double sigma) {
  const Vec r = model.responsibilities(x, sigma);
  const double s2 = sigma * sigma;
  Vec score = Vec::Zero(model.dim());
  for (Index k = 0; k < model.components(); ++k) {
    if (r[k] == 0.0) {
      continue;
    }
    score.array() -= r[k] * (x - model.means().col(k)).array() / (model.variances().col(k).array() + s2);
  }
  return score;
}

Vec eps_from_score(const Vec& score, double sigma) {
  if (sigma < 0.0) {
    throw ParameterError("sigma must be nonnegative");
  }
  return -sigma * score;
}

Vec score_from_eps(const Vec& eps, double sigma) {
  if (!(sigma > 0.0)) {
    throw ParameterError("score_from_eps needs sigma > 0 (noise prediction is undefined at sigma = 0)");
  }
  return -eps / sigma;
}

Vec cfg_combine(const Vec& eps_uncond, const Vec& eps_cond, double cfg_scale) {
  if (eps_uncond.size() != eps_cond.size()) {
    throw DimensionError("cfg_combine operands differ in dimension");
  }
  return eps_uncond + cfg_scale * (eps_cond - eps_uncond);
}

AnalyticScoreModel::AnalyticScoreModel(GaussianMixture uncond) {
  densities_.emplace("uncond", std::move(uncond));
}

void AnalyticScoreModel::add_condition(const std::string& label, std::span<const Index> components) {
  add_condition(label, densities_.at("uncond").subset(components));
}

void AnalyticScoreModel::add_condition(const std::string& label, GaussianMixture density) {
  if (label == "uncond") {
    throw ModelError("label 'uncond' is reserved for the full mixture");
  }
  if (density.dim() != dim()) {
    throw DimensionError("conditional density dimension mismatch for label '" + label + "'");
  }
  densities_.insert_or_assign(label, std::move(density));
}

const GaussianMixture& AnalyticScoreModel::density(const std::string& label) const {
  const auto it = densities_.find(label);
  if (it == densities_.end()) {
    throw ModelError("unknown conditioning label '" + label + "'");
  }
  return it->second;
}

Vec AnalyticScoreModel::score(const Vec& x, double sigma, const std::string& label) const {
  return gmm_score(density(label), x, sigma);
}

Vec AnalyticScoreModel::eps_hat(const Vec& x, double sigma, const Conditioning& cond, double cfg_scale) const {
  Vec eps_u = eps_from_score(score(x, sigma, "uncond"), sigma);
  if (cond.label == "uncond") {
    return cfg_combine(eps_u, eps_u, cfg_scale);
  }
  const Vec eps_c = eps_from_score(score(x, sigma, cond.label), sigma);
  return cfg_combine(eps_u, eps_c, cfg_scale);
}

}  // namespace dflow
