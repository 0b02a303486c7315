// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/diffrep.hpp"

#include "dflow/error.hpp"
#include "dflow/optim.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numbers>
#include <numeric>

namespace dflow {

std::vector<Index> DiffRep::lattice_sites(const View&) const {
  std::vector<Index> sites(static_cast<std::size_t>(output_dim()));
  std::iota(sites.begin(), sites.end(), Index{0});
  return sites;
}

Vec DiffRep::random_params(Rng& rng) const {
  return standard_normal(param_dim(), rng);
}

void DiffRep::check_theta(const Vec& theta) const {
  if (theta.size() != param_dim()) {
    throw DimensionError(kind() + ": parameter vector has " + std::to_string(theta.size()) + " entries, expected " +
                         std::to_string(param_dim()));
  }
}

void DiffRep::check_output(const Vec& w) const {
  if (w.size() != output_dim()) {
    throw DimensionError(kind() + ": image vector has " + std::to_string(w.size()) + " entries, expected " +
                         std::to_string(output_dim()));
  }
}

Vec IdentityRep::render(const Vec& theta, const View&) const {
  check_theta(theta);
  return theta;
}

Vec IdentityRep::jvp(const Vec& theta, const View&, const Vec& v) const {
  check_theta(theta);
  check_theta(v);
  return v;
}

Vec IdentityRep::vjp(const Vec& theta, const View&, const Vec& w) const {
  check_theta(theta);
  check_output(w);
  return w;
}

Vec LinearRep::render(const Vec& theta, const View&) const {
  check_theta(theta);
  return a_ * theta;
}

Vec LinearRep::jvp(const Vec& theta, const View&, const Vec& v) const {
  check_theta(theta);
  check_theta(v);
  return a_ * v;
}

Vec LinearRep::vjp(const Vec& theta, const View&, const Vec& w) const {
  check_theta(theta);
  check_output(w);
  return a_.transpose() * w;
}

LowPassRep::LowPassRep(Index grid, Index modes) {
  if (grid < 1 || modes < 1 || modes > grid) {
    throw ParameterError("LowPassRep needs 1 <= modes <= grid");
  }
  basis_.resize(grid, modes);
  for (Index j = 0; j < grid; ++j) {
    basis_(j, 0) = 1.0;
  }
  for (Index c = 1; c < modes; ++c) {
    const Index k = (c + 1) / 2;
    const bool is_cos = (c % 2) == 1;
    for (Index j = 0; j < grid; ++j) {
      const double phase = 2.0 * std::numbers::pi * static_cast<double>(k * j) / static_cast<double>(grid);
      basis_(j, c) = is_cos ? std::cos(phase) : std::sin(phase);
    }
  }
  if (basis_.colPivHouseholderQr().rank() != modes) {
    throw ParameterError("LowPassRep basis is rank deficient (too many modes for the grid)");
  }
}

Mat LowPassRep::range_projector() const {
  const Mat gram = basis_.transpose() * basis_;
  return basis_ * gram.ldlt().solve(basis_.transpose());
}

Vec LowPassRep::render(const Vec& theta, const View&) const {
  check_theta(theta);
  return basis_ * theta;
}

Vec LowPassRep::jvp(const Vec& theta, const View&, const Vec& v) const {
  check_theta(theta);
  check_theta(v);
  return basis_ * v;
}

Vec LowPassRep::vjp(const Vec& theta, const View&, const Vec& w) const {
  check_theta(theta);
  check_output(w);
  return basis_.transpose() * w;
}

Vec NoiseField::extract(std::span<const Index> sites) const {
  Vec out(static_cast<Index>(sites.size()));
  for (std::size_t i = 0; i < sites.size(); ++i) {
    out[static_cast<Index>(i)] = values_[sites[i]];
  }
  return out;
}

void NoiseField::write(std::span<const Index> sites, const Vec& v) {
  if (v.size() != static_cast<Index>(sites.size())) {
    throw DimensionError("noise write size mismatch");
  }
  for (std::size_t i = 0; i < sites.size(); ++i) {
    values_[sites[i]] = v[static_cast<Index>(i)];
  }
}

std::vector<View> sample_views(const DiffRep& rep, int n, Rng& rng) {
  if (n < 1) {
    throw ParameterError("need at least one view");
  }
  std::vector<View> views;
  views.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    views.push_back(rep.singleton_view() ? View{} : rep.sample_view(rng));
  }
  return views;
}

Vec extract_noise(const NoiseField& field, const DiffRep& rep, const View& view) {
  if (field.size() != rep.lattice_size()) {
    throw DimensionError("noise field does not cover the rep's lattice");
  }
  const auto sites = rep.lattice_sites(view);
  return field.extract(sites);
}

Mat materialize_jacobian(const DiffRep& rep, const Vec& theta, const View& view) {
  const Index p = rep.param_dim();
  const Index m = rep.output_dim();
  if (p > 512 || m > 512) {
    throw ParameterError("explicit Jacobians are limited to m, p <= 512");
  }
  Mat jac(m, p);
  Vec basis = Vec::Zero(p);
  for (Index c = 0; c < p; ++c) {
    basis[c] = 1.0;
    jac.col(c) = rep.jvp(theta, view, basis);
    basis[c] = 0.0;
  }
  return jac;
}

InitResult init_params(const DiffRep& rep, const InitOptions& opts, Rng& rng) {
  if (auto zero = rep.zero_render_params()) {
    return {std::move(*zero), 0.0, 0.0, true};
  }

  // Fixed evaluation views so the stopping rule compares like with like.
  const auto eval_views = sample_views(rep, 32, rng);
  auto mean_norm = [&](const Vec& theta) {
    double total = 0.0;
    for (const auto& v : eval_views) {
      total += rep.render(theta, v).norm();
    }
    return total / static_cast<double>(eval_views.size());
  };

  Vec theta = rep.random_params(rng);
  InitResult result;
  result.initial_norm = mean_norm(theta);
  result.final_norm = result.initial_norm;
  result.theta = theta;
  const double target = opts.threshold * result.initial_norm;
  if (result.initial_norm <= target) {
    return result;
  }

  Adam adam(rep.param_dim(), AdamConfig{.lr = opts.lr});
  for (int it = 0; it < opts.budget; ++it) {
    const auto views = sample_views(rep, opts.views_per_step, rng);
    Vec grad = Vec::Zero(rep.param_dim());
    for (const auto& v : views) {
      grad += 2.0 * rep.vjp(theta, v, rep.render(theta, v));
    }
    grad /= static_cast<double>(views.size());
    theta -= adam.step(grad);
    if (!theta.allFinite()) {
      break;
    }
    if ((it + 1) % 25 == 0 || it + 1 == opts.budget) {
      const double n = mean_norm(theta);
      if (n < result.final_norm) {
        result.final_norm = n;
        result.theta = theta;
      }
      if (n < target) {
        return result;
      }
    }
  }
  result.reached_threshold = false;
  spdlog::warn("init_params: budget exhausted at mean render norm {:.4g} (target {:.4g}); returning best iterate",
               result.final_norm, target);
  return result;
}

}  // namespace dflow
