// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dflow/types.hpp"

#include <cmath>

namespace dflow {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moment buffers for one parameter vector. Each instance is owned by a
/// single optimization run.
class Adam {
 public:
  Adam(Index n, AdamConfig cfg) : cfg_(cfg), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

  /// Returns the step to subtract from the parameters for gradient `g`,
  /// scaled by `lr_scale` (for learning-rate schedules).
  Vec step(const Vec& g, double lr_scale = 1.0) {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    return (cfg_.lr * lr_scale / c1) * m_.cwiseQuotient(((v_ / c2).cwiseSqrt().array() + cfg_.eps).matrix());
  }

  long iterations() const noexcept { return t_; }

 private:
  AdamConfig cfg_;
  Vec m_;
  Vec v_;
  long t_ = 0;
};

}  // namespace dflow
