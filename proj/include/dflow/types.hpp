// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace dflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Every random draw in the library flows from one of these.
using Rng = std::mt19937_64;

/// Independent, reproducible substream `stream` of a run seeded with `seed`.
Rng make_stream(std::uint64_t seed, std::uint64_t stream = 0);

Vec standard_normal(Index n, Rng& rng);

}  // namespace dflow
