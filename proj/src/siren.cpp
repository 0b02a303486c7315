// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#include "dflow/diffrep.hpp"
#include "dflow/error.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace dflow {

namespace {

using MapMat = Eigen::Map<const Mat>;
using MapVec = Eigen::Map<const Vec>;
using MutMapMat = Eigen::Map<Mat>;
using MutMapVec = Eigen::Map<Vec>;

}  // namespace

SirenRep::SirenRep(SirenConfig cfg) : config_(std::move(cfg)) {
  if (config_.height < 1 || config_.width < 1 || config_.channels < 1 || config_.embed_freqs < 1 ||
      config_.max_freq < 1) {
    throw ParameterError("SirenRep: dimensions and frequencies must be positive");
  }
  if (config_.panorama && (config_.width < 2 || config_.aspect < 2)) {
    throw ParameterError("SirenRep: panorama needs width >= 2 and aspect >= 2");
  }
  for (Index h : config_.hidden) {
    if (h < 1) {
      throw ParameterError("SirenRep: hidden layer widths must be positive");
    }
  }

  Rng rng = make_stream(config_.embed_seed, 0);
  std::uniform_int_distribution<int> freq(-config_.max_freq, config_.max_freq);
  freqs_.resize(config_.embed_freqs, 2);
  for (Index r = 0; r < freqs_.rows(); ++r) {
    do {
      freqs_(r, 0) = freq(rng);
      freqs_(r, 1) = freq(rng);
    } while (freqs_(r, 0) == 0 && freqs_(r, 1) == 0);
  }

  Index in = 2 * config_.embed_freqs;
  std::vector<Index> widths = config_.hidden;
  widths.push_back(config_.channels);
  for (Index out : widths) {
    layers_.push_back({in, out, param_dim_});
    param_dim_ += out * in + out;
    in = out;
  }
}

Vec SirenRep::embed(double x, double y) const {
  const Index f = freqs_.rows();
  Vec e(2 * f);
  for (Index r = 0; r < f; ++r) {
    const double phase = 2.0 * std::numbers::pi * (freqs_(r, 0) * x + freqs_(r, 1) * y);
    e[r] = std::sin(phase);
    e[f + r] = std::cos(phase);
  }
  return e;
}

std::vector<std::pair<double, double>> SirenRep::view_coordinates(const View& view) const {
  const Index h = config_.height;
  const Index w = config_.width;
  const Index cols = lattice_columns();
  std::vector<std::pair<double, double>> coords;
  coords.reserve(static_cast<std::size_t>(h * w));
  for (Index i = 0; i < h; ++i) {
    const double y = static_cast<double>(i) / static_cast<double>(h);
    for (Index j = 0; j < w; ++j) {
      double x;
      if (config_.panorama) {
        const Index col = (view.origin + j) % cols;
        x = static_cast<double>(col) / static_cast<double>(cols);
      } else {
        x = static_cast<double>(j) / static_cast<double>(w);
      }
      coords.emplace_back(x, y);
    }
  }
  return coords;
}

std::vector<Index> SirenRep::lattice_sites(const View& view) const {
  const Index h = config_.height;
  const Index w = config_.width;
  const Index c = config_.channels;
  const Index cols = lattice_columns();
  if (config_.panorama && (view.origin < 0 || view.origin >= cols)) {
    throw ParameterError("panorama view origin out of range");
  }
  std::vector<Index> sites;
  sites.reserve(static_cast<std::size_t>(h * w * c));
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      const Index col = config_.panorama ? (view.origin + j) % cols : j;
      for (Index ch = 0; ch < c; ++ch) {
        sites.push_back((i * cols + col) * c + ch);
      }
    }
  }
  return sites;
}

View SirenRep::sample_view(Rng& rng) const {
  if (!config_.panorama) {
    return View{};
  }
  std::uniform_int_distribution<std::int64_t> origin(0, lattice_columns() - 1);
  return View{origin(rng)};
}

std::string SirenRep::view_tag(const View& view) const {
  if (!config_.panorama) {
    return {};
  }
  return "x0=" + std::to_string(static_cast<double>(view.origin) / static_cast<double>(lattice_columns()));
}

Vec SirenRep::random_params(Rng& rng) const {
  Vec theta(param_dim_);
  for (const auto& layer : layers_) {
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Index k = 0; k < layer.out * layer.in + layer.out; ++k) {
      theta[layer.offset + k] = u(rng);
    }
  }
  return theta;
}

Vec SirenRep::eval_at(const Vec& theta, double x, double y) const {
  check_theta(theta);
  Vec a = embed(x, y);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const MapMat w(theta.data() + layer.offset, layer.out, layer.in);
    const MapVec b(theta.data() + layer.offset + layer.out * layer.in, layer.out);
    Vec z = w * a + b;
    a = (l + 1 < layers_.size()) ? Vec(z.array().sin()) : z;
  }
  return a;
}

Vec SirenRep::render(const Vec& theta, const View& view) const {
  check_theta(theta);
  const auto coords = view_coordinates(view);
  const Index c = config_.channels;
  Vec out(output_dim());
  for (std::size_t p = 0; p < coords.size(); ++p) {
    out.segment(static_cast<Index>(p) * c, c) = eval_at(theta, coords[p].first, coords[p].second);
  }
  return out;
}

Vec SirenRep::jvp(const Vec& theta, const View& view, const Vec& v) const {
  check_theta(theta);
  check_theta(v);
  const auto coords = view_coordinates(view);
  const Index c = config_.channels;
  Vec out(output_dim());
  for (std::size_t p = 0; p < coords.size(); ++p) {
    Vec a = embed(coords[p].first, coords[p].second);
    Vec da = Vec::Zero(a.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      const Index boff = layer.offset + layer.out * layer.in;
      const MapMat w(theta.data() + layer.offset, layer.out, layer.in);
      const MapVec b(theta.data() + boff, layer.out);
      const MapMat dw(v.data() + layer.offset, layer.out, layer.in);
      const MapVec db(v.data() + boff, layer.out);
      Vec z = w * a + b;
      Vec dz = dw * a + w * da + db;
      if (l + 1 < layers_.size()) {
        da = z.array().cos() * dz.array();
        a = z.array().sin();
      } else {
        da = dz;
      }
    }
    out.segment(static_cast<Index>(p) * c, c) = da;
  }
  return out;
}

Vec SirenRep::vjp(const Vec& theta, const View& view, const Vec& w_out) const {
  check_theta(theta);
  check_output(w_out);
  const auto coords = view_coordinates(view);
  const Index c = config_.channels;
  Vec grad = Vec::Zero(param_dim_);
  std::vector<Vec> acts(layers_.size());
  std::vector<Vec> pre(layers_.size());
  for (std::size_t p = 0; p < coords.size(); ++p) {
    Vec a = embed(coords[p].first, coords[p].second);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& layer = layers_[l];
      const MapMat w(theta.data() + layer.offset, layer.out, layer.in);
      const MapVec b(theta.data() + layer.offset + layer.out * layer.in, layer.out);
      acts[l] = a;
      pre[l] = w * a + b;
      if (l + 1 < layers_.size()) {
        a = pre[l].array().sin();
      }
    }
    Vec g = w_out.segment(static_cast<Index>(p) * c, c);
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& layer = layers_[l];
      const Index boff = layer.offset + layer.out * layer.in;
      if (l + 1 < layers_.size()) {
        g = g.array() * pre[l].array().cos();
      }
      MutMapMat gw(grad.data() + layer.offset, layer.out, layer.in);
      MutMapVec gb(grad.data() + boff, layer.out);
      gw.noalias() += g * acts[l].transpose();
      gb += g;
      if (l > 0) {
        const MapMat w(theta.data() + layer.offset, layer.out, layer.in);
        g = w.transpose() * g;
      }
    }
  }
  return grad;
}

}  // namespace dflow
