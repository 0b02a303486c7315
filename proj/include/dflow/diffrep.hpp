// Copyright 2026 The diffrep-flow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dflow/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dflow {

/// Layout of a flat render for CSV export.
struct ImageShape {
  Index height = 1;
  Index width = 1;
  Index channels = 1;

  Index size() const noexcept { return height * width * channels; }
};

/// A view pi. For windowed (panorama) reps `origin` is the lattice column the
/// window starts at; singleton-view reps always use origin 0.
struct View {
  std::int64_t origin = 0;

  bool operator==(const View&) const = default;
};

/// A differentiable render map f(theta, pi) -> R^m with exact Jacobian
/// products, a view distribution, and a global lattice that every rendered
/// value is attached to (the storage of the separated noise field).
///
/// render/jvp/vjp are pure and may be called concurrently.
class DiffRep {
 public:
  virtual ~DiffRep() = default;

  virtual std::string kind() const = 0;
  virtual Index param_dim() const = 0;
  virtual Index output_dim() const = 0;
  virtual Index lattice_size() const { return output_dim(); }
  virtual ImageShape shape() const { return {1, output_dim(), 1}; }

  virtual Vec render(const Vec& theta, const View& view) const = 0;
  virtual Vec jvp(const Vec& theta, const View& view, const Vec& v) const = 0;
  virtual Vec vjp(const Vec& theta, const View& view, const Vec& w) const = 0;

  /// Lattice site of each rendered value (length output_dim).
  virtual std::vector<Index> lattice_sites(const View& view) const;

  virtual bool singleton_view() const { return true; }
  virtual View sample_view(Rng&) const { return View{}; }

  /// Text passed to the score model alongside the conditioning label.
  virtual std::string view_tag(const View&) const { return {}; }

  /// Parameters rendering exactly zero, when known in closed form.
  virtual std::optional<Vec> zero_render_params() const { return Vec::Zero(param_dim()); }

  /// Random parameters from the rep's default initializer.
  virtual Vec random_params(Rng& rng) const;

 protected:
  void check_theta(const Vec& theta) const;
  void check_output(const Vec& w) const;
};

/// f(theta) = theta.
class IdentityRep : public DiffRep {
 public:
  explicit IdentityRep(Index dim) : dim_(dim) {}

  std::string kind() const override { return "identity"; }
  Index param_dim() const override { return dim_; }
  Index output_dim() const override { return dim_; }
  Vec render(const Vec& theta, const View&) const override;
  Vec jvp(const Vec& theta, const View&, const Vec& v) const override;
  Vec vjp(const Vec& theta, const View&, const Vec& w) const override;

 private:
  Index dim_;
};

/// f(theta) = A theta.
class LinearRep : public DiffRep {
 public:
  explicit LinearRep(Mat a) : a_(std::move(a)) {}

  std::string kind() const override { return "linear"; }
  Index param_dim() const override { return a_.cols(); }
  Index output_dim() const override { return a_.rows(); }
  const Mat& matrix() const noexcept { return a_; }
  Vec render(const Vec& theta, const View&) const override;
  Vec jvp(const Vec& theta, const View&, const Vec& v) const override;
  Vec vjp(const Vec& theta, const View&, const Vec& w) const override;

 private:
  Mat a_;
};

/// Periodic 1-D signal on `grid` points built from the lowest `modes` real
/// Fourier basis functions, ordered [1, cos 1, sin 1, cos 2, sin 2, ...]
/// (unnormalized: the constant mode renders theta_0 at every point).
class LowPassRep : public DiffRep {
 public:
  LowPassRep(Index grid, Index modes);

  std::string kind() const override { return "lowpass"; }
  Index param_dim() const override { return basis_.cols(); }
  Index output_dim() const override { return basis_.rows(); }
  const Mat& basis() const noexcept { return basis_; }

  /// Orthogonal projector onto the span of the retained modes.
  Mat range_projector() const;

  Vec render(const Vec& theta, const View&) const override;
  Vec jvp(const Vec& theta, const View&, const Vec& v) const override;
  Vec vjp(const Vec& theta, const View&, const Vec& w) const override;

 private:
  Mat basis_;
};

struct SirenConfig {
  Index height = 8;
  Index width = 8;
  Index channels = 1;
  /// Number of Fourier-feature frequency rows (features = 2 * embed_freqs).
  Index embed_freqs = 16;
  /// Integer frequencies are drawn from [-max_freq, max_freq].
  int max_freq = 3;
  std::vector<Index> hidden = {32, 32};
  /// Windowed 360-degree panorama instead of a single image view.
  bool panorama = false;
  /// Panorama aspect ratio: each view covers 1/aspect of the azimuth.
  Index aspect = 8;
  std::uint64_t embed_seed = 7;
};

/// Sinusoidal MLP image / panorama.
///
/// Coordinates (x, y) in [0, 1]^2 pass through a fixed Fourier-feature
/// embedding [sin 2 pi B c, cos 2 pi B c] with integer frequency matrix B
/// (so the field is periodic in x), then sin-activated hidden layers and a
/// linear output layer. Parameters are the weights and biases of the
/// hidden and output layers.
///
/// Rows sit at y = i / H. Image mode renders columns at x = j / W.
/// Panorama mode owns a lattice of H rows and L = aspect * (W - 1) columns
/// around the azimuth; a view starting at column k renders columns
/// k .. k + W - 1 (mod L), i.e. x equally spaced on [r, r + 1/aspect] mod 1
/// with r = k / L. Renders and lattices are row-major with channels last.
class SirenRep : public DiffRep {
 public:
  explicit SirenRep(SirenConfig cfg);

  std::string kind() const override { return config_.panorama ? "panorama" : "siren"; }
  Index param_dim() const override { return param_dim_; }
  Index output_dim() const override { return config_.height * config_.width * config_.channels; }
  Index lattice_size() const override { return config_.height * lattice_columns() * config_.channels; }
  ImageShape shape() const override { return {config_.height, config_.width, config_.channels}; }
  const SirenConfig& config() const noexcept { return config_; }

  Index lattice_columns() const noexcept {
    return config_.panorama ? config_.aspect * (config_.width - 1) : config_.width;
  }

  Vec render(const Vec& theta, const View& view) const override;
  Vec jvp(const Vec& theta, const View& view, const Vec& v) const override;
  Vec vjp(const Vec& theta, const View& view, const Vec& w) const override;

  std::vector<Index> lattice_sites(const View& view) const override;
  bool singleton_view() const override { return !config_.panorama; }
  View sample_view(Rng& rng) const override;
  std::string view_tag(const View& view) const override;
  std::optional<Vec> zero_render_params() const override { return std::nullopt; }
  Vec random_params(Rng& rng) const override;

  /// Field value at an arbitrary coordinate (channels-long).
  Vec eval_at(const Vec& theta, double x, double y) const;

  /// Pixel coordinates rendered by `view`, row-major (H * W rows of (x, y)).
  std::vector<std::pair<double, double>> view_coordinates(const View& view) const;

 private:
  struct Layer {
    Index in;
    Index out;
    Index offset;  // start of W (out x in, column-major) in theta; bias follows
  };

  Vec embed(double x, double y) const;

  SirenConfig config_;
  Mat freqs_;  // embed_freqs x 2
  std::vector<Layer> layers_;
  Index param_dim_ = 0;
};

/// Separated noise values stored per lattice site. Overlapping views read
/// identical values at shared sites.
class NoiseField {
 public:
  explicit NoiseField(Vec values) : values_(std::move(values)) {}

  static NoiseField standard(Index sites, Rng& rng) { return NoiseField(standard_normal(sites, rng)); }

  Index size() const noexcept { return values_.size(); }
  const Vec& values() const noexcept { return values_; }
  Vec& values() noexcept { return values_; }

  Vec extract(std::span<const Index> sites) const;
  void write(std::span<const Index> sites, const Vec& v);

 private:
  Vec values_;
};

std::vector<View> sample_views(const DiffRep& rep, int n, Rng& rng);

/// eps(pi): the noise field read at the sites view `view` renders.
Vec extract_noise(const NoiseField& field, const DiffRep& rep, const View& view);

/// Dense Jacobian built column by column from jvp. Oracle use only.
Mat materialize_jacobian(const DiffRep& rep, const Vec& theta, const View& view);

struct InitOptions {
  int budget = 2000;
  /// Stop once the mean render norm falls below threshold * initial.
  double threshold = 0.05;
  int views_per_step = 4;
  double lr = 1e-2;
};

struct InitResult {
  Vec theta;
  double initial_norm = 0.0;
  double final_norm = 0.0;
  bool reached_threshold = true;
};

/// Zero-render initialization: theta = argmin E_pi ||f(theta, pi)||.
/// Closed form for linear reps; Adam from a random draw otherwise. When the
/// budget runs out first, logs a warning and returns the best iterate.
InitResult init_params(const DiffRep& rep, const InitOptions& opts, Rng& rng);

}  // namespace dflow
