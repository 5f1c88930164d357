#include "flim/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "flim/error.hpp"

namespace flim {

TimeGrid::TimeGrid(int n, double width, double origin_ns) : n_bins(n), bin_width(width), origin(origin_ns) {
  require(n > 0, "time grid needs at least one bin");
  require(width > 0.0 && std::isfinite(width), "bin width must be positive");
  require(std::isfinite(origin_ns), "grid origin must be finite");
}

Vector TimeGrid::offsets() const {
  return (Vector::LinSpaced(n_bins, 0, n_bins - 1).array() + 0.5) * bin_width;
}

DecayModel::DecayModel(std::vector<DecayComponent> components) : components_(std::move(components)) {
  require(!components_.empty(), "decay model needs at least one component");
  bool any_positive = false;
  for (const auto& c : components_) {
    require(std::isfinite(c.lifetime) && c.lifetime > 0.0, "lifetimes must be positive and finite");
    require(std::isfinite(c.amplitude) && c.amplitude >= 0.0, "amplitudes must be non-negative");
    any_positive = any_positive || c.amplitude > 0.0;
  }
  require(any_positive, "at least one amplitude must be positive");
}

DecayModel DecayModel::mono(double tau) { return DecayModel({{1.0, tau}}); }

DecayModel DecayModel::bi(double tau1, double tau2, double fraction1) {
  return DecayModel({{fraction1, tau1}, {1.0 - fraction1, tau2}});
}

Vector DecayModel::lifetimes() const {
  Vector t(components_.size());
  for (std::size_t i = 0; i < components_.size(); ++i) t[i] = components_[i].lifetime;
  return t;
}

Vector DecayModel::normalized_fractions() const {
  Vector f(components_.size());
  for (std::size_t i = 0; i < components_.size(); ++i) f[i] = components_[i].amplitude;
  return f / f.sum();
}

double DecayModel::mean_lifetime() const { return normalized_fractions().dot(lifetimes()); }

double GaussianIrf::sigma() const { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

Irf Irf::gaussian(double center, double fwhm) {
  require(std::isfinite(center), "IRF center must be finite");
  require(fwhm > 0.0 && std::isfinite(fwhm), "IRF FWHM must be positive");
  Irf irf;
  irf.kind_ = GaussianIrf{center, fwhm};
  return irf;
}

Irf Irf::measured(Vector samples) {
  require(samples.size() > 0, "measured IRF is empty");
  require((samples.array() >= 0.0).all() && samples.allFinite(), "measured IRF samples must be non-negative");
  require(samples.sum() > 0.0, "measured IRF must have positive area");
  Irf irf;
  irf.kind_ = MeasuredIrf{std::move(samples)};
  return irf;
}

Vector Irf::sample(const TimeGrid& grid) const {
  Vector out = Vector::Zero(grid.n_bins);
  if (std::holds_alternative<DiracIrf>(kind_)) {
    out[0] = 1.0;
  } else if (const auto* g = std::get_if<GaussianIrf>(&kind_)) {
    const double sigma = g->sigma();
    if (g->center - 4.0 * sigma < grid.origin || g->center + 4.0 * sigma > grid.end()) {
      fail(ErrorKind::kTruncation, "Gaussian IRF support (+-4 sigma) exceeds the time grid");
    }
    for (int i = 0; i < grid.n_bins; ++i) {
      const double z = (grid.center(i) - g->center) / sigma;
      out[i] = std::exp(-0.5 * z * z);
    }
  } else {
    const auto& m = std::get<MeasuredIrf>(kind_);
    if (m.samples.size() > grid.n_bins) {
      fail(ErrorKind::kTruncation, "measured IRF is longer than the time grid");
    }
    out.head(m.samples.size()) = m.samples;
  }
  const double area = out.sum();
  if (!(area > 0.0)) fail(ErrorKind::kTruncation, "IRF has no area on the time grid");
  return out / area;
}

TcspcHistogram::TcspcHistogram(TimeGrid g, Vector c) : grid(g), counts(std::move(c)) {
  require(counts.size() == grid.n_bins, "histogram length does not match the time grid");
  require(counts.allFinite() && (counts.array() >= 0.0).all(), "histogram counts must be non-negative");
}

int TcspcHistogram::peak_bin() const {
  Eigen::Index i = 0;
  counts.maxCoeff(&i);
  return static_cast<int>(i);
}

FlimCube::FlimCube(int w, int h, TimeGrid g) : width(w), height(h), grid(g) {
  require(w > 0 && h > 0, "cube dimensions must be positive");
  counts = Matrix::Zero(grid.n_bins, static_cast<Eigen::Index>(w) * h);
}

FlimCube::FlimCube(int w, int h, TimeGrid g, Matrix c) : width(w), height(h), grid(g), counts(std::move(c)) {
  require(w > 0 && h > 0, "cube dimensions must be positive");
  require(counts.rows() == grid.n_bins && counts.cols() == static_cast<Eigen::Index>(w) * h,
          "cube counts have the wrong shape");
}

LifetimeImage::LifetimeImage(int w, int h, int components)
    : width(w), height(h), n_components(components) {
  require(w > 0 && h > 0, "image dimensions must be positive");
  require(components >= 1, "lifetime image needs at least one component");
  const Eigen::Index n = static_cast<Eigen::Index>(w) * h;
  tau = Matrix::Zero(components, n);
  fraction = Matrix::Zero(components, n);
  intensity = Vector::Zero(n);
  valid.assign(n, 0);
}

std::size_t LifetimeImage::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

PhasorImage::PhasorImage(int w, int h, double omega_rad_ns) : width(w), height(h), omega(omega_rad_ns) {
  require(w > 0 && h > 0, "image dimensions must be positive");
  require(omega_rad_ns > 0.0 && std::isfinite(omega_rad_ns), "omega must be positive");
  const Eigen::Index n = static_cast<Eigen::Index>(w) * h;
  g = Vector::Zero(n);
  s = Vector::Zero(n);
  intensity = Vector::Zero(n);
  valid.assign(n, 0);
}

std::size_t PhasorImage::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

}  // namespace flim
