#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace flim {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Mask = std::vector<std::uint8_t>;

/// Uniform histogram time axis. Bin i covers [origin + i*w, origin + (i+1)*w).
struct TimeGrid {
  int n_bins = 256;
  double bin_width = 12.5 / 256.0;  // ns
  double origin = 0.0;              // ns

  TimeGrid() = default;
  TimeGrid(int n, double width, double origin_ns = 0.0);

  double span() const { return n_bins * bin_width; }
  double center(int i) const { return origin + (i + 0.5) * bin_width; }
  double end() const { return origin + span(); }
  /// Bin centers measured from the origin.
  Vector offsets() const;

  bool operator==(const TimeGrid&) const = default;
};

struct DecayComponent {
  double amplitude;  // intensity (area) weight, >= 0
  double lifetime;   // ns, > 0
};

/// Multi-exponential decay. Amplitudes are intensity fractions (each
/// exponential is taken with unit area) and need not be normalized.
class DecayModel {
 public:
  DecayModel() = default;
  explicit DecayModel(std::vector<DecayComponent> components);

  static DecayModel mono(double tau);
  static DecayModel bi(double tau1, double tau2, double fraction1);

  const std::vector<DecayComponent>& components() const { return components_; }
  std::size_t size() const { return components_.size(); }
  bool empty() const { return components_.empty(); }

  Vector lifetimes() const;
  /// Amplitudes scaled to sum to one.
  Vector normalized_fractions() const;
  /// Intensity-weighted mean lifetime.
  double mean_lifetime() const;

 private:
  std::vector<DecayComponent> components_;
};

struct DiracIrf {};

struct GaussianIrf {
  double center;  // ns
  double fwhm;    // ns
  double sigma() const;
};

struct MeasuredIrf {
  Vector samples;  // one value per bin starting at the grid origin
};

/// Instrument response function.
class Irf {
 public:
  Irf() : kind_(DiracIrf{}) {}
  static Irf dirac() { return Irf(); }
  static Irf gaussian(double center, double fwhm);
  static Irf measured(Vector samples);

  bool is_dirac() const { return std::holds_alternative<DiracIrf>(kind_); }
  const std::variant<DiracIrf, GaussianIrf, MeasuredIrf>& kind() const { return kind_; }

  /// Area-normalized samples at the bin centers of `grid`. Throws kTruncation
  /// when a Gaussian's +-4 sigma support leaves the grid.
  Vector sample(const TimeGrid& grid) const;

 private:
  std::variant<DiracIrf, GaussianIrf, MeasuredIrf> kind_;
};

/// Photon counts per bin. Sampled data is integral, but expected (real) curves
/// are accepted everywhere a histogram is.
struct TcspcHistogram {
  TimeGrid grid;
  Vector counts;

  TcspcHistogram() = default;
  TcspcHistogram(TimeGrid g, Vector c);

  double total() const { return counts.sum(); }
  int peak_bin() const;
};

/// (x, y, t) stack. counts is n_bins x (width*height), column p = y*width + x.
struct FlimCube {
  int width = 0;
  int height = 0;
  TimeGrid grid;
  Matrix counts;

  FlimCube() = default;
  FlimCube(int w, int h, TimeGrid g);
  FlimCube(int w, int h, TimeGrid g, Matrix c);

  int pixels() const { return width * height; }
  int index(int x, int y) const { return y * width + x; }
  TcspcHistogram histogram(int p) const { return {grid, counts.col(p)}; }
  Vector intensity() const { return counts.colwise().sum().transpose(); }
};

/// Per-pixel lifetimes (rows are components, ascending lifetime) and fractions.
struct LifetimeImage {
  int width = 0;
  int height = 0;
  int n_components = 1;
  Matrix tau;
  Matrix fraction;
  Vector intensity;
  Mask valid;

  LifetimeImage() = default;
  LifetimeImage(int w, int h, int components);

  int pixels() const { return width * height; }
  std::size_t valid_count() const;
  /// Longest lifetime per pixel.
  Vector long_lifetime() const { return tau.row(n_components - 1).transpose(); }
};

struct Phasor {
  double g = 0.0;
  double s = 0.0;
};

struct PhasorImage {
  int width = 0;
  int height = 0;
  double omega = 0.0;  // rad/ns
  Vector g;
  Vector s;
  Vector intensity;
  Mask valid;

  PhasorImage() = default;
  PhasorImage(int w, int h, double omega_rad_ns);

  int pixels() const { return width * height; }
  std::size_t valid_count() const;
};

}  // namespace flim
