#pragma once

#include <optional>
#include <span>
#include <variant>

#include "flim/segment.hpp"
#include "flim/types.hpp"

namespace flim {

struct FrameAverage {
  int n = 1;
};

struct GaussianFilter {
  double sigma = 1.0;  // pixels
};

struct MedianFilter {
  int radius = 1;  // pixels
};

using DenoiseMethod = std::variant<FrameAverage, GaussianFilter, MedianFilter>;

/// Scalar image with a validity mask.
struct RealImage {
  int width = 0;
  int height = 0;
  Vector values;
  Mask valid;

  RealImage() = default;
  RealImage(int w, int h);
  int pixels() const { return width * height; }
};

/// Spatial filter over valid pixels only (normalized convolution for the
/// Gaussian, valid-window median). A pixel is valid iff its support holds
/// valid weight. FrameAverage is rejected here.
RealImage filter_image(const RealImage& img, const DenoiseMethod& method);

/// Filters the S and G planes independently. FrameAverage(n) needs exactly n
/// co-registered frames; spatial filters take one frame.
PhasorImage denoise_sg(std::span<const PhasorImage> frames, const DenoiseMethod& method);
PhasorImage denoise_sg(const PhasorImage& img, const DenoiseMethod& method);

/// Per-pixel s / (g omega); pixels with g <= 0 are invalid.
LifetimeImage lifetime_from_phasor_image(const PhasorImage& img);

/// Baseline for comparison: per-frame lifetimes filtered directly.
RealImage denoise_lifetime_direct(std::span<const PhasorImage> frames, const DenoiseMethod& method);

/// Intensity-weighted mean lifetime plane.
RealImage lifetime_plane(const LifetimeImage& img);

/// 10 log10(peak^2 / MSE) over pixels valid in both; peak defaults to the
/// reference maximum over those pixels. Identical images give +infinity.
double psnr(const RealImage& image, const RealImage& reference, std::optional<double> peak = std::nullopt);

/// HSV rendering: hue 0 deg (red) at tau_min to 240 deg (blue) at tau_max,
/// value = intensity / 99th percentile, full saturation. Invalid pixels black.
ColorImage composite(const RealImage& intensity, const LifetimeImage& lifetime, double tau_min, double tau_max);

/// Full-saturation HSV to 8-bit RGB; hue in degrees, value in [0, 1].
Rgb hsv_to_rgb(double hue, double value);

}  // namespace flim
