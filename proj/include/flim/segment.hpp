#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flim/types.hpp"

namespace flim {

struct SegmentationResult {
  int width = 0;
  int height = 0;
  std::vector<int> labels;  // -1 for invalid pixels
  std::vector<Phasor> centroids;  // ascending g (then s)
  double inertia = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> inertia_trace;  // after every centroid update
};

/// k-means++ seeding followed by Lloyd iterations on the valid (g, s) points.
SegmentationResult kmeans_phasor(const PhasorImage& img, int k, std::uint64_t seed, int max_iterations = 300);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

struct ColorImage {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;
};

std::vector<Rgb> default_palette(int k);

/// Label map colored by palette[label]; invalid pixels are black.
ColorImage labels_to_image(const SegmentationResult& result, std::span<const Rgb> palette);

}  // namespace flim
