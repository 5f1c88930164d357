#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "flim/types.hpp"

namespace flim {

/// I(t) = IRF(t) * sum_n f_n exp(-t/tau_n)/tau_n on the bin centers of `grid`,
/// linearly convolved and renormalized to unit sum. The decay starts at the
/// grid origin; light past the last bin is dropped.
Vector evaluate_decay(const DecayModel& model, const Irf& irf, const TimeGrid& grid);

/// Same as evaluate_decay but with the IRF already sampled on the grid.
Vector evaluate_decay(const DecayModel& model, const Vector& irf_samples, const TimeGrid& grid);

/// Independent Poisson draw per bin with mean total_photons * curve_i / sum(curve).
TcspcHistogram synthesize_histogram(const Vector& curve, const TimeGrid& grid, double total_photons,
                                    std::uint64_t seed);

struct RectShape {
  int x0, y0, x1, y1;  // half-open pixel bounds
};

struct DiskShape {
  double cx, cy, radius;  // pixel units; a pixel belongs if its center is inside
};

/// Arbitrary footprint with per-pixel photon weights in [0, 1] (IDX digits).
struct MaskShape {
  std::vector<double> weight;
};

struct PhantomRegion {
  std::variant<RectShape, DiskShape, MaskShape> shape;
  DecayModel model;
  double mean_photons = 0.0;
};

struct PhantomSpec {
  int width = 0;
  int height = 0;
  std::vector<PhantomRegion> regions;
  double background_photons = 0.0;
  std::optional<DecayModel> background_model;
};

struct SynthesizedCube {
  FlimCube cube;
  LifetimeImage truth;
  std::vector<std::string> warnings;
};

/// Per-pixel decay model and mean photon count; later regions overwrite earlier ones.
struct PhantomLayout {
  std::vector<int> region;  // -1 = background, -2 = empty
  Vector mean_photons;
  std::vector<std::string> warnings;
};

PhantomLayout rasterize(const PhantomSpec& spec);

/// Poisson-sampled cube and the generating lifetimes. Bin i of pixel p uses the
/// stream keyed (seed, p, i).
SynthesizedCube synthesize_cube(const PhantomSpec& spec, const Irf& irf, const TimeGrid& grid,
                                std::uint64_t seed);

/// Noise-free expected counts for the same phantom.
FlimCube expected_cube(const PhantomSpec& spec, const Irf& irf, const TimeGrid& grid);

}  // namespace flim
