#pragma once

#include <cstdint>
#include <vector>

#include "flim/fitting.hpp"
#include "flim/types.hpp"

namespace flim {

enum class PatternSelection {
  kLowSequency,  // all-ones row, then ascending 2D sequency
  kShuffled,     // all-ones row, then a seeded shuffle of the rest
};

/// Rows of the Sylvester Hadamard matrix of order side^2 mapped -1 -> 0, +1 -> 1.
/// Pixel j = y*side + x.
struct PatternSet {
  int side = 0;
  std::vector<int> rows;  // Hadamard row index of each pattern
  Matrix matrix;          // n_patterns x side^2, entries {0, 1}

  int n_pixels() const { return side * side; }
  int n_patterns() const { return static_cast<int>(rows.size()); }
  Matrix signed_matrix() const { return (2.0 * matrix.array() - 1.0).matrix(); }
};

PatternSet hadamard_patterns(int side, int n_patterns, std::uint64_t seed,
                             PatternSelection selection = PatternSelection::kLowSequency);

struct CsMeasurement {
  int side = 0;
  TimeGrid grid;
  Matrix values;  // n_patterns x n_bins
};

/// Per time gate, measurement = patterns x vectorized frame.
CsMeasurement cs_forward(const FlimCube& cube, const PatternSet& patterns);

struct CsReconstruction {
  FlimCube stack;
  double clamp_fraction = 0.0;  // share of voxels raised from negative to 0
};

/// Per gate argmin |P x - s|^2 + ridge |x|^2 from one Cholesky factorization of
/// P^T P + ridge I. Throws kRankDeficient for ridge 0 on an underdetermined set.
CsReconstruction cs_invert(const CsMeasurement& meas, const PatternSet& patterns, double ridge,
                           bool clamp_negative = true);

enum class CsLifetimeMethod { kLsm, kGate };

LifetimeImage cs_lifetime(const FlimCube& stack, CsLifetimeMethod method, const Irf& irf = Irf::dirac(),
                          const BatchOptions& options = {});

}  // namespace flim
