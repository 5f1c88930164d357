#pragma once

#include "flim/types.hpp"

namespace flim {

struct FdMeasurement {
  double m;      // modulation degree, (0, 1]
  double phi;    // phase shift, [0, pi/2)
  double omega;  // rad/ns
};

struct FdLifetimes {
  double tau_m;    // from modulation
  double tau_phi;  // from phase
};

/// Fundamental harmonic of the grid window, 2 pi / span.
double default_omega(const TimeGrid& grid);

/// Midpoint-rule cosine/sine transforms over bin centers, t from the grid origin.
Phasor phasor_from_histogram(const TcspcHistogram& hist, double omega);

/// g = m cos(phi), s = m sin(phi).
Phasor phasor_from_fd(const FdMeasurement& meas);

/// Inverse of phasor_from_fd.
FdMeasurement fd_from_phasor(const Phasor& p, double omega);

/// Closed-form phasor of a decay whose amplitudes are intensity fractions.
Phasor phasor_from_components(const DecayModel& model, double omega);

/// tau_phi = tan(phi)/omega, tau_m = sqrt(1/m^2 - 1)/omega.
FdLifetimes fd_lifetimes(const FdMeasurement& meas);

/// s / (g omega).
double average_lifetime(const Phasor& p, double omega);

/// Per-pixel phasors; pixels with intensity below the floor are invalid.
PhasorImage phasor_image(const FlimCube& cube, double omega, double intensity_floor = 100.0);

}  // namespace flim
