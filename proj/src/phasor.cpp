#include "flim/phasor.hpp"

#include <cmath>
#include <numbers>

#include "flim/error.hpp"
#include "flim/parallel.hpp"

namespace flim {

double default_omega(const TimeGrid& grid) { return 2.0 * std::numbers::pi / grid.span(); }

namespace {

struct Kernels {
  Vector cos;
  Vector sin;
};

Kernels kernels(const TimeGrid& grid, double omega) {
  const Vector t = grid.offsets();
  return {(omega * t.array()).cos().matrix(), (omega * t.array()).sin().matrix()};
}

}  // namespace

Phasor phasor_from_histogram(const TcspcHistogram& hist, double omega) {
  require(omega > 0.0 && std::isfinite(omega), "omega must be positive");
  const double total = hist.total();
  if (!(total > 0.0)) fail(ErrorKind::kLowSignal, "histogram has no counts");
  const Kernels k = kernels(hist.grid, omega);
  return {hist.counts.dot(k.cos) / total, hist.counts.dot(k.sin) / total};
}

Phasor phasor_from_fd(const FdMeasurement& meas) {
  return {meas.m * std::cos(meas.phi), meas.m * std::sin(meas.phi)};
}

FdMeasurement fd_from_phasor(const Phasor& p, double omega) {
  return {std::hypot(p.g, p.s), std::atan2(p.s, p.g), omega};
}

Phasor phasor_from_components(const DecayModel& model, double omega) {
  require(omega > 0.0 && std::isfinite(omega), "omega must be positive");
  const Vector f = model.normalized_fractions();
  Phasor p;
  for (std::size_t k = 0; k < model.size(); ++k) {
    const double wt = omega * model.components()[k].lifetime;
    const double d = 1.0 + wt * wt;
    p.g += f[k] / d;
    p.s += f[k] * wt / d;
  }
  return p;
}

FdLifetimes fd_lifetimes(const FdMeasurement& meas) {
  require(meas.omega > 0.0 && std::isfinite(meas.omega), "omega must be positive");
  require(meas.phi >= 0.0 && meas.phi < std::numbers::pi / 2, "phase must lie in [0, pi/2)");
  require(meas.m > 0.0, "modulation degree must be positive");
  if (meas.m >= 1.0) fail(ErrorKind::kUndefined, "modulation lifetime is undefined for m >= 1");
  return {std::sqrt(1.0 / (meas.m * meas.m) - 1.0) / meas.omega, std::tan(meas.phi) / meas.omega};
}

double average_lifetime(const Phasor& p, double omega) {
  require(omega > 0.0, "omega must be positive");
  if (!(p.g > 0.0)) fail(ErrorKind::kUndefined, "average lifetime needs g > 0");
  return p.s / (p.g * omega);
}

PhasorImage phasor_image(const FlimCube& cube, double omega, double intensity_floor) {
  require(omega > 0.0 && std::isfinite(omega), "omega must be positive");
  PhasorImage img(cube.width, cube.height, omega);
  const Kernels k = kernels(cube.grid, omega);
  parallel_for(static_cast<std::size_t>(cube.pixels()), [&](std::size_t p) {
    const Eigen::Index col = static_cast<Eigen::Index>(p);
    const double total = cube.counts.col(col).sum();
    img.intensity[col] = total;
    if (!(total > 0.0) || total < intensity_floor) return;
    img.g[col] = cube.counts.col(col).dot(k.cos) / total;
    img.s[col] = cube.counts.col(col).dot(k.sin) / total;
    img.valid[p] = 1;
  });
  return img;
}

}  // namespace flim
