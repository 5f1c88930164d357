#pragma once

#include <cstdint>

#include "flim/estimator.hpp"
#include "flim/fitting.hpp"
#include "flim/types.hpp"

namespace flim {

struct SpeedComparison {
  int pixels = 0;
  double mlp_seconds = 0.0;
  double lsm_seconds = 0.0;
  double speedup() const { return lsm_seconds / mlp_seconds; }
};

/// Wall-clock of mlp_batch against bi-exponential batch_fit(lsm) on one cube.
SpeedComparison compare_speed(const MlpModel& model, const FlimCube& cube, const Irf& irf);

struct SuccessRate {
  int trials = 0;
  int mlp_success = 0;
  int lsm_success = 0;
  double mlp_rate() const { return static_cast<double>(mlp_success) / trials; }
  double lsm_rate() const { return static_cast<double>(lsm_success) / trials; }
};

struct SuccessOptions {
  int trials = 500;
  double photons = 1e4;
  double tolerance = 0.10;  // relative, every parameter
  std::uint64_t seed = 11;
  // LSM starts drawn log-uniform over this lifetime range, fraction uniform in (0.05, 0.95).
  double init_tau_min = 0.05;
  double init_tau_max = 10.0;
};

/// Truths drawn from the training ranges of `cfg`; the LSM gets a random start.
SuccessRate success_rate(const MlpModel& model, const TrainConfig& cfg, const Irf& irf, const TimeGrid& grid,
                         const SuccessOptions& options = {});

/// True when every estimate is within `tolerance` relative of its truth.
bool within(double tau1, double tau2, double a1, const DecayModel& truth, double tolerance);

}  // namespace flim
