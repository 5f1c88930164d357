#pragma once

#include <optional>
#include <string>
#include <vector>

#include "flim/types.hpp"

namespace flim {

struct FitOptions {
  double min_counts = 100.0;
  int max_iterations = 200;
  double lambda0 = 1e-3;
  double tau_min = 0.01;  // ns
  double tau_max = 20.0;  // ns
  double step_tolerance = 1e-8;
  bool record_trace = false;
};

struct FitResult {
  DecayModel model;  // components ascending in lifetime
  double scale = 0.0;  // fitted total photons
  double residual_norm = 0.0;  // sqrt(weighted chi^2 / dof)
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // chi^2 after every accepted step
};

/// Weighted least squares (weights 1/max(counts, 1)) of scale * evaluate_decay
/// with Levenberg-Marquardt. Two-component fractions use a logit parameter.
/// Throws kLowSignal below options.min_counts; non-convergence is reported in
/// the result, not thrown.
FitResult fit_lsm(const TcspcHistogram& hist, const Irf& irf, int n_components,
                  const std::optional<DecayModel>& init = std::nullopt, const FitOptions& options = {});

/// fit_lsm on the bins whose left edge is at or after `start`, with a Dirac IRF
/// placed at the first retained bin.
FitResult tail_fit(const TcspcHistogram& hist, double start, int n_components, const FitOptions& options = {});

/// Two-gate rapid lifetime determination, tau = width / ln(I1 / I2), over two
/// adjacent gates of round(width / bin_width) bins starting at gate1_start.
double gate_lifetime(const TcspcHistogram& hist, double gate_width, double gate1_start);

/// The deterministic starting point fit_lsm uses when no init is given.
DecayModel default_initial_model(const TcspcHistogram& hist, int n_components, const FitOptions& options = {});

struct IrfEstimate {
  double center = 0.0;  // ns
  double fwhm = 0.0;    // ns
  double log_likelihood = 0.0;
};

struct EmOptions {
  double min_counts = 1000.0;
  int max_iterations = 20000;
  double tolerance = 1e-9;     // log-likelihood gain per photon
  double sigma_floor = 1e-3;   // ns
  bool record_trace = false;
};

struct EmResult {
  double tau = 0.0;
  IrfEstimate irf;
  int iterations = 0;
  bool converged = false;
  bool sigma_clamped = false;
  std::vector<double> log_likelihood_trace;
  std::vector<std::string> warnings;
};

struct EmInit {
  double tau;
  IrfEstimate irf;
};

/// Joint lifetime / Gaussian-IRF estimation by EM on the exponentially modified
/// Gaussian model: each photon is t0 + jitter + delay with jitter ~ N(0, sigma^2)
/// and delay ~ Exp(tau); photons sit at their bin centers.
EmResult fit_em(const TcspcHistogram& hist, const std::optional<EmInit>& init = std::nullopt,
                const EmOptions& options = {});

/// Log-likelihood of the binned data under the EMG density at bin centers.
double emg_log_likelihood(const TcspcHistogram& hist, double tau, double center, double sigma);

enum class FitMethod { kLsm, kTail, kGate };

struct BatchOptions {
  FitOptions fit;
  std::optional<double> tail_start;   // ns; default after the cube's summed peak
  std::optional<double> gate_width;   // ns; default half the span after the peak
  std::optional<double> gate_start;   // ns; default the peak bin's left edge
};

/// Per-pixel fits; pixels under the count floor or whose fit throws are invalid.
LifetimeImage batch_fit(const FlimCube& cube, const Irf& irf, int n_components, FitMethod method,
                        const BatchOptions& options = {});

namespace detail {

/// Model counts and Jacobian for the LM parameter vector
/// [scale, tau] or [scale, tau1, tau2, logit(fraction1)].
void lsm_model(const Vector& params, const Vector& irf_samples, const TimeGrid& grid, int n_components,
               Vector& model, Matrix* jacobian);

}  // namespace detail

}  // namespace flim
