#include "flim/bench.hpp"

#include <chrono>
#include <cmath>

#include "flim/decay.hpp"
#include "flim/error.hpp"
#include "flim/random.hpp"

namespace flim {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

SpeedComparison compare_speed(const MlpModel& model, const FlimCube& cube, const Irf& irf) {
  SpeedComparison out;
  out.pixels = cube.pixels();
  auto t0 = std::chrono::steady_clock::now();
  const LifetimeImage mlp = mlp_batch(model, cube);
  out.mlp_seconds = seconds_since(t0);
  t0 = std::chrono::steady_clock::now();
  const LifetimeImage lsm = batch_fit(cube, irf, 2, FitMethod::kLsm);
  out.lsm_seconds = seconds_since(t0);
  if (mlp.valid_count() == 0 || lsm.valid_count() == 0) fail(ErrorKind::kLowSignal, "benchmark cube has no valid pixels");
  return out;
}

bool within(double tau1, double tau2, double a1, const DecayModel& truth, double tolerance) {
  const Vector tau = truth.lifetimes();
  const Vector f = truth.normalized_fractions();
  auto ok = [&](double est, double ref) { return std::fabs(est - ref) <= tolerance * std::fabs(ref); };
  return ok(tau1, tau[0]) && ok(tau2, tau[1]) && ok(a1, f[0]);
}

SuccessRate success_rate(const MlpModel& model, const TrainConfig& cfg, const Irf& irf, const TimeGrid& grid,
                         const SuccessOptions& options) {
  require(options.trials > 0, "success-rate needs at least one trial");
  const Vector irf_samples = irf.sample(grid);
  SuccessRate out;
  out.trials = options.trials;
  for (int t = 0; t < options.trials; ++t) {
    CounterRng rng(options.seed, 0x73756363ULL, static_cast<std::uint64_t>(t));
    const double tau1 = cfg.tau1_min + (cfg.tau1_max - cfg.tau1_min) * rng.uniform();
    const double tau2 = cfg.tau2_min + (cfg.tau2_max - cfg.tau2_min) * rng.uniform();
    const double a1 = cfg.a1_min + (cfg.a1_max - cfg.a1_min) * rng.uniform();
    const DecayModel truth = DecayModel::bi(tau1, tau2, a1);
    const TcspcHistogram hist = synthesize_histogram(evaluate_decay(truth, irf_samples, grid), grid,
                                                     options.photons, mix64(options.seed + 0x9e37ULL * (t + 1)));

    const MlpEstimate m = mlp_predict(model, hist);
    if (within(m.tau1, m.tau2, m.a1, truth, options.tolerance)) ++out.mlp_success;

    const double lo = std::log(options.init_tau_min);
    const double span = std::log(options.init_tau_max) - lo;
    const double i1 = std::exp(lo + span * rng.uniform());
    const double i2 = std::exp(lo + span * rng.uniform());
    const double f1 = 0.05 + 0.9 * rng.uniform();
    try {
      const FitResult fit = fit_lsm(hist, irf, 2, DecayModel::bi(i1, i2, f1));
      const Vector tau = fit.model.lifetimes();
      const Vector f = fit.model.normalized_fractions();
      if (within(tau[0], tau[1], f[0], truth, options.tolerance)) ++out.lsm_success;
    } catch (const FlimError&) {
    }
  }
  return out;
}

}  // namespace flim
