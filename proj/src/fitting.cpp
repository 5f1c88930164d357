#include "flim/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "flim/error.hpp"
#include "flim/parallel.hpp"

namespace flim {

namespace detail {

void lsm_model(const Vector& params, const Vector& irf_samples, const TimeGrid& grid, int n_components,
               Vector& model, Matrix* jacobian) {
  const int n = grid.n_bins;
  const double w = grid.bin_width;
  const double scale = params[0];
  double fractions[2] = {1.0, 0.0};
  if (n_components == 2) {
    fractions[0] = 1.0 / (1.0 + std::exp(-params[3]));
    fractions[1] = 1.0 - fractions[0];
  }

  // Per component: c = S / tau and dc/dtau = T / tau^3 - S / tau^2, where
  // S_i = sum_j irf_j e^{-t_ij/tau} and T_i = sum_j irf_j t_ij e^{-t_ij/tau}.
  Matrix comp(n, n_components);
  Matrix dcomp(n, n_components);
  for (int k = 0; k < n_components; ++k) {
    const double tau = params[1 + k];
    const double r = std::exp(-w / tau);
    const double head = std::exp(-0.5 * w / tau);
    double s = 0.0;
    double t = 0.0;
    for (int i = 0; i < n; ++i) {
      t = r * (t + w * s) + irf_samples[i] * 0.5 * w * head;
      s = r * s + irf_samples[i] * head;
      comp(i, k) = s / tau;
      dcomp(i, k) = t / (tau * tau * tau) - s / (tau * tau);
    }
  }

  Vector u = Vector::Zero(n);
  for (int k = 0; k < n_components; ++k) u += fractions[k] * comp.col(k);
  const double total = u.sum();
  const Vector shape = u / total;
  model = scale * shape;
  if (!jacobian) return;

  Matrix& jac = *jacobian;
  jac.resize(n, 1 + (n_components == 2 ? 3 : 1));
  jac.col(0) = shape;
  auto normalized_derivative = [&](const Vector& du) -> Vector {
    return scale * (du - shape * du.sum()) / total;
  };
  for (int k = 0; k < n_components; ++k) jac.col(1 + k) = normalized_derivative(fractions[k] * dcomp.col(k));
  if (n_components == 2) {
    jac.col(3) = normalized_derivative(fractions[0] * fractions[1] * (comp.col(0) - comp.col(1)));
  }
}

}  // namespace detail

namespace {

void check_components(int n_components) {
  require(n_components == 1 || n_components == 2, "n_components must be 1 or 2");
}

double logit(double p) { return std::log(p / (1.0 - p)); }

struct Objective {
  const Vector& counts;
  const Vector& weights;
  double operator()(const Vector& model) const { return (weights.array() * (counts - model).array().square()).sum(); }
};

void clamp_params(Vector& p, int n_components, const FitOptions& o) {
  p[0] = std::max(p[0], 1e-12);
  for (int k = 0; k < n_components; ++k) p[1 + k] = std::clamp(p[1 + k], o.tau_min, o.tau_max);
  if (n_components == 2) p[3] = std::clamp(p[3], -30.0, 30.0);
}

FitResult finish(const Vector& p, int n_components, double chi2, int dof, int iterations, bool converged,
                 std::vector<double> trace) {
  FitResult r;
  if (n_components == 1) {
    r.model = DecayModel::mono(p[1]);
  } else {
    const double f1 = 1.0 / (1.0 + std::exp(-p[3]));
    DecayComponent a{f1, p[1]};
    DecayComponent b{1.0 - f1, p[2]};
    if (b.lifetime < a.lifetime) std::swap(a, b);
    // Both fractions can underflow to zero at the logit clamp; keep the model valid.
    if (a.amplitude <= 0.0 && b.amplitude <= 0.0) a.amplitude = 1.0;
    r.model = DecayModel({a, b});
  }
  r.scale = p[0];
  r.residual_norm = std::sqrt(chi2 / std::max(dof, 1));
  r.iterations = iterations;
  r.converged = converged;
  r.objective_trace = std::move(trace);
  return r;
}

}  // namespace

double gate_lifetime(const TcspcHistogram& hist, double gate_width, double gate1_start) {
  const TimeGrid& g = hist.grid;
  const long m = std::lround(gate_width / g.bin_width);
  require(m >= 1, "gate width is shorter than one bin");
  const long k1 = std::lround((gate1_start - g.origin) / g.bin_width);
  require(k1 >= 0 && k1 + 2 * m <= g.n_bins, "gates extend outside the time grid");
  const double i1 = hist.counts.segment(k1, m).sum();
  const double i2 = hist.counts.segment(k1 + m, m).sum();
  if (!(i1 > 0.0) || !(i2 > 0.0)) fail(ErrorKind::kLowSignal, "a gate integral is zero");
  if (i2 >= i1) fail(ErrorKind::kUndefined, "second gate is not smaller than the first (non-decaying)");
  return static_cast<double>(m) * g.bin_width / std::log(i1 / i2);
}

DecayModel default_initial_model(const TcspcHistogram& hist, int n_components, const FitOptions& options) {
  check_components(n_components);
  const TimeGrid& g = hist.grid;
  const int peak = hist.peak_bin();
  const int half = (g.n_bins - peak) / 2;
  double tau = std::numeric_limits<double>::quiet_NaN();
  if (half >= 1) {
    try {
      tau = gate_lifetime(hist, half * g.bin_width, g.origin + peak * g.bin_width);
    } catch (const FlimError&) {
    }
  }
  if (!std::isfinite(tau)) {
    // Mean delay after the peak.
    double num = 0.0;
    double den = 0.0;
    for (int i = peak; i < g.n_bins; ++i) {
      num += hist.counts[i] * (i - peak) * g.bin_width;
      den += hist.counts[i];
    }
    tau = den > 0.0 && num > 0.0 ? num / den : 1.0;
  }
  tau = std::clamp(tau, options.tau_min, options.tau_max);
  if (n_components == 1) return DecayModel::mono(tau);
  return DecayModel::bi(std::max(0.5 * tau, options.tau_min), std::min(2.0 * tau, options.tau_max), 0.5);
}

FitResult fit_lsm(const TcspcHistogram& hist, const Irf& irf, int n_components,
                  const std::optional<DecayModel>& init, const FitOptions& options) {
  check_components(n_components);
  const double total = hist.total();
  if (total < options.min_counts) fail(ErrorKind::kLowSignal, "histogram has fewer counts than the fit floor");
  const TimeGrid& grid = hist.grid;
  const Vector irf_samples = irf.sample(grid);
  const Vector weights = hist.counts.cwiseMax(1.0).cwiseInverse();
  const Objective objective{hist.counts, weights};

  const DecayModel start = init ? *init : default_initial_model(hist, n_components, options);
  require(static_cast<int>(start.size()) == n_components, "initial model has the wrong number of components");
  const int n_params = n_components == 2 ? 4 : 2;
  Vector p(n_params);
  p[0] = total;
  {
    std::vector<DecayComponent> comps = start.components();
    std::sort(comps.begin(), comps.end(), [](auto& a, auto& b) { return a.lifetime < b.lifetime; });
    const Vector f = DecayModel(comps).normalized_fractions();
    for (int k = 0; k < n_components; ++k) p[1 + k] = comps[k].lifetime;
    if (n_components == 2) p[3] = logit(std::clamp(f[0], 1e-9, 1.0 - 1e-9));
  }
  clamp_params(p, n_components, options);

  Vector model;
  Matrix jac;
  detail::lsm_model(p, irf_samples, grid, n_components, model, &jac);
  double chi2 = objective(model);
  double lambda = options.lambda0;
  std::vector<double> trace;
  if (options.record_trace) trace.push_back(chi2);

  bool converged = false;
  int iterations = 0;
  const Eigen::ArrayXd sqrt_w = weights.array().sqrt();
  while (iterations < options.max_iterations) {
    ++iterations;
    const Matrix jw = jac.array().colwise() * sqrt_w;
    const Vector rw = (hist.counts - model).array() * sqrt_w;
    const Matrix jtj = jw.transpose() * jw;
    const Vector jtr = jw.transpose() * rw;
    Matrix damped = jtj;
    damped.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
    const Vector delta = damped.ldlt().solve(jtr);

    Vector candidate = p + delta;
    clamp_params(candidate, n_components, options);
    const Vector step = candidate - p;
    double rel_step = 0.0;
    for (int i = 0; i < n_params; ++i) rel_step = std::max(rel_step, std::fabs(step[i]) / std::max(std::fabs(p[i]), 1.0));

    Vector candidate_model;
    Matrix candidate_jac;
    detail::lsm_model(candidate, irf_samples, grid, n_components, candidate_model, &candidate_jac);
    const double candidate_chi2 = objective(candidate_model);
    const bool accept = std::isfinite(candidate_chi2) && candidate_chi2 <= chi2;
    if (accept) {
      p = candidate;
      model = std::move(candidate_model);
      jac = std::move(candidate_jac);
      chi2 = candidate_chi2;
      lambda = std::max(lambda / 10.0, 1e-12);
      if (options.record_trace) trace.push_back(chi2);
    } else {
      lambda *= 10.0;
    }
    if (rel_step < options.step_tolerance) {
      converged = true;
      break;
    }
    if (lambda > 1e16) break;
  }
  return finish(p, n_components, chi2, hist.grid.n_bins - n_params, iterations, converged, std::move(trace));
}

FitResult tail_fit(const TcspcHistogram& hist, double start, int n_components, const FitOptions& options) {
  check_components(n_components);
  const TimeGrid& g = hist.grid;
  const double offset = (start - g.origin) / g.bin_width;
  require(std::isfinite(offset), "tail start must be finite");
  const long first = std::max(0L, static_cast<long>(std::ceil(offset - 1e-9)));
  require(first < g.n_bins && g.n_bins - first >= 10, "fewer than 10 bins after the tail start");
  // earliest bin within Poisson noise of the maximum
  const double top = hist.counts.maxCoeff();
  const double level = top - 6.0 * std::sqrt(std::max(top, 0.0));
  long peak = 0;
  while (hist.counts[peak] < level) ++peak;
  require(first >= peak, "tail start lies before the histogram peak");
  const int n = g.n_bins - static_cast<int>(first);
  const TimeGrid tail_grid(n, g.bin_width, g.origin + first * g.bin_width);
  const TcspcHistogram tail(tail_grid, hist.counts.tail(n));
  return fit_lsm(tail, Irf::dirac(), n_components, std::nullopt, options);
}

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

// erfcx(x) = exp(x^2) erfc(x).
double erfcx(double x) {
  if (x < 25.0) return std::exp(x * x) * std::erfc(x);
  const double inv2 = 1.0 / (x * x);
  const double series = 1.0 - 0.5 * inv2 * (1.0 - 1.5 * inv2 * (1.0 - 2.5 * inv2 * (1.0 - 3.5 * inv2)));
  return series / (x * std::sqrt(std::numbers::pi));
}

double log_normal_cdf(double z) {
  if (z > -5.0) return std::log(0.5 * std::erfc(-z / kSqrt2));
  return std::log(0.5 * erfcx(-z / kSqrt2)) - 0.5 * z * z;
}

// phi(z) / Phi(z)
double inverse_mills(double z) { return std::sqrt(2.0 / std::numbers::pi) / erfcx(-z / kSqrt2); }

double fwhm_from_sigma(double sigma) { return sigma * 2.0 * std::sqrt(2.0 * std::log(2.0)); }

}  // namespace

double emg_log_likelihood(const TcspcHistogram& hist, double tau, double center, double sigma) {
  double ll = 0.0;
  const double base = -std::log(tau) + 0.5 * sigma * sigma / (tau * tau);
  for (int i = 0; i < hist.grid.n_bins; ++i) {
    const double n = hist.counts[i];
    if (n == 0.0) continue;
    const double dt = hist.grid.center(i) - center;
    const double z = dt / sigma - sigma / tau;
    ll += n * (base - dt / tau + log_normal_cdf(z));
  }
  return ll;
}

EmResult fit_em(const TcspcHistogram& hist, const std::optional<EmInit>& init, const EmOptions& options) {
  const double photons = hist.total();
  if (photons < options.min_counts) fail(ErrorKind::kLowSignal, "EM needs at least min_counts photons");
  const TimeGrid& g = hist.grid;
  const int n = g.n_bins;
  Vector t(n);
  for (int i = 0; i < n; ++i) t[i] = g.center(i);
  const Vector& c = hist.counts;

  double tau = 0.0;
  double center = 0.0;
  double sigma = 0.0;
  if (init) {
    tau = init->tau;
    center = init->irf.center;
    sigma = init->irf.fwhm / fwhm_from_sigma(1.0);
    require(tau > 0.0 && sigma > 0.0, "EM init needs positive tau and FWHM");
  } else {
    // EMG moments: mean = t0 + tau, var = sigma^2 + tau^2, k3 = 2 tau^3.
    const double mean = c.dot(t) / photons;
    const Eigen::ArrayXd d = t.array() - mean;
    const double var = (c.array() * d.square()).sum() / photons;
    const double k3 = (c.array() * d.cube()).sum() / photons;
    tau = std::cbrt(std::max(k3, 0.0) / 2.0);
    tau = std::clamp(tau, g.bin_width, 0.95 * std::sqrt(var));
    sigma = std::sqrt(std::max(var - tau * tau, 0.0));
    sigma = std::max(sigma, std::max(options.sigma_floor, 0.5 * g.bin_width));
    center = mean - tau;
  }

  EmResult result;
  double ll = emg_log_likelihood(hist, tau, center, sigma);
  if (options.record_trace) result.log_likelihood_trace.push_back(ll);
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    // E-step: delay | t ~ N(mu, sigma^2) truncated to [0, inf), mu = t - t0 - sigma^2/tau.
    double sum_e = 0.0;
    double sum_te = 0.0;
    double sum_e2 = 0.0;
    Vector e1(n);
    for (int i = 0; i < n; ++i) {
      if (c[i] == 0.0) {
        e1[i] = 0.0;
        continue;
      }
      const double z = (t[i] - center) / sigma - sigma / tau;
      const double mu = sigma * z;
      const double lam = inverse_mills(z);
      const double ee = std::max(mu + sigma * lam, 0.0);
      const double ee2 = std::max(mu * mu + sigma * sigma + mu * sigma * lam, ee * ee);
      e1[i] = ee;
      sum_e += c[i] * ee;
      sum_te += c[i] * t[i];
      sum_e2 += c[i] * ee2;
    }
    // M-step.
    const double new_tau = std::max(sum_e / photons, 1e-6);
    const double new_center = (sum_te - sum_e) / photons;
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
      if (c[i] == 0.0) continue;
      const double dt = t[i] - new_center;
      ss += c[i] * (dt * dt - 2.0 * dt * e1[i]);
    }
    double new_sigma = std::sqrt(std::max((ss + sum_e2) / photons, 0.0));
    if (new_sigma < options.sigma_floor) {
      new_sigma = options.sigma_floor;
      result.sigma_clamped = true;
    }
    const double new_ll = emg_log_likelihood(hist, new_tau, new_center, new_sigma);
    const double gain = new_ll - ll;
    tau = new_tau;
    center = new_center;
    sigma = new_sigma;
    ll = new_ll;
    if (options.record_trace) result.log_likelihood_trace.push_back(ll);
    if (gain < options.tolerance * photons) {
      result.converged = true;
      ++it;
      break;
    }
  }
  result.iterations = it;
  // Clamping is only reported when it binds at the solution.
  result.sigma_clamped = result.sigma_clamped && sigma <= options.sigma_floor;
  if (result.sigma_clamped) result.warnings.push_back("IRF sigma clamped at the floor");
  if (!result.converged) result.warnings.push_back("EM did not converge within the iteration cap");
  result.tau = tau;
  result.irf = {center, fwhm_from_sigma(sigma), ll};
  return result;
}

LifetimeImage batch_fit(const FlimCube& cube, const Irf& irf, int n_components, FitMethod method,
                        const BatchOptions& options) {
  check_components(n_components);
  const int out_components = method == FitMethod::kGate ? 1 : n_components;
  LifetimeImage out(cube.width, cube.height, out_components);
  const TimeGrid& g = cube.grid;
  const Vector summed = cube.counts.rowwise().sum();
  Eigen::Index peak = 0;
  summed.maxCoeff(&peak);
  const double peak_edge = g.origin + static_cast<double>(peak) * g.bin_width;

  double tail_start = options.tail_start.value_or(peak_edge + g.bin_width);
  if (!options.tail_start) {
    if (const auto* gauss = std::get_if<GaussianIrf>(&irf.kind())) tail_start = peak_edge + 2.0 * gauss->fwhm;
  }
  const double gate_start = options.gate_start.value_or(peak_edge);
  const double gate_width =
      options.gate_width.value_or(std::max<Eigen::Index>(1, (g.n_bins - peak) / 2) * g.bin_width);

  parallel_for(static_cast<std::size_t>(cube.pixels()), [&](std::size_t p) {
    const Eigen::Index col = static_cast<Eigen::Index>(p);
    const TcspcHistogram hist = cube.histogram(static_cast<int>(p));
    const double total = hist.total();
    out.intensity[col] = total;
    if (total < options.fit.min_counts || total <= 0.0) return;
    try {
      if (method == FitMethod::kGate) {
        out.tau(0, col) = gate_lifetime(hist, gate_width, gate_start);
        out.fraction(0, col) = 1.0;
      } else {
        const FitResult r = method == FitMethod::kLsm
                                ? fit_lsm(hist, irf, n_components, std::nullopt, options.fit)
                                : tail_fit(hist, tail_start, n_components, options.fit);
        const Vector f = r.model.normalized_fractions();
        for (int k = 0; k < n_components; ++k) {
          out.tau(k, col) = r.model.components()[k].lifetime;
          out.fraction(k, col) = f[k];
        }
      }
      out.valid[p] = 1;
    } catch (const FlimError&) {
      out.valid[p] = 0;
    }
  });
  return out;
}

}  // namespace flim
