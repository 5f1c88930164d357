// Independent reference computations shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "flim/estimator.hpp"
#include "flim/random.hpp"
#include "flim/types.hpp"

namespace oracle {

using flim::Matrix;
using flim::Phasor;
using flim::Vector;

/// Composite Simpson phasor of a continuous decay f on [0, T].
inline Phasor phasor_of_function(const std::function<double(double)>& f, double T, double omega, int n = 200000) {
  if (n % 2) ++n;
  const double h = T / n;
  double c = 0.0, s = 0.0, a = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const double t = i * h;
    const double v = f(t);
    a += w * v;
    c += w * v * std::cos(omega * t);
    s += w * v * std::sin(omega * t);
  }
  return {c / a, s / a};
}

/// Phasor of a sampled curve by direct summation at the bin centers.
inline Phasor phasor_by_quadrature(const Vector& curve, const flim::TimeGrid& grid, double omega) {
  double c = 0.0, s = 0.0, a = 0.0;
  for (int i = 0; i < grid.n_bins; ++i) {
    const double t = (i + 0.5) * grid.bin_width;
    a += curve[i];
    c += curve[i] * std::cos(omega * t);
    s += curve[i] * std::sin(omega * t);
  }
  return {c / a, s / a};
}

inline double distance_to_segment(const Phasor& p, const Phasor& a, const Phasor& b) {
  const double dx = b.g - a.g, dy = b.s - a.s;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.g - a.g) * dx + (p.s - a.s) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.g - (a.g + t * dx), p.s - (a.s + t * dy));
}

/// O(n^2) discrete convolution of IRF samples with sum_n f_n exp(-t/tau_n)/tau_n
/// evaluated at lags (i - j + 1/2) * bin_width, normalized to unit sum.
inline Vector brute_force_decay(const std::vector<std::pair<double, double>>& fraction_tau, const Vector& irf,
                                double bin_width) {
  const int n = static_cast<int>(irf.size());
  double fsum = 0.0;
  for (auto [f, t] : fraction_tau) fsum += f;
  Vector y = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double lag = (i - j + 0.5) * bin_width;
      double k = 0.0;
      for (auto [f, t] : fraction_tau) k += f / fsum * std::exp(-lag / t) / t;
      y[i] += irf[j] * k;
    }
  }
  return y / y.sum();
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Best accuracy over all label permutations; negative labels count as wrong.
inline double matched_accuracy(const std::vector<int>& labels, const std::vector<int>& truth, int k) {
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  do {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= 0 && perm[static_cast<std::size_t>(labels[i])] == truth[i]) ++hit;
    }
    best = std::max(best, static_cast<double>(hit) / static_cast<double>(labels.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Largest relative disagreement between backprop and central differences
/// over `checks` randomly chosen parameters (every layer is sampled).
inline double max_gradient_error(flim::MlpModel model, const Matrix& x, const Matrix& y, int checks,
                                 std::uint64_t seed, double h = 1e-5) {
  flim::MlpGradients grads;
  flim::mlp_loss(model, x, y, &grads);
  flim::CounterRng rng(seed);
  double worst = 0.0;
  const std::size_t layers = model.weights.size();
  for (int c = 0; c < checks; ++c) {
    const std::size_t l = static_cast<std::size_t>(c) % layers;
    const bool bias = rng.uniform() < 0.25;
    double* param;
    double analytic;
    if (bias) {
      const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(model.biases[l].size())));
      param = &model.biases[l][i];
      analytic = grads.biases[l][i];
    } else {
      const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(model.weights[l].size())));
      param = model.weights[l].data() + i;
      analytic = grads.weights[l].data()[i];
    }
    const double saved = *param;
    *param = saved + h;
    const double up = flim::mlp_loss(model, x, y, nullptr);
    *param = saved - h;
    const double down = flim::mlp_loss(model, x, y, nullptr);
    *param = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double scale = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
    worst = std::max(worst, std::fabs(analytic - numeric) / scale);
  }
  return worst;
}

/// CLI invocations whose outputs are checked against tests/fixtures/golden.
inline std::vector<std::vector<std::string>> golden_pipeline(const std::filesystem::path& fixtures,
                                                             const std::filesystem::path& dir) {
  auto f = [&](const char* name) { return (fixtures / name).string(); };
  auto o = [&](const char* name) { return (dir / name).string(); };
  const std::vector<std::string> irf = {"--irf", "gaussian", "--irf-center", "0.5", "--irf-fwhm", "0.15"};
  auto with_irf = [&](std::vector<std::string> v) {
    v.insert(v.end(), irf.begin(), irf.end());
    return v;
  };
  return {
      {"simulate", "--spec", f("two_region.json"), "--seed", "7", "--out", o("cube.flim"), "--truth", o("truth.csv")},
      with_irf({"fit", "--cube", o("cube.flim"), "--method", "lsm", "--components", "2", "--out", o("fit_lsm.csv")}),
      {"fit", "--cube", o("cube.flim"), "--method", "tail", "--out", o("fit_tail.csv")},
      {"fit", "--cube", o("cube.flim"), "--method", "gate", "--out", o("fit_gate.csv")},
      {"fit", "--cube", o("cube.flim"), "--method", "em", "--out", o("fit_em.csv")},
      {"phasor", "--cube", o("cube.flim"), "--out", o("phasor.csv")},
      {"segment", "--cube", o("cube.flim"), "--k", "2", "--seed", "3", "--out", o("labels.ppm"), "--csv",
       o("labels.csv")},
      {"classify", "features", "--cube", o("cube.flim"), "--out", o("features.csv")},
      {"cs", "forward", "--cube", o("cube.flim"), "--patterns", "128", "--seed", "5", "--out", o("meas.flimmeas")},
      {"cs", "invert", "--meas", o("meas.flimmeas"), "--ridge", "1e-3", "--out", o("cs_stack.flim")},
      {"cs", "lifetime", "--cube", o("cs_stack.flim"), "--method", "gate", "--out", o("cs_life.csv")},
      {"denoise", "--cube", o("cube.flim"), "--method", "gaussian", "--sigma", "1", "--out", o("denoise.csv")},
      {"composite", "--lifetime", o("fit_lsm.csv"), "--tau-min", "0", "--tau-max", "4", "--out", o("composite.ppm")},
      with_irf({"train-mlp", "--config", f("mlp_small.json"), "--out", o("mlp.flmlp")}),
      {"fit", "--cube", o("cube.flim"), "--method", "mlp", "--model", o("mlp.flmlp"), "--out", o("fit_mlp.csv")},
  };
}

inline std::vector<std::string> golden_outputs() {
  return {"cube.flim",   "truth.csv",     "fit_lsm.csv",    "fit_tail.csv", "fit_gate.csv", "fit_em.csv",
          "phasor.csv",  "labels.ppm",    "labels.csv",     "features.csv", "meas.flimmeas", "cs_stack.flim",
          "cs_life.csv", "denoise.csv",   "composite.ppm",  "mlp.flmlp",    "fit_mlp.csv"};
}

}  // namespace oracle
