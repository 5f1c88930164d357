#include <doctest.h>

#include <cmath>

#include "flim/decay.hpp"
#include "flim/error.hpp"
#include "flim/fitting.hpp"
#include "flim/random.hpp"
#include "oracles.hpp"

using namespace flim;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FlimError& e) {
    return e.kind();
  }
  FAIL("expected a FlimError");
  return ErrorKind::kIo;
}

}  // namespace

TEST_CASE("decay model validation") {
  CHECK(kind_of([] { DecayModel(std::vector<DecayComponent>{}); }) == ErrorKind::kInvalidArgument);
  CHECK(kind_of([] { DecayModel({{1.0, 0.0}}); }) == ErrorKind::kInvalidArgument);
  CHECK(kind_of([] { DecayModel({{1.0, std::nan("")}}); }) == ErrorKind::kInvalidArgument);
  CHECK(kind_of([] { DecayModel({{-0.1, 1.0}, {1.0, 2.0}}); }) == ErrorKind::kInvalidArgument);
  CHECK(kind_of([] { DecayModel({{0.0, 1.0}, {0.0, 2.0}}); }) == ErrorKind::kInvalidArgument);
  const DecayModel m({{0.3, 1.0}, {0.9, 2.0}, {0.1, 4.0}});
  CHECK(std::fabs(m.normalized_fractions().sum() - 1.0) < 1e-12);
}

TEST_CASE("Dirac single exponential is a pure exponential across bins") {
  const TimeGrid grid(256, 0.05);
  const Vector c = evaluate_decay(DecayModel::mono(2.0), Irf::dirac(), grid);
  // bin 40 is 2 ns after bin 0
  CHECK(std::fabs(c[40] / c[0] - std::exp(-1.0)) < 1e-6);
  for (int i = 1; i < grid.n_bins; ++i) CHECK(c[i] < c[i - 1]);
}

TEST_CASE("Dirac mixture is the fraction-weighted sum of normalized exponentials") {
  const TimeGrid grid(512, 0.03);
  const Vector mix = evaluate_decay(DecayModel::bi(0.5, 5.0, 0.5), Irf::dirac(), grid);
  // unnormalized reference: sum of unit-area exponentials at bin centers
  Vector ref(grid.n_bins);
  for (int i = 0; i < grid.n_bins; ++i) {
    const double t = (i + 0.5) * grid.bin_width;
    ref[i] = 0.5 * std::exp(-t / 0.5) / 0.5 + 0.5 * std::exp(-t / 5.0) / 5.0;
  }
  ref /= ref.sum();
  CHECK((mix - ref).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::fabs(mix[0] - ref[0]) < 1e-12);
}

TEST_CASE("Gaussian IRF convolution matches the O(n^2) oracle") {
  const TimeGrid grid;
  const Irf irf = Irf::gaussian(1.0, 0.150);
  const Vector fast = evaluate_decay(DecayModel::mono(1.5), irf, grid);
  const Vector slow = oracle::brute_force_decay({{1.0, 1.5}}, irf.sample(grid), grid.bin_width);
  CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-10);

  const Vector fast2 = evaluate_decay(DecayModel::bi(0.4, 3.0, 0.3), irf, grid);
  const Vector slow2 = oracle::brute_force_decay({{0.3, 0.4}, {0.7, 3.0}}, irf.sample(grid), grid.bin_width);
  CHECK((fast2 - slow2).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("measured IRF is area-normalized and convolved") {
  const TimeGrid grid(64, 0.1);
  Vector samples = Vector::Zero(64);
  samples[3] = 2.0;
  samples[4] = 6.0;
  const Irf irf = Irf::measured(samples);
  CHECK(std::fabs(irf.sample(grid).sum() - 1.0) < 1e-12);
  const Vector fast = evaluate_decay(DecayModel::mono(0.7), irf, grid);
  const Vector slow = oracle::brute_force_decay({{1.0, 0.7}}, irf.sample(grid), grid.bin_width);
  CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(kind_of([] { Irf::measured(Vector::Zero(4)); }) == ErrorKind::kInvalidArgument);
  CHECK(kind_of([&] { Irf::measured(Vector::Ones(100)).sample(grid); }) == ErrorKind::kTruncation);
}

TEST_CASE("evaluate_decay output is a nonnegative unit-sum curve") {
  CounterRng rng(3);
  for (int k = 0; k < 50; ++k) {
    const DecayModel m = DecayModel::bi(rng.uniform(0.05, 2.0), rng.uniform(2.0, 10.0), rng.uniform());
    const Vector c = evaluate_decay(m, Irf::gaussian(rng.uniform(1.0, 2.0), rng.uniform(0.02, 0.3)), TimeGrid());
    CHECK(c.minCoeff() >= 0.0);
    CHECK(std::fabs(c.sum() - 1.0) < 1e-9);
  }
}

TEST_CASE("Gaussian IRF outside the grid raises a truncation error") {
  CHECK(kind_of([] { evaluate_decay(DecayModel::mono(1.0), Irf::gaussian(0.1, 0.15), TimeGrid()); }) ==
        ErrorKind::kTruncation);
  CHECK(kind_of([] { evaluate_decay(DecayModel::mono(1.0), Irf::gaussian(12.4, 0.15), TimeGrid()); }) ==
        ErrorKind::kTruncation);
  CHECK(kind_of([] { Irf::gaussian(1.0, 0.0); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("Poisson histogram synthesis") {
  const TimeGrid grid;
  const Vector flat = Vector::Constant(256, 1.0 / 256);

  SUBCASE("tiny photon budget gives empty histograms") {
    double total = 0.0;
    for (std::uint64_t s = 0; s < 1000; ++s) total += synthesize_histogram(flat, grid, 1e-9, s).total();
    CHECK(total / (1000.0 * 256) < 0.01);
  }
  SUBCASE("fixed seed is deterministic") {
    const auto a = synthesize_histogram(flat, grid, 1e4, 42);
    const auto b = synthesize_histogram(flat, grid, 1e4, 42);
    const auto c = synthesize_histogram(flat, grid, 1e4, 43);
    CHECK(a.counts == b.counts);
    CHECK(a.counts != c.counts);
  }
  SUBCASE("flat curve, 1e6 photons: per-bin counts within 3 sigma") {
    const auto h = synthesize_histogram(flat, grid, 1e6, 9);
    const double mu = 1e6 / 256;
    int inside = 0;
    for (int i = 0; i < 256; ++i) inside += std::fabs(h.counts[i] - mu) <= 3.0 * std::sqrt(mu);
    CHECK(inside >= 250);
  }
  SUBCASE("empirical mean matches the expected curve (chi-square)") {
    const Vector curve = evaluate_decay(DecayModel::mono(2.0), Irf::gaussian(1.0, 0.2), grid);
    const double photons = 2000.0;
    Vector sum = Vector::Zero(256);
    const int draws = 10000;
    for (int s = 0; s < draws; ++s) sum += synthesize_histogram(curve, grid, photons, static_cast<std::uint64_t>(s)).counts;
    // Sum of Poisson draws is Poisson(draws * mean); Pearson statistic ~ chi2(256).
    double chi2 = 0.0;
    int dof = 0;
    for (int i = 0; i < 256; ++i) {
      const double e = draws * photons * curve[i];
      if (e < 5.0) continue;
      chi2 += (sum[i] - e) * (sum[i] - e) / e;
      ++dof;
    }
    // chi2 upper quantile at p = 0.001 via Wilson-Hilferty
    const double z = 3.090;
    const double k = dof;
    const double q = k * std::pow(1.0 - 2.0 / (9 * k) + z * std::sqrt(2.0 / (9 * k)), 3);
    CHECK(chi2 < q);
  }
  CHECK(kind_of([&] { synthesize_histogram(flat, grid, 0.0, 1); }) == ErrorKind::kInvalidArgument);
  CHECK(kind_of([&] { synthesize_histogram(flat, grid, -5.0, 1); }) == ErrorKind::kInvalidArgument);
}

TEST_CASE("Poisson sampler moments on both branches") {
  for (double mean : {0.3, 4.0, 9.5, 10.5, 37.0, 400.0}) {
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      CounterRng rng(17, static_cast<std::uint64_t>(i), 0);
      const double x = static_cast<double>(rng.poisson(mean));
      s += x;
      s2 += x * x;
    }
    const double m = s / n;
    const double v = s2 / n - m * m;
    CAPTURE(mean);
    CHECK(std::fabs(m - mean) < 5.0 * std::sqrt(mean / n));
    CHECK(std::fabs(v / mean - 1.0) < 0.02);
  }
}

TEST_CASE("phantom synthesis") {
  const TimeGrid grid;
  SUBCASE("full-frame Dirac phantom fits back within 5%") {
    PhantomSpec spec;
    spec.width = 10;
    spec.height = 10;
    spec.regions.push_back({RectShape{0, 0, 10, 10}, DecayModel::mono(1.0), 1e4});
    const SynthesizedCube s = synthesize_cube(spec, Irf::dirac(), grid, 1);
    const LifetimeImage fit = batch_fit(s.cube, Irf::dirac(), 1, FitMethod::kLsm);
    int good = 0;
    for (int p = 0; p < 100; ++p) good += fit.valid[p] && std::fabs(fit.tau(0, p) - 1.0) < 0.05;
    CHECK(good >= 99);
    for (int p = 0; p < 100; ++p) CHECK(s.truth.tau(0, p) == 1.0);
  }
  SUBCASE("zero background stays empty; overlap warns and later region wins") {
    PhantomSpec spec;
    spec.width = 12;
    spec.height = 8;
    spec.regions.push_back({RectShape{0, 0, 6, 8}, DecayModel::mono(0.5), 1e4});
    spec.regions.push_back({RectShape{4, 0, 10, 8}, DecayModel::mono(3.0), 1e4});
    const SynthesizedCube s = synthesize_cube(spec, Irf::gaussian(1.0, 0.15), grid, 2);
    CHECK_FALSE(s.warnings.empty());
    const Vector intensity = s.cube.intensity();
    for (int y = 0; y < 8; ++y) {
      for (int x = 10; x < 12; ++x) {
        CHECK(intensity[s.cube.index(x, y)] == 0.0);
        CHECK_FALSE(s.truth.valid[s.cube.index(x, y)]);
      }
      CHECK(s.truth.tau(0, s.cube.index(5, y)) == 3.0);
      CHECK(s.truth.tau(0, s.cube.index(3, y)) == 0.5);
    }
  }
  SUBCASE("two-region lifetimes ordered with a gap above 1 ns") {
    PhantomSpec spec;
    spec.width = 16;
    spec.height = 8;
    spec.regions.push_back({RectShape{0, 0, 8, 8}, DecayModel::mono(0.5), 1e4});
    spec.regions.push_back({DiskShape{12, 4, 3.5}, DecayModel::mono(3.0), 1e4});
    const Irf irf = Irf::gaussian(1.0, 0.15);
    const SynthesizedCube s = synthesize_cube(spec, irf, grid, 3);
    const LifetimeImage fit = batch_fit(s.cube, irf, 1, FitMethod::kLsm);
    double a = 0, b = 0;
    int na = 0, nb = 0;
    for (int p = 0; p < fit.pixels(); ++p) {
      if (!fit.valid[p]) continue;
      if (s.truth.tau(0, p) == 0.5) a += fit.tau(0, p), ++na;
      if (s.truth.tau(0, p) == 3.0) b += fit.tau(0, p), ++nb;
    }
    REQUIRE(na > 0);
    REQUIRE(nb > 0);
    CHECK(b / nb - a / na > 1.0);
  }
  SUBCASE("cube draws are keyed per pixel and bin") {
    PhantomSpec spec;
    spec.width = 4;
    spec.height = 4;
    spec.regions.push_back({RectShape{0, 0, 4, 4}, DecayModel::mono(2.0), 500});
    const auto a = synthesize_cube(spec, Irf::dirac(), grid, 5).cube.counts;
    const auto b = synthesize_cube(spec, Irf::dirac(), grid, 5).cube.counts;
    CHECK(a == b);
    CHECK(a.col(0) != a.col(1));
  }
  SUBCASE("out-of-bounds region is rejected") {
    PhantomSpec spec;
    spec.width = 4;
    spec.height = 4;
    spec.regions.push_back({RectShape{0, 0, 5, 4}, DecayModel::mono(2.0), 10});
    CHECK(kind_of([&] { synthesize_cube(spec, Irf::dirac(), grid, 1); }) == ErrorKind::kInvalidArgument);
  }
}
