#include "flim/decay.hpp"

#include <algorithm>
#include <cmath>

#include "flim/error.hpp"
#include "flim/parallel.hpp"
#include "flim/random.hpp"

namespace flim {

Vector evaluate_decay(const DecayModel& model, const Vector& irf_samples, const TimeGrid& grid) {
  require(!model.empty(), "empty decay model");
  require(irf_samples.size() == grid.n_bins, "IRF samples do not match the grid");
  const Vector fractions = model.normalized_fractions();
  const double w = grid.bin_width;
  Vector curve = Vector::Zero(grid.n_bins);
  for (std::size_t k = 0; k < model.size(); ++k) {
    if (fractions[k] == 0.0) continue;
    const double tau = model.components()[k].lifetime;
    // Exponential convolution by recursion: y_i = r*y_{i-1} + irf_i * d(w/2).
    const double r = std::exp(-w / tau);
    const double head = std::exp(-0.5 * w / tau);
    const double weight = fractions[k] / tau;
    double y = 0.0;
    for (int i = 0; i < grid.n_bins; ++i) {
      y = r * y + irf_samples[i] * head;
      curve[i] += weight * y;
    }
  }
  const double total = curve.sum();
  if (!(total > 0.0)) fail(ErrorKind::kUndefined, "decay has no area on the grid");
  return curve / total;
}

Vector evaluate_decay(const DecayModel& model, const Irf& irf, const TimeGrid& grid) {
  require(!model.empty(), "empty decay model");
  return evaluate_decay(model, irf.sample(grid), grid);
}

TcspcHistogram synthesize_histogram(const Vector& curve, const TimeGrid& grid, double total_photons,
                                    std::uint64_t seed) {
  require(total_photons > 0.0 && std::isfinite(total_photons), "total photons must be positive");
  require(curve.size() == grid.n_bins, "curve does not match the grid");
  require((curve.array() >= 0.0).all() && curve.sum() > 0.0, "curve must be non-negative with positive sum");
  const Vector mean = curve * (total_photons / curve.sum());
  Vector counts(grid.n_bins);
  for (int i = 0; i < grid.n_bins; ++i) {
    CounterRng rng(seed, 0, static_cast<std::uint64_t>(i));
    counts[i] = static_cast<double>(rng.poisson(mean[i]));
  }
  return {grid, counts};
}

namespace {

struct Footprint {
  std::vector<double> weight;  // 0 = outside
};

Footprint footprint(const PhantomRegion& region, int width, int height) {
  Footprint fp;
  fp.weight.assign(static_cast<std::size_t>(width) * height, 0.0);
  if (const auto* r = std::get_if<RectShape>(&region.shape)) {
    require(r->x0 >= 0 && r->y0 >= 0 && r->x1 <= width && r->y1 <= height && r->x0 < r->x1 && r->y0 < r->y1,
            "rectangle region outside the image bounds");
    for (int y = r->y0; y < r->y1; ++y)
      for (int x = r->x0; x < r->x1; ++x) fp.weight[static_cast<std::size_t>(y) * width + x] = 1.0;
  } else if (const auto* d = std::get_if<DiskShape>(&region.shape)) {
    require(d->radius > 0.0, "disk radius must be positive");
    require(d->cx - d->radius >= 0.0 && d->cy - d->radius >= 0.0 && d->cx + d->radius <= width &&
                d->cy + d->radius <= height,
            "disk region outside the image bounds");
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double dx = x + 0.5 - d->cx;
        const double dy = y + 0.5 - d->cy;
        if (dx * dx + dy * dy <= d->radius * d->radius) fp.weight[static_cast<std::size_t>(y) * width + x] = 1.0;
      }
    }
  } else {
    const auto& m = std::get<MaskShape>(region.shape);
    require(m.weight.size() == fp.weight.size(), "mask region does not match the image size");
    for (std::size_t i = 0; i < m.weight.size(); ++i) {
      require(m.weight[i] >= 0.0 && m.weight[i] <= 1.0, "mask weights must lie in [0, 1]");
      fp.weight[i] = m.weight[i];
    }
  }
  return fp;
}

}  // namespace

PhantomLayout rasterize(const PhantomSpec& spec) {
  require(spec.width > 0 && spec.height > 0, "phantom dimensions must be positive");
  require(spec.background_photons >= 0.0, "background photons must be non-negative");
  require(spec.background_photons == 0.0 || spec.background_model.has_value(),
          "background photons need a background decay model");
  const std::size_t n = static_cast<std::size_t>(spec.width) * spec.height;
  PhantomLayout layout;
  const bool has_background = spec.background_photons > 0.0;
  layout.region.assign(n, has_background ? -1 : -2);
  layout.mean_photons = Vector::Constant(static_cast<Eigen::Index>(n), spec.background_photons);
  std::vector<int> owner_count(n, 0);
  for (std::size_t r = 0; r < spec.regions.size(); ++r) {
    const auto& region = spec.regions[r];
    require(region.mean_photons >= 0.0, "region mean photons must be non-negative");
    require(!region.model.empty(), "region needs a decay model");
    const Footprint fp = footprint(region, spec.width, spec.height);
    for (std::size_t p = 0; p < n; ++p) {
      if (fp.weight[p] <= 0.0) continue;
      ++owner_count[p];
      layout.region[p] = static_cast<int>(r);
      layout.mean_photons[static_cast<Eigen::Index>(p)] = region.mean_photons * fp.weight[p];
    }
  }
  std::size_t overlapped = 0;
  for (int c : owner_count) overlapped += c > 1 ? 1 : 0;
  if (overlapped > 0) {
    layout.warnings.push_back(std::to_string(overlapped) +
                              " pixels covered by overlapping regions; the later region wins");
  }
  return layout;
}

namespace {

std::vector<Vector> region_curves(const PhantomSpec& spec, const Irf& irf, const TimeGrid& grid,
                                  Vector* background) {
  const Vector irf_samples = irf.sample(grid);
  std::vector<Vector> curves;
  curves.reserve(spec.regions.size());
  for (const auto& region : spec.regions) curves.push_back(evaluate_decay(region.model, irf_samples, grid));
  if (spec.background_model) *background = evaluate_decay(*spec.background_model, irf_samples, grid);
  return curves;
}

}  // namespace

SynthesizedCube synthesize_cube(const PhantomSpec& spec, const Irf& irf, const TimeGrid& grid,
                                std::uint64_t seed) {
  const PhantomLayout layout = rasterize(spec);
  Vector background;
  const std::vector<Vector> curves = region_curves(spec, irf, grid, &background);

  int components = spec.background_model ? static_cast<int>(spec.background_model->size()) : 1;
  for (const auto& region : spec.regions) components = std::max(components, static_cast<int>(region.model.size()));

  SynthesizedCube out{FlimCube(spec.width, spec.height, grid), LifetimeImage(spec.width, spec.height, components),
                      layout.warnings};
  parallel_for(static_cast<std::size_t>(out.cube.pixels()), [&](std::size_t p) {
    const int owner = layout.region[p];
    if (owner == -2) return;
    const Vector& curve = owner >= 0 ? curves[owner] : background;
    const DecayModel& model = owner >= 0 ? spec.regions[owner].model : *spec.background_model;
    const double mean = layout.mean_photons[static_cast<Eigen::Index>(p)];
    const Eigen::Index col = static_cast<Eigen::Index>(p);
    for (int i = 0; i < grid.n_bins; ++i) {
      CounterRng rng(seed, p, static_cast<std::uint64_t>(i));
      out.cube.counts(i, col) = static_cast<double>(rng.poisson(mean * curve[i]));
    }
    // Ground truth, components ascending; shorter models repeat their last lifetime.
    std::vector<DecayComponent> comps = model.components();
    std::sort(comps.begin(), comps.end(), [](auto& a, auto& b) { return a.lifetime < b.lifetime; });
    const Vector f = DecayModel(comps).normalized_fractions();
    for (int k = 0; k < components; ++k) {
      const std::size_t src = std::min<std::size_t>(k, comps.size() - 1);
      out.truth.tau(k, col) = comps[src].lifetime;
      out.truth.fraction(k, col) = k < static_cast<int>(comps.size()) ? f[k] : 0.0;
    }
    out.truth.intensity[col] = out.cube.counts.col(col).sum();
    out.truth.valid[p] = mean > 0.0 ? 1 : 0;
  });
  return out;
}

FlimCube expected_cube(const PhantomSpec& spec, const Irf& irf, const TimeGrid& grid) {
  const PhantomLayout layout = rasterize(spec);
  Vector background;
  const std::vector<Vector> curves = region_curves(spec, irf, grid, &background);
  FlimCube cube(spec.width, spec.height, grid);
  for (int p = 0; p < cube.pixels(); ++p) {
    const int owner = layout.region[p];
    if (owner == -2) continue;
    cube.counts.col(p) = layout.mean_photons[p] * (owner >= 0 ? curves[owner] : background);
  }
  return cube;
}

}  // namespace flim
