#include "flim/segment.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "flim/error.hpp"
#include "flim/parallel.hpp"
#include "flim/random.hpp"

namespace flim {

namespace {

double dist2(const Phasor& a, const Phasor& b) {
  const double dg = a.g - b.g;
  const double ds = a.s - b.s;
  return dg * dg + ds * ds;
}

int nearest(const Phasor& p, const std::vector<Phasor>& centroids) {
  int best = 0;
  double best_d = dist2(p, centroids[0]);
  for (int c = 1; c < static_cast<int>(centroids.size()); ++c) {
    const double d = dist2(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::vector<Phasor> seed_plus_plus(const std::vector<Phasor>& pts, int k, CounterRng& rng) {
  std::vector<Phasor> centroids;
  centroids.reserve(k);
  centroids.push_back(pts[rng.below(pts.size())]);
  std::vector<double> d2(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) d2[i] = dist2(pts[i], centroids[0]);
  while (static_cast<int>(centroids.size()) < k) {
    std::vector<double> cumulative(pts.size());
    std::partial_sum(d2.begin(), d2.end(), cumulative.begin());
    const double total = cumulative.back();
    std::size_t pick;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      pick = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
      pick = std::min(pick, pts.size() - 1);
    } else {
      pick = rng.below(pts.size());
    }
    centroids.push_back(pts[pick]);
    for (std::size_t i = 0; i < pts.size(); ++i) d2[i] = std::min(d2[i], dist2(pts[i], centroids.back()));
  }
  return centroids;
}

}  // namespace

SegmentationResult kmeans_phasor(const PhasorImage& img, int k, std::uint64_t seed, int max_iterations) {
  require(k >= 1, "K must be positive");
  require(max_iterations >= 1, "max_iterations must be positive");
  std::vector<std::size_t> index;
  std::vector<Phasor> pts;
  for (int p = 0; p < img.pixels(); ++p) {
    if (!img.valid[p]) continue;
    index.push_back(static_cast<std::size_t>(p));
    pts.push_back({img.g[p], img.s[p]});
  }
  require(pts.size() >= static_cast<std::size_t>(k), "fewer valid pixels than clusters");

  CounterRng rng(seed, 0x6b6d65616e73ULL);
  std::vector<Phasor> centroids = seed_plus_plus(pts, k, rng);
  std::vector<int> assign(pts.size(), -1);

  SegmentationResult out;
  out.width = img.width;
  out.height = img.height;
  int iter = 0;
  while (iter < max_iterations) {
    ++iter;
    std::vector<std::uint8_t> changed(pts.size(), 0);
    parallel_for(pts.size(), [&](std::size_t i) {
      const int c = nearest(pts[i], centroids);
      changed[i] = c != assign[i];
      assign[i] = c;
    });
    if (std::none_of(changed.begin(), changed.end(), [](std::uint8_t v) { return v != 0; })) {
      out.converged = true;
      break;
    }
    // Fixed-order reduction.
    std::vector<Phasor> sums(k);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      sums[assign[i]].g += pts[i].g;
      sums[assign[i]].s += pts[i].s;
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) centroids[c] = {sums[c].g / counts[c], sums[c].s / counts[c]};
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const double d = dist2(pts[i], centroids[assign[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      centroids[c] = pts[far];
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) inertia += dist2(pts[i], centroids[assign[i]]);
    out.inertia_trace.push_back(inertia);
  }
  out.iterations = iter;

  // Canonical order: ascending g, then s, then internal index.
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (centroids[a].g != centroids[b].g) return centroids[a].g < centroids[b].g;
    return centroids[a].s < centroids[b].s;
  });
  std::vector<int> rank(k);
  for (int r = 0; r < k; ++r) rank[order[r]] = r;
  out.centroids.resize(k);
  for (int c = 0; c < k; ++c) out.centroids[rank[c]] = centroids[c];
  out.labels.assign(static_cast<std::size_t>(img.pixels()), -1);
  out.inertia = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out.labels[index[i]] = rank[assign[i]];
    out.inertia += dist2(pts[i], centroids[assign[i]]);
  }
  return out;
}

std::vector<Rgb> default_palette(int k) {
  static const Rgb base[] = {{230, 25, 75},  {60, 180, 75},  {0, 130, 200}, {255, 225, 25},
                             {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230}};
  std::vector<Rgb> out;
  for (int i = 0; i < k; ++i) out.push_back(base[i % 8]);
  return out;
}

ColorImage labels_to_image(const SegmentationResult& result, std::span<const Rgb> palette) {
  require(palette.size() >= result.centroids.size(), "palette has fewer colors than clusters");
  ColorImage img{result.width, result.height, std::vector<Rgb>(result.labels.size())};
  for (std::size_t p = 0; p < result.labels.size(); ++p) {
    if (result.labels[p] >= 0) img.pixels[p] = palette[result.labels[p]];
  }
  return img;
}

}  // namespace flim
