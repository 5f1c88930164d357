#include "flim/denoise.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "flim/error.hpp"
#include "flim/parallel.hpp"

namespace flim {

RealImage::RealImage(int w, int h) : width(w), height(h) {
  require(w > 0 && h > 0, "image dimensions must be positive");
  values = Vector::Zero(static_cast<Eigen::Index>(w) * h);
  valid.assign(static_cast<std::size_t>(w) * h, 0);
}

namespace {

RealImage gaussian(const RealImage& img, double sigma) {
  require(sigma > 0.0, "Gaussian sigma must be positive");
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * (i / sigma) * (i / sigma));
  const int w = img.width;
  const int h = img.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> num(n, 0.0), den(n, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    if (img.valid[p]) {
      num[p] = img.values[static_cast<Eigen::Index>(p)];
      den[p] = 1.0;
    }
  }
  // Separable passes with a fixed tap order so results do not depend on threads.
  auto pass = [&](std::vector<double>& a, std::vector<double>& b, bool horizontal) {
    std::vector<double> ta(n, 0.0), tb(n, 0.0);
    parallel_for(static_cast<std::size_t>(h), [&](std::size_t yy) {
      const int y = static_cast<int>(yy);
      for (int x = 0; x < w; ++x) {
        double sa = 0.0, sb = 0.0;
        for (int d = -radius; d <= radius; ++d) {
          const int xx = horizontal ? x + d : x;
          const int yv = horizontal ? y : y + d;
          if (xx < 0 || xx >= w || yv < 0 || yv >= h) continue;
          const std::size_t q = static_cast<std::size_t>(yv) * w + xx;
          sa += k[d + radius] * a[q];
          sb += k[d + radius] * b[q];
        }
        ta[static_cast<std::size_t>(y) * w + x] = sa;
        tb[static_cast<std::size_t>(y) * w + x] = sb;
      }
    });
    a.swap(ta);
    b.swap(tb);
  };
  pass(num, den, true);
  pass(num, den, false);
  RealImage out(w, h);
  for (std::size_t p = 0; p < n; ++p) {
    if (den[p] > 0.0) {
      out.values[static_cast<Eigen::Index>(p)] = num[p] / den[p];
      out.valid[p] = 1;
    }
  }
  return out;
}

RealImage median(const RealImage& img, int radius) {
  require(radius >= 1, "median radius must be positive");
  const int w = img.width;
  const int h = img.height;
  RealImage out(w, h);
  parallel_for(static_cast<std::size_t>(h), [&](std::size_t yy) {
    const int y = static_cast<int>(yy);
    std::vector<double> window;
    for (int x = 0; x < w; ++x) {
      window.clear();
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx;
          const int yv = y + dy;
          if (xx < 0 || xx >= w || yv < 0 || yv >= h) continue;
          const std::size_t q = static_cast<std::size_t>(yv) * w + xx;
          if (img.valid[q]) window.push_back(img.values[static_cast<Eigen::Index>(q)]);
        }
      }
      if (window.empty()) continue;
      const std::size_t mid = window.size() / 2;
      std::nth_element(window.begin(), window.begin() + mid, window.end());
      double m = window[mid];
      if (window.size() % 2 == 0) m = 0.5 * (m + *std::max_element(window.begin(), window.begin() + mid));
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      out.values[static_cast<Eigen::Index>(p)] = m;
      out.valid[p] = 1;
    }
  });
  return out;
}

RealImage average(std::span<const RealImage> frames) {
  const RealImage& first = frames.front();
  RealImage out(first.width, first.height);
  for (int p = 0; p < out.pixels(); ++p) {
    double sum = 0.0;
    int count = 0;
    for (const auto& f : frames) {
      if (!f.valid[p]) continue;
      sum += f.values[p];
      ++count;
    }
    if (count > 0) {
      out.values[p] = sum / count;
      out.valid[p] = 1;
    }
  }
  return out;
}

RealImage plane(const PhasorImage& img, const Vector& values) {
  RealImage out(img.width, img.height);
  out.values = values;
  out.valid = img.valid;
  return out;
}

void check_frames(std::span<const PhasorImage> frames, const DenoiseMethod& method) {
  if (const auto* avg = std::get_if<FrameAverage>(&method)) {
    require(avg->n >= 1, "FrameAverage needs n >= 1");
    require(frames.size() == static_cast<std::size_t>(avg->n), "FrameAverage(n) needs exactly n frames");
  } else {
    require(frames.size() == 1, "spatial filters take a single frame");
  }
  for (const auto& f : frames) {
    require(f.width == frames[0].width && f.height == frames[0].height, "frames are not co-registered");
    require(f.omega == frames[0].omega, "frames use different modulation frequencies");
  }
}

RealImage apply_method(std::span<const RealImage> planes, const DenoiseMethod& method) {
  if (std::holds_alternative<FrameAverage>(method)) return average(planes);
  return filter_image(planes.front(), method);
}

}  // namespace

RealImage filter_image(const RealImage& img, const DenoiseMethod& method) {
  if (const auto* g = std::get_if<GaussianFilter>(&method)) return gaussian(img, g->sigma);
  if (const auto* m = std::get_if<MedianFilter>(&method)) return median(img, m->radius);
  fail(ErrorKind::kInvalidArgument, "FrameAverage is not a spatial filter");
}

PhasorImage denoise_sg(std::span<const PhasorImage> frames, const DenoiseMethod& method) {
  require(!frames.empty() || std::holds_alternative<FrameAverage>(method), "no frames to denoise");
  if (frames.empty()) fail(ErrorKind::kInvalidArgument, "FrameAverage needs at least one frame");
  check_frames(frames, method);
  std::vector<RealImage> gs, ss, is;
  for (const auto& f : frames) {
    gs.push_back(plane(f, f.g));
    ss.push_back(plane(f, f.s));
    is.push_back(plane(f, f.intensity));
  }
  const RealImage g = apply_method(gs, method);
  const RealImage s = apply_method(ss, method);
  PhasorImage out(frames[0].width, frames[0].height, frames[0].omega);
  out.g = g.values;
  out.s = s.values;
  for (int p = 0; p < out.pixels(); ++p) {
    out.valid[p] = g.valid[p] && s.valid[p];
    double sum = 0.0;
    for (const auto& f : frames) sum += f.intensity[p];
    out.intensity[p] = sum / static_cast<double>(frames.size());
  }
  return out;
}

PhasorImage denoise_sg(const PhasorImage& img, const DenoiseMethod& method) {
  return denoise_sg(std::span<const PhasorImage>(&img, 1), method);
}

LifetimeImage lifetime_from_phasor_image(const PhasorImage& img) {
  LifetimeImage out(img.width, img.height, 1);
  out.intensity = img.intensity;
  for (int p = 0; p < img.pixels(); ++p) {
    if (!img.valid[p] || !(img.g[p] > 0.0)) continue;
    const double tau = img.s[p] / (img.g[p] * img.omega);
    if (!std::isfinite(tau)) continue;
    out.tau(0, p) = tau;
    out.fraction(0, p) = 1.0;
    out.valid[p] = 1;
  }
  return out;
}

RealImage lifetime_plane(const LifetimeImage& img) {
  RealImage out(img.width, img.height);
  out.values = (img.tau.array() * img.fraction.array()).colwise().sum().transpose();
  out.valid = img.valid;
  return out;
}

RealImage denoise_lifetime_direct(std::span<const PhasorImage> frames, const DenoiseMethod& method) {
  require(!frames.empty(), "no frames to denoise");
  check_frames(frames, method);
  std::vector<RealImage> taus;
  for (const auto& f : frames) taus.push_back(lifetime_plane(lifetime_from_phasor_image(f)));
  return apply_method(taus, method);
}

double psnr(const RealImage& image, const RealImage& reference, std::optional<double> peak) {
  require(image.width == reference.width && image.height == reference.height, "PSNR images differ in size");
  double sse = 0.0;
  double ref_max = -std::numeric_limits<double>::infinity();
  std::size_t n = 0;
  for (int p = 0; p < image.pixels(); ++p) {
    if (!image.valid[p] || !reference.valid[p]) continue;
    const double d = image.values[p] - reference.values[p];
    sse += d * d;
    ref_max = std::max(ref_max, reference.values[p]);
    ++n;
  }
  require(n > 0, "PSNR needs at least one mutually valid pixel");
  const double pk = peak.value_or(ref_max);
  require(pk > 0.0, "PSNR peak must be positive");
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(pk * pk / (sse / static_cast<double>(n)));
}

Rgb hsv_to_rgb(double hue, double value) {
  value = std::clamp(value, 0.0, 1.0);
  const double h = std::fmod(std::max(hue, 0.0), 360.0) / 60.0;
  const double x = value * (1.0 - std::fabs(std::fmod(h, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = value; g = x; break;
    case 1: r = x; g = value; break;
    case 2: g = value; b = x; break;
    case 3: g = x; b = value; break;
    case 4: r = x; b = value; break;
    default: r = value; b = x; break;
  }
  auto to8 = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * v)); };
  return {to8(r), to8(g), to8(b)};
}

ColorImage composite(const RealImage& intensity, const LifetimeImage& lifetime, double tau_min, double tau_max) {
  require(tau_min < tau_max, "lifetime range is degenerate");
  require(intensity.width == lifetime.width && intensity.height == lifetime.height,
          "intensity and lifetime images differ in size");
  std::vector<double> levels;
  for (int p = 0; p < intensity.pixels(); ++p) {
    if (std::isfinite(intensity.values[p])) levels.push_back(intensity.values[p]);
  }
  double p99 = 0.0;
  if (!levels.empty()) {
    const std::size_t rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(levels.size())));
    const std::size_t idx = std::clamp<std::size_t>(rank, 1, levels.size()) - 1;
    std::nth_element(levels.begin(), levels.begin() + static_cast<std::ptrdiff_t>(idx), levels.end());
    p99 = levels[idx];
  }
  const RealImage tau = lifetime_plane(lifetime);
  ColorImage out{intensity.width, intensity.height, std::vector<Rgb>(static_cast<std::size_t>(intensity.pixels()))};
  for (int p = 0; p < intensity.pixels(); ++p) {
    if (!tau.valid[p] || !(p99 > 0.0)) continue;
    const double t = std::clamp((tau.values[p] - tau_min) / (tau_max - tau_min), 0.0, 1.0);
    const double v = std::clamp(intensity.values[p] / p99, 0.0, 1.0);
    out.pixels[p] = hsv_to_rgb(240.0 * t, v);
  }
  return out;
}

}  // namespace flim
