#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "insmix/image.hpp"
#include "insmix/rng.hpp"

namespace insmix {

struct Rect {
  int x = 0, y = 0, w = 0, h = 0;
};

inline void require_rect_in_bounds(const Rect& r, const Image8& img) {
  if (r.w < 0 || r.h < 0 || r.x < 0 || r.y < 0 || r.x + r.w > img.w || r.y + r.h > img.h)
    throw Error("rect out of bounds");
}

inline Image8 mixup(const Image8& a, const Image8& b, double lambda) {
  if (!a.same_extent(b)) throw ShapeError("mixup: extent mismatch");
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("mixup: lambda must be in [0, 1]");
  Image8 out(a.h, a.w);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    out.data[i] = static_cast<std::uint8_t>(
        std::llround(lambda * a.data[i] + (1.0 - lambda) * b.data[i]));
  return out;
}

inline Image8 cutout(const Image8& a, const Rect& rect) {
  require_rect_in_bounds(rect, a);
  Image8 out = a;
  for (int y = rect.y; y < rect.y + rect.h; ++y)
    for (int x = rect.x; x < rect.x + rect.w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0;
  return out;
}

inline Image8 cutmix(const Image8& a, const Image8& b, const Rect& rect) {
  if (!a.same_extent(b)) throw ShapeError("cutmix: extent mismatch");
  require_rect_in_bounds(rect, a);
  Image8 out = a;
  for (int y = rect.y; y < rect.y + rect.h; ++y)
    for (int x = rect.x; x < rect.x + rect.w; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = b.at(y, x, c);
  return out;
}

// Gaussian-filtered white noise thresholded at the cow_p quantile, so the
// mask covers cow_p of the pixels up to tie handling.
inline Mask cow_mask(int h, int w, double cow_sigma, double cow_p, Rng& rng) {
  if (cow_sigma <= 0.0) throw ConfigError("cow_mask: cow_sigma must be > 0");
  if (cow_p <= 0.0 || cow_p >= 1.0) throw ConfigError("cow_mask: cow_p must be in (0, 1)");

  std::vector<double> noise(static_cast<std::size_t>(h) * w);
  for (auto& v : noise) v = rng.normal();

  // separable Gaussian blur, reflect padding
  int radius = static_cast<int>(std::ceil(3.0 * cow_sigma));
  std::vector<double> kernel(2 * radius + 1);
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (cow_sigma * cow_sigma));
    ksum += kernel[i + radius];
  }
  for (auto& v : kernel) v /= ksum;
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
    return i;
  };
  std::vector<double> tmp(noise.size()), blur(noise.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i)
        s += kernel[i + radius] * noise[static_cast<std::size_t>(y) * w + reflect(x + i, w)];
      tmp[static_cast<std::size_t>(y) * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i)
        s += kernel[i + radius] * tmp[static_cast<std::size_t>(reflect(y + i, h)) * w + x];
      blur[static_cast<std::size_t>(y) * w + x] = s;
    }

  std::vector<double> sorted = blur;
  std::size_t kth = static_cast<std::size_t>(cow_p * static_cast<double>(sorted.size()));
  kth = std::min(kth, sorted.size() - 1);
  std::nth_element(sorted.begin(), sorted.begin() + kth, sorted.end());
  double q = sorted[kth];

  Mask m(h, w);
  for (std::size_t i = 0; i < blur.size(); ++i) m.data[i] = blur[i] < q ? 1 : 0;
  return m;
}

inline Image8 cowout(const Image8& a, const Mask& m) {
  if (a.h != m.h || a.w != m.w) throw ShapeError("cowout: extent mismatch");
  Image8 out = a;
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x)
      if (m.at(y, x))
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = 0;
  return out;
}

inline Image8 cowmix(const Image8& a, const Image8& b, const Mask& m) {
  if (!a.same_extent(b)) throw ShapeError("cowmix: extent mismatch");
  if (a.h != m.h || a.w != m.w) throw ShapeError("cowmix: extent mismatch");
  Image8 out = a;
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x)
      if (m.at(y, x))
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = b.at(y, x, c);
  return out;
}

}  // namespace insmix
