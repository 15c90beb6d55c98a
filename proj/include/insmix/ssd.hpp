#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "insmix/image.hpp"

namespace insmix {

// Scale / shape / distance admissibility thresholds. All four are
// mandatory in the pipeline config so the defaults never hide.
struct SsdConfig {
  double epsilon = 3.0;  // max area ratio, >= 1
  double rho = 0.5;      // max shape inconsistency, in [0, 2]
  double delta = 10.0;   // min centroid distance, pixels
  double gamma = 120.0;  // max centroid distance, pixels

  void validate() const {
    if (epsilon < 1.0) throw ConfigError("ssd: epsilon must be >= 1");
    if (rho < 0.0 || rho > 2.0) throw ConfigError("ssd: rho must be in [0, 2]");
    if (delta < 0.0 || gamma <= 0.0 || delta > gamma)
      throw ConfigError("ssd: require 0 <= delta <= gamma, gamma > 0");
  }
};

enum class SsdTerm { scale, shape, distance };

struct SsdReport {
  double scale = 0.0;
  double shape = 0.0;
  double distance = 0.0;
  bool pass = false;
  std::vector<SsdTerm> violated;
};

inline double f_scale(const Mask& mo, const Mask& mt) {
  long ao = mo.area(), at = mt.area();
  if (ao == 0 || at == 0) throw Error("f_scale: empty mask");
  return static_cast<double>(std::max(ao, at)) / static_cast<double>(std::min(ao, at));
}

// Symmetric-difference cardinality after integer centroid alignment on a
// union canvas, normalized by the larger area. Bounded by 2.
inline double f_shape(const Mask& mo, const Mask& mt) {
  long ao = mo.area(), at = mt.area();
  if (ao == 0 || at == 0) throw Error("f_shape: empty mask");

  auto centroid = [](const Mask& m) {
    double sx = 0.0, sy = 0.0;
    long n = 0;
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x)
        if (m.at(y, x)) {
          sx += x;
          sy += y;
          ++n;
        }
    return std::pair<double, double>{sx / n, sy / n};
  };
  auto [cox, coy] = centroid(mo);
  auto [ctx, cty] = centroid(mt);
  // shift mt so centroids coincide; llround keeps the shift antisymmetric
  long dx = std::llround(cox - ctx);
  long dy = std::llround(coy - cty);

  long x0 = std::min<long>(0, dx), y0 = std::min<long>(0, dy);
  long x1 = std::max<long>(mo.w, dx + mt.w), y1 = std::max<long>(mo.h, dy + mt.h);
  long diff = 0;
  for (long y = y0; y < y1; ++y) {
    for (long x = x0; x < x1; ++x) {
      bool in_o = y >= 0 && y < mo.h && x >= 0 && x < mo.w && mo.at(static_cast<int>(y), static_cast<int>(x));
      long ty = y - dy, tx = x - dx;
      bool in_t = ty >= 0 && ty < mt.h && tx >= 0 && tx < mt.w && mt.at(static_cast<int>(ty), static_cast<int>(tx));
      diff += in_o != in_t;
    }
  }
  return static_cast<double>(diff) / static_cast<double>(std::max(ao, at));
}

inline double f_dis(double cox, double coy, double ctx, double cty) {
  return std::hypot(cox - ctx, coy - cty);
}

// Distance is measured between the anchor's centroid and the template's
// centroid at the proposed target position.
inline SsdReport check_ssd(const Instance& anchor, const Instance& tmpl, double target_cx,
                           double target_cy, const SsdConfig& cfg) {
  cfg.validate();
  SsdReport r;
  r.scale = f_scale(anchor.mask, tmpl.mask);
  r.shape = f_shape(anchor.mask, tmpl.mask);
  r.distance = f_dis(anchor.cx, anchor.cy, target_cx, target_cy);
  if (r.scale > cfg.epsilon) r.violated.push_back(SsdTerm::scale);
  if (r.shape > cfg.rho) r.violated.push_back(SsdTerm::shape);
  if (r.distance < cfg.delta || r.distance > cfg.gamma) r.violated.push_back(SsdTerm::distance);
  r.pass = r.violated.empty();
  return r;
}

}  // namespace insmix
