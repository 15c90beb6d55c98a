#pragma once

#include <map>
#include <vector>

#include "insmix/image.hpp"

namespace insmix {

// One Instance per distinct nonzero label id. A label id with several
// disconnected components stays a single Instance; the annotation is
// authoritative.
inline std::vector<Instance> extract_instances(const LabeledImage& img) {
  img.validate();
  struct Acc {
    int x0, y0, x1, y1;
    long n = 0;
    double sx = 0.0, sy = 0.0;
  };
  std::map<std::uint16_t, Acc> accs;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      std::uint16_t id = img.labels.at(y, x);
      if (id == 0) continue;
      auto [it, fresh] = accs.try_emplace(id, Acc{x, y, x, y});
      Acc& a = it->second;
      if (!fresh) {
        a.x0 = std::min(a.x0, x);
        a.y0 = std::min(a.y0, y);
        a.x1 = std::max(a.x1, x);
        a.y1 = std::max(a.y1, y);
      }
      a.n += 1;
      a.sx += x;
      a.sy += y;
    }
  }
  std::vector<Instance> out;
  out.reserve(accs.size());
  for (const auto& [id, a] : accs) {
    Instance ins;
    ins.label = id;
    ins.source_id = img.id;
    ins.x = a.x0;
    ins.y = a.y0;
    ins.w = a.x1 - a.x0 + 1;
    ins.h = a.y1 - a.y0 + 1;
    ins.area = a.n;
    ins.cx = a.sx / a.n;
    ins.cy = a.sy / a.n;
    ins.mask = Mask(ins.h, ins.w);
    ins.pixels = Image8(ins.h, ins.w);
    for (int y = 0; y < ins.h; ++y) {
      for (int x = 0; x < ins.w; ++x) {
        ins.mask.at(y, x) = img.labels.at(ins.y + y, ins.x + x) == id ? 1 : 0;
        for (int c = 0; c < 3; ++c) ins.pixels.at(y, x, c) = img.pixels.at(ins.y + y, ins.x + x, c);
      }
    }
    out.push_back(std::move(ins));
  }
  return out;
}

// Geometric template transform: rot90_k quarter turns clockwise, then
// horizontal flip (mirror x), then vertical flip (mirror y).
struct Transform {
  bool flip_h = false;
  bool flip_v = false;
  int rot90_k = 0;  // 0..3

  bool identity() const { return !flip_h && !flip_v && rot90_k == 0; }
};

namespace detail {

// Maps (y, x) in the transformed crop back to source-crop coordinates.
struct InverseMap {
  int sh, sw;   // source extents
  int th, tw;   // transformed extents
  Transform t;

  // clockwise rotation maps source (sy, sx) -> (sx, sh-1-sy)
  std::pair<int, int> operator()(int ty, int tx) const {
    int y = ty, x = tx;
    if (t.flip_v) y = th - 1 - y;
    if (t.flip_h) x = tw - 1 - x;
    if (t.rot90_k == 1) return {sh - 1 - x, y};
    if (t.rot90_k == 2) return {sh - 1 - y, sw - 1 - x};
    if (t.rot90_k == 3) return {x, sw - 1 - y};
    return {y, x};
  }
};

}  // namespace detail

// Applies a transform to an instance crop (mask + pixels + relative centroid).
inline Instance transform_instance(const Instance& in, const Transform& t) {
  Instance out = in;
  out.mask = Mask();
  out.pixels = Image8();
  int sh = in.h, sw = in.w;
  int th = (t.rot90_k % 2 == 1) ? sw : sh;
  int tw = (t.rot90_k % 2 == 1) ? sh : sw;
  out.h = th;
  out.w = tw;
  out.mask = Mask(th, tw);
  out.pixels = Image8(th, tw);
  detail::InverseMap inv{sh, sw, th, tw, t};
  for (int y = 0; y < th; ++y) {
    for (int x = 0; x < tw; ++x) {
      auto [sy, sx] = inv(y, x);
      out.mask.at(y, x) = in.mask.at(sy, sx);
      for (int c = 0; c < 3; ++c) out.pixels.at(y, x, c) = in.pixels.at(sy, sx, c);
    }
  }
  // recompute the relative centroid of the transformed mask
  double sx = 0.0, sy = 0.0;
  long n = 0;
  for (int y = 0; y < th; ++y)
    for (int x = 0; x < tw; ++x)
      if (out.mask.at(y, x)) {
        sx += x;
        sy += y;
        ++n;
      }
  out.area = n;
  out.cx = out.x + sx / n;
  out.cy = out.y + sy / n;
  return out;
}

// Crops a window [x0, x0+w) x [y0, y0+h); labels are clipped, ids kept.
inline LabeledImage crop_labeled(const LabeledImage& img, int x0, int y0, int w, int h) {
  LabeledImage out;
  out.id = img.id;
  out.pixels = Image8(h, w);
  out.labels = LabelMap(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) out.pixels.at(y, x, c) = img.pixels.at(y0 + y, x0 + x, c);
      out.labels.at(y, x) = img.labels.at(y0 + y, x0 + x);
    }
  return out;
}

inline long foreground_area(const LabelMap& labels) {
  long n = 0;
  for (auto v : labels.data) n += v != 0;
  return n;
}

}  // namespace insmix
