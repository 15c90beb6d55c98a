#pragma once

#include <cmath>
#include <numbers>
#include <unordered_map>
#include <vector>

#include "insmix/bank.hpp"
#include "insmix/ssd.hpp"

namespace insmix {

struct Placement {
  Instance tmpl;        // template as sampled from the bank (untransformed)
  Transform transform;
  int target_cx = 0;    // where the transformed template's centroid lands
  int target_cy = 0;
  std::uint16_t anchor_label = 0;
  std::uint16_t new_label = 0;

  Instance transformed() const { return transform_instance(tmpl, transform); }

  // integer top-left of the pasted crop
  std::pair<int, int> top_left(const Instance& t) const {
    return {static_cast<int>(std::llround(target_cx - t.rel_cx())),
            static_cast<int>(std::llround(target_cy - t.rel_cy()))};
  }
};

struct PlacementPlan {
  std::vector<Placement> placements;
  Mask template_mask;  // union of all pasted footprints, image extents
};

struct CompositorConfig {
  double beta = 0.5;          // pasted count = round(beta * #original instances)
  int max_attempts = 50;      // tries per placement before dropping it
  double occlusion_cap = 0.3; // max fraction of any existing instance covered
  bool enable_transforms = true;
  bool exclude_same_source = false;
  SsdConfig ssd;

  void validate() const {
    if (beta < 0.0) throw ConfigError("compositor: beta must be >= 0");
    if (max_attempts < 1) throw ConfigError("compositor: max_attempts must be >= 1");
    if (occlusion_cap < 0.0 || occlusion_cap >= 1.0)
      throw ConfigError("compositor: occlusion_cap must be in [0, 1)");
    ssd.validate();
  }
};

inline PlacementPlan propose_placements(const LabeledImage& img, const InstanceBank& bank,
                                        const CompositorConfig& cfg, Rng& rng) {
  cfg.validate();
  auto originals = extract_instances(img);
  if (originals.empty()) throw Error("compositor: image has no instances to anchor on");

  const int H = img.height(), W = img.width();
  PlacementPlan plan;
  plan.template_mask = Mask(H, W);

  // visibility bookkeeping for the occlusion cap: vis mirrors the label
  // map apply_plan would produce so far
  LabelMap vis = img.labels;
  std::unordered_map<std::uint16_t, long> area, covered;
  std::uint16_t max_label = 0;
  for (const auto& o : originals) {
    area[o.label] = o.area;
    max_label = std::max(max_label, o.label);
  }
  for (auto v : img.labels.data) max_label = std::max(max_label, v);

  TemplateFilter filter;
  if (cfg.exclude_same_source) filter.exclude_source = img.id;

  long target_count = std::llround(cfg.beta * static_cast<double>(originals.size()));
  std::uint16_t next_label = max_label;

  for (long i = 0; i < target_count; ++i) {
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      const Instance& anchor = originals[rng.index(originals.size())];
      const Instance& tmpl = bank.sample_template(filter, rng);
      Transform t;
      if (cfg.enable_transforms) {
        t.flip_h = rng.coin(0.5);
        t.flip_v = rng.coin(0.5);
        t.rot90_k = static_cast<int>(rng.index(4));
      }
      Instance shaped = transform_instance(tmpl, t);

      // target centroid on the annulus delta <= r <= gamma around the anchor
      double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      double radius = rng.uniform(cfg.ssd.delta, cfg.ssd.gamma);
      int tx = static_cast<int>(std::llround(anchor.cx + radius * std::cos(angle)));
      int ty = static_cast<int>(std::llround(anchor.cy + radius * std::sin(angle)));

      Placement p;
      p.tmpl = tmpl;
      p.transform = t;
      p.target_cx = tx;
      p.target_cy = ty;
      p.anchor_label = anchor.label;
      auto [px, py] = p.top_left(shaped);
      if (px < 0 || py < 0 || px + shaped.w > W || py + shaped.h > H) continue;
      if (!check_ssd(anchor, shaped, tx, ty, cfg.ssd).pass) continue;

      // occlusion cap: no existing instance may lose more than cap * area
      std::unordered_map<std::uint16_t, long> newly;
      for (int y = 0; y < shaped.h; ++y)
        for (int x = 0; x < shaped.w; ++x)
          if (shaped.mask.at(y, x)) {
            std::uint16_t under = vis.at(py + y, px + x);
            if (under != 0) newly[under] += 1;
          }
      bool ok = true;
      for (const auto& [id, n] : newly)
        if (static_cast<double>(covered[id] + n) > cfg.occlusion_cap * static_cast<double>(area[id])) {
          ok = false;
          break;
        }
      if (!ok) continue;

      if (next_label == 65535) throw Error("compositor: instance id space exhausted");
      p.new_label = ++next_label;
      for (const auto& [id, n] : newly) covered[id] += n;
      for (int y = 0; y < shaped.h; ++y)
        for (int x = 0; x < shaped.w; ++x)
          if (shaped.mask.at(y, x)) {
            vis.at(py + y, px + x) = p.new_label;
            plan.template_mask.at(py + y, px + x) = 1;
          }
      area[p.new_label] = shaped.area;
      plan.placements.push_back(std::move(p));
      break;  // plan may come up short when constraints are tight
    }
  }
  return plan;
}

// Pastes in order: template RGB overwrites the image under the transformed
// mask, the label map gets new_label there. Later pastes occlude earlier
// ones. Pixels outside the plan's footprints are untouched.
inline LabeledImage apply_plan(const LabeledImage& img, const PlacementPlan& plan) {
  LabeledImage out = img;
  const int H = img.height(), W = img.width();
  for (const auto& p : plan.placements) {
    Instance shaped = p.transformed();
    auto [px, py] = p.top_left(shaped);
    if (px < 0 || py < 0 || px + shaped.w > W || py + shaped.h > H)
      throw Error("apply_plan: placement out of bounds");
    for (int y = 0; y < shaped.h; ++y)
      for (int x = 0; x < shaped.w; ++x)
        if (shaped.mask.at(y, x)) {
          for (int c = 0; c < 3; ++c) out.pixels.at(py + y, px + x, c) = shaped.pixels.at(y, x, c);
          out.labels.at(py + y, px + x) = p.new_label;
        }
  }
  return out;
}

}  // namespace insmix
