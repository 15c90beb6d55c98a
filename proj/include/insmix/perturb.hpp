#pragma once

#include <cmath>
#include <vector>

#include "insmix/image.hpp"
#include "insmix/rng.hpp"

namespace insmix {

struct PerturbConfig {
  double alpha = 0.2;  // fraction of eligible background cells to shuffle
  int patch_size = 20; // square cell edge, pixels

  void validate() const {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("perturb: alpha must be in [0, 1]");
    if (patch_size < 1) throw ConfigError("perturb: patch_size must be >= 1");
  }
};

struct PerturbRecord {
  std::vector<long> cells;  // linear cell indices (row-major over the cell grid)
  std::vector<long> perm;   // cells[i] receives the contents of cells[perm[i]]
  int patch_size = 0;
  int grid_w = 0;
};

// Tiles the image from (0,0) into patch_size cells (partial edge cells
// excluded), picks ceil(alpha * #eligible) nucleus-free cells and permutes
// their RGB contents. The label map is returned unchanged.
inline LabeledImage perturb_background(const LabeledImage& img, const PerturbConfig& cfg, Rng& rng,
                                       PerturbRecord* record = nullptr) {
  cfg.validate();
  img.validate();
  const int ps = cfg.patch_size;
  const int gh = img.height() / ps, gw = img.width() / ps;
  if (record) {
    record->patch_size = ps;
    record->grid_w = gw;
    record->cells.clear();
    record->perm.clear();
  }

  std::vector<long> eligible;
  for (int cy = 0; cy < gh; ++cy)
    for (int cx = 0; cx < gw; ++cx) {
      bool clean = true;
      for (int y = cy * ps; clean && y < (cy + 1) * ps; ++y)
        for (int x = cx * ps; x < (cx + 1) * ps; ++x)
          if (img.labels.at(y, x) != 0) {
            clean = false;
            break;
          }
      if (clean) eligible.push_back(static_cast<long>(cy) * gw + cx);
    }

  LabeledImage out = img;
  if (eligible.empty() || cfg.alpha == 0.0) return out;

  long k = static_cast<long>(std::ceil(cfg.alpha * static_cast<double>(eligible.size())));
  k = std::min<long>(k, static_cast<long>(eligible.size()));

  // uniform k-subset via partial Fisher-Yates, then a uniform permutation
  std::vector<long> pool = eligible;
  std::vector<long> chosen;
  for (long i = 0; i < k; ++i) {
    std::size_t j = i + rng.index(pool.size() - i);
    std::swap(pool[i], pool[j]);
    chosen.push_back(pool[i]);
  }
  std::vector<long> perm(chosen.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<long>(i);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);

  auto cell_origin = [&](long cell) {
    return std::pair<int, int>{static_cast<int>(cell % gw) * ps, static_cast<int>(cell / gw) * ps};
  };
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    auto [dx, dy] = cell_origin(chosen[i]);
    auto [sx, sy] = cell_origin(chosen[perm[i]]);
    for (int y = 0; y < ps; ++y)
      for (int x = 0; x < ps; ++x)
        for (int c = 0; c < 3; ++c) out.pixels.at(dy + y, dx + x, c) = img.pixels.at(sy + y, sx + x, c);
  }
  if (record) {
    record->cells = chosen;
    record->perm = perm;
  }
  return out;
}

}  // namespace insmix
