#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "insmix/common.hpp"

namespace insmix {

// 8-bit RGB raster, row-major, interleaved channels.
struct Image8 {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> data;  // h*w*3

  Image8() = default;
  Image8(int height, int width, std::uint8_t fill = 0)
      : h(height), w(width), data(static_cast<std::size_t>(height) * width * 3, fill) {}

  std::uint8_t& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }

  bool same_extent(const Image8& o) const { return h == o.h && w == o.w; }
  bool operator==(const Image8& o) const { return h == o.h && w == o.w && data == o.data; }
};

// 16-bit instance label map; 0 = background.
struct LabelMap {
  int h = 0;
  int w = 0;
  std::vector<std::uint16_t> data;  // h*w

  LabelMap() = default;
  LabelMap(int height, int width, std::uint16_t fill = 0)
      : h(height), w(width), data(static_cast<std::size_t>(height) * width, fill) {}

  std::uint16_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
  std::uint16_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }

  bool operator==(const LabelMap& o) const { return h == o.h && w == o.w && data == o.data; }
};

// Binary mask, row-major, values 0/1.
struct Mask {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int height, int width, std::uint8_t fill = 0)
      : h(height), w(width), data(static_cast<std::size_t>(height) * width, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }

  long area() const { return static_cast<long>(std::count(data.begin(), data.end(), std::uint8_t{1})); }
  bool operator==(const Mask& o) const { return h == o.h && w == o.w && data == o.data; }
};

struct LabeledImage {
  Image8 pixels;
  LabelMap labels;
  std::string id;

  int height() const { return pixels.h; }
  int width() const { return pixels.w; }

  void validate() const {
    if (pixels.h != labels.h || pixels.w != labels.w)
      throw ShapeError("LabeledImage '" + id + "': pixel/label dimension mismatch");
  }
};

// One nucleus instance cropped from its source image.
struct Instance {
  Mask mask;            // tight binary mask over the bounding box
  int x = 0, y = 0;     // bbox top-left in source-image pixels
  int w = 0, h = 0;     // bbox extents
  double cx = 0.0, cy = 0.0;  // centroid, source-image coordinates (sub-pixel)
  long area = 0;
  Image8 pixels;        // RGB crop over the bbox
  std::string source_id;
  std::uint16_t label = 0;

  // centroid relative to the bbox origin
  double rel_cx() const { return cx - x; }
  double rel_cy() const { return cy - y; }
};

}  // namespace insmix
