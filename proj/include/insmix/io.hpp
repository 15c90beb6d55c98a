#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "insmix/common.hpp"
#include "insmix/image.hpp"

namespace insmix {

// Image pairing convention: <stem>.png (8-bit RGB; TIFF accepted on input)
// + <stem>_label.png (16-bit grayscale, pixel value = instance id).

inline LabeledImage load_labeled_image(const std::filesystem::path& image_path,
                                       const std::filesystem::path& labelmap_path) {
  cv::Mat img = cv::imread(image_path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) throw IoError("cannot read image: " + image_path.string());
  if (img.depth() != CV_8U) throw IoError("image is not 8-bit: " + image_path.string());
  if (img.channels() == 1) cv::cvtColor(img, img, cv::COLOR_GRAY2BGR);
  if (img.channels() == 4) cv::cvtColor(img, img, cv::COLOR_BGRA2BGR);
  if (img.channels() != 3) throw IoError("unsupported channel count: " + image_path.string());

  cv::Mat lbl = cv::imread(labelmap_path.string(), cv::IMREAD_UNCHANGED);
  if (lbl.empty()) throw IoError("cannot read label map: " + labelmap_path.string());
  if (lbl.channels() != 1) throw IoError("label map is not single-channel: " + labelmap_path.string());
  if (lbl.depth() == CV_8U) lbl.convertTo(lbl, CV_16U);  // tolerate 8-bit maps on input
  if (lbl.depth() != CV_16U) throw IoError("label map is not 16-bit: " + labelmap_path.string());

  if (img.rows != lbl.rows || img.cols != lbl.cols)
    throw ShapeError("image/label dimension mismatch: " + image_path.string());

  LabeledImage out;
  out.id = image_path.stem().string();
  out.pixels = Image8(img.rows, img.cols);
  out.labels = LabelMap(lbl.rows, lbl.cols);
  for (int y = 0; y < img.rows; ++y) {
    const cv::Vec3b* prow = img.ptr<cv::Vec3b>(y);
    const std::uint16_t* lrow = lbl.ptr<std::uint16_t>(y);
    for (int x = 0; x < img.cols; ++x) {
      out.pixels.at(y, x, 0) = prow[x][2];  // OpenCV stores BGR
      out.pixels.at(y, x, 1) = prow[x][1];
      out.pixels.at(y, x, 2) = prow[x][0];
      out.labels.at(y, x) = lrow[x];
    }
  }
  return out;
}

inline void save_labeled_image(const LabeledImage& img, const std::filesystem::path& image_path,
                               const std::filesystem::path& labelmap_path) {
  img.validate();
  cv::Mat rgb(img.height(), img.width(), CV_8UC3);
  cv::Mat lbl(img.height(), img.width(), CV_16UC1);
  for (int y = 0; y < img.height(); ++y) {
    cv::Vec3b* prow = rgb.ptr<cv::Vec3b>(y);
    std::uint16_t* lrow = lbl.ptr<std::uint16_t>(y);
    for (int x = 0; x < img.width(); ++x) {
      prow[x] = cv::Vec3b(img.pixels.at(y, x, 2), img.pixels.at(y, x, 1), img.pixels.at(y, x, 0));
      lrow[x] = img.labels.at(y, x);
    }
  }
  std::vector<int> png_opts{cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imwrite(image_path.string(), rgb, png_opts))
    throw IoError("cannot write image: " + image_path.string());
  if (!cv::imwrite(labelmap_path.string(), lbl, png_opts))
    throw IoError("cannot write label map: " + labelmap_path.string());
}

// Scans a directory for <stem>.png/<stem>.tif + <stem>_label.png pairs,
// sorted by stem for stable image indices.
inline std::vector<std::pair<std::filesystem::path, std::filesystem::path>> find_pairs(
    const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::pair<fs::path, fs::path>> pairs;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    std::string stem = p.stem().string();
    std::string ext = p.extension().string();
    if (ext != ".png" && ext != ".tif" && ext != ".tiff") continue;
    if (stem.size() > 6 && stem.substr(stem.size() - 6) == "_label") continue;
    fs::path label = dir / (stem + "_label.png");
    if (fs::exists(label)) pairs.emplace_back(p, label);
  }
  return pairs;
}

}  // namespace insmix
