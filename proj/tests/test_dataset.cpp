#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "insmix/dataset.hpp"
#include "insmix/io.hpp"
#include "synthetic.hpp"

using namespace insmix;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto d = fs::temp_directory_path() / "insmix_test_dataset";
  fs::create_directories(d);
  return d;
}

LabeledImage make_plain(int h, int w) {
  LabeledImage img;
  img.id = "plain";
  img.pixels = Image8(h, w, 100);
  img.labels = LabelMap(h, w, 0);
  return img;
}

}  // namespace

TEST_CASE("all-zero label map yields zero instances") {
  auto img = make_plain(4, 4);
  CHECK(extract_instances(img).empty());
}

TEST_CASE("dimension mismatch is rejected") {
  LabeledImage img;
  img.pixels = Image8(4, 4);
  img.labels = LabelMap(5, 5);
  CHECK_THROWS_AS(img.validate(), ShapeError);
}

TEST_CASE("single 3x3 block instance") {
  auto img = make_plain(8, 8);
  for (int y = 2; y < 5; ++y)
    for (int x = 3; x < 6; ++x) img.labels.at(y, x) = 7;
  auto ins = extract_instances(img);
  REQUIRE(ins.size() == 1);
  CHECK(ins[0].label == 7);
  CHECK(ins[0].area == 9);
  CHECK(ins[0].cx == Catch::Approx(4.0));
  CHECK(ins[0].cy == Catch::Approx(3.0));
  CHECK(ins[0].w == 3);
  CHECK(ins[0].h == 3);
  // tight bbox: mask touches all four edges
  bool top = false, bottom = false, left = false, right = false;
  for (int x = 0; x < ins[0].w; ++x) {
    top |= ins[0].mask.at(0, x) != 0;
    bottom |= ins[0].mask.at(ins[0].h - 1, x) != 0;
  }
  for (int y = 0; y < ins[0].h; ++y) {
    left |= ins[0].mask.at(y, 0) != 0;
    right |= ins[0].mask.at(y, ins[0].w - 1) != 0;
  }
  CHECK((top && bottom && left && right));
}

TEST_CASE("two instances with known areas") {
  auto img = make_plain(10, 10);
  for (int i = 0; i < 5; ++i) img.labels.at(0, i) = 1;
  for (int y = 4; y < 7; ++y)
    for (int x = 4; x < 8; ++x) img.labels.at(y, x) = 2;
  auto ins = extract_instances(img);
  REQUIRE(ins.size() == 2);
  CHECK(ins[0].area == 5);
  CHECK(ins[1].area == 12);
  CHECK(ins[0].area + ins[1].area == foreground_area(img.labels));
}

TEST_CASE("extract_instances partitions the foreground") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    auto img = synth::ellipse_image(64, 64, 8, seed, "p");
    auto ins = extract_instances(img);
    // rebuild a label map from the instances; must match exactly
    LabelMap rebuilt(img.height(), img.width(), 0);
    for (const auto& i : ins)
      for (int y = 0; y < i.h; ++y)
        for (int x = 0; x < i.w; ++x)
          if (i.mask.at(y, x)) {
            CHECK(rebuilt.at(i.y + y, i.x + x) == 0);  // partition: no overlap
            rebuilt.at(i.y + y, i.x + x) = i.label;
          }
    CHECK(rebuilt == img.labels);
  }
}

TEST_CASE("round-trip persistence is lossless") {
  auto dir = temp_dir();
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto img = synth::ellipse_image(16 + static_cast<int>(seed) * 3, 20, 4, seed, "rt");
    auto ip = dir / "rt.png";
    auto lp = dir / "rt_label.png";
    save_labeled_image(img, ip, lp);
    auto back = load_labeled_image(ip, lp);
    CHECK(back.pixels == img.pixels);
    CHECK(back.labels == img.labels);
  }
}

TEST_CASE("label id 65535 survives round-trip") {
  auto dir = temp_dir();
  auto img = make_plain(6, 6);
  img.labels.at(2, 2) = 65535;
  save_labeled_image(img, dir / "max.png", dir / "max_label.png");
  auto back = load_labeled_image(dir / "max.png", dir / "max_label.png");
  CHECK(back.labels.at(2, 2) == 65535);
}

TEST_CASE("unwritable destination raises an io error") {
  auto img = make_plain(4, 4);
  CHECK_THROWS_AS(save_labeled_image(img, "/nonexistent_dir/x.png", "/nonexistent_dir/x_label.png"),
                  IoError);
}

TEST_CASE("mismatched pair on disk is rejected at load") {
  auto dir = temp_dir();
  auto a = make_plain(4, 4);
  auto b = make_plain(5, 5);
  save_labeled_image(a, dir / "a.png", dir / "a_label.png");
  save_labeled_image(b, dir / "b.png", dir / "b_label.png");
  CHECK_THROWS_AS(load_labeled_image(dir / "a.png", dir / "b_label.png"), ShapeError);
}

TEST_CASE("transform_instance preserves area and round-trips") {
  auto img = synth::ellipse_image(32, 32, 3, 5, "t");
  auto ins = extract_instances(img);
  REQUIRE_FALSE(ins.empty());
  Transform t{true, false, 1};
  auto shaped = transform_instance(ins[0], t);
  CHECK(shaped.area == ins[0].area);
  CHECK(shaped.h == ins[0].w);
  CHECK(shaped.w == ins[0].h);
}
