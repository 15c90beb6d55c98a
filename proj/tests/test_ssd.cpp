#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "insmix/dataset.hpp"
#include "insmix/rng.hpp"
#include "insmix/ssd.hpp"

using namespace insmix;

namespace {

Mask mask_from_points(const std::vector<std::pair<int, int>>& pts) {
  int w = 0, h = 0;
  for (auto [x, y] : pts) {
    w = std::max(w, x + 1);
    h = std::max(h, y + 1);
  }
  Mask m(h, w);
  for (auto [x, y] : pts) m.at(y, x) = 1;
  return m;
}

Mask solid(int h, int w) {
  Mask m(h, w);
  std::fill(m.data.begin(), m.data.end(), std::uint8_t{1});
  return m;
}

Mask random_mask(Rng& rng, int max_edge = 9) {
  while (true) {
    int h = 1 + static_cast<int>(rng.index(max_edge));
    int w = 1 + static_cast<int>(rng.index(max_edge));
    Mask m(h, w);
    for (auto& v : m.data) v = rng.coin(0.5) ? 1 : 0;
    if (m.area() > 0) return m;
  }
}

// independent brute-force route: align centroids with llround, count the
// symmetric difference over explicit point sets
double oracle_f_shape(const Mask& mo, const Mask& mt) {
  auto pts = [](const Mask& m) {
    std::vector<std::pair<long, long>> p;
    double sx = 0, sy = 0;
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x)
        if (m.at(y, x)) {
          p.emplace_back(x, y);
          sx += x;
          sy += y;
        }
    return std::make_pair(p, std::make_pair(sx / p.size(), sy / p.size()));
  };
  auto [po, co] = pts(mo);
  auto [pt, ct] = pts(mt);
  long dx = std::llround(co.first - ct.first), dy = std::llround(co.second - ct.second);
  std::set<std::pair<long, long>> so(po.begin(), po.end()), st;
  for (auto [x, y] : pt) st.emplace(x + dx, y + dy);
  long diff = 0;
  for (const auto& p : so) diff += st.count(p) == 0;
  for (const auto& p : st) diff += so.count(p) == 0;
  return static_cast<double>(diff) / static_cast<double>(std::max(po.size(), pt.size()));
}

Instance instance_from_mask(const Mask& m, int x0 = 0, int y0 = 0) {
  Instance ins;
  ins.mask = m;
  ins.x = x0;
  ins.y = y0;
  ins.w = m.w;
  ins.h = m.h;
  ins.area = m.area();
  double sx = 0, sy = 0;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x)
      if (m.at(y, x)) {
        sx += x;
        sy += y;
      }
  ins.cx = x0 + sx / ins.area;
  ins.cy = y0 + sy / ins.area;
  ins.pixels = Image8(m.h, m.w);
  return ins;
}

}  // namespace

TEST_CASE("f_scale basic values") {
  CHECK(f_scale(solid(5, 10), solid(10, 5)) == 1.0);
  CHECK(f_scale(solid(10, 10), solid(5, 10)) == 2.0);
  CHECK(f_scale(solid(5, 10), solid(10, 10)) == 2.0);  // symmetric
  CHECK_THROWS_AS(f_scale(Mask(3, 3), solid(2, 2)), Error);
}

TEST_CASE("f_shape identity and known values") {
  CHECK(f_shape(solid(3, 3), solid(3, 3)) == 0.0);
  // 3x3 solid vs single center pixel: symmetric difference 8 of max area 9
  CHECK(f_shape(solid(3, 3), solid(1, 1)) == Catch::Approx(8.0 / 9.0));
  // zero-overlap masks with coincident centroids: (2 + 1) / 2
  Mask mo = mask_from_points({{0, 0}, {2, 0}});
  Mask mt = mask_from_points({{1, 0}});
  CHECK(f_shape(mo, mt) == Catch::Approx(1.5));
  CHECK_THROWS_AS(f_shape(Mask(2, 2), solid(1, 1)), Error);
}

TEST_CASE("f_dis basic values") {
  CHECK(f_dis(1.0, 2.0, 1.0, 2.0) == 0.0);
  CHECK(f_dis(0.0, 0.0, 3.0, 4.0) == 5.0);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    double dx = rng.uniform(-50, 50), dy = rng.uniform(-50, 50);
    CHECK(f_dis(1.0, 1.0, 1.0 + dx, 1.0 + dy) == Catch::Approx(std::sqrt(dx * dx + dy * dy)));
  }
}

TEST_CASE("f_shape matches the brute-force oracle on random masks") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    Mask a = random_mask(rng), b = random_mask(rng);
    CHECK(f_shape(a, b) == oracle_f_shape(a, b));
    CHECK(f_scale(a, b) ==
          static_cast<double>(std::max(a.area(), b.area())) / std::min(a.area(), b.area()));
  }
}

TEST_CASE("symmetry and range properties") {
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    Mask a = random_mask(rng), b = random_mask(rng);
    double sc = f_scale(a, b), sh = f_shape(a, b);
    CHECK(sc >= 1.0);
    CHECK(sh >= 0.0);
    CHECK(sh <= 2.0);
    CHECK(f_scale(b, a) == sc);
    CHECK(f_shape(b, a) == sh);
  }
}

TEST_CASE("f_shape is zero iff aligned masks coincide") {
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    Mask a = random_mask(rng);
    CHECK(f_shape(a, a) == 0.0);
  }
  CHECK(f_shape(solid(2, 2), solid(2, 3)) > 0.0);
}

TEST_CASE("check_ssd conjunction") {
  SsdConfig cfg;
  cfg.epsilon = 3.0;
  cfg.rho = 0.5;
  cfg.delta = 4.0;
  cfg.gamma = 20.0;

  Instance anchor = instance_from_mask(solid(5, 5), 10, 10);

  SECTION("identity template at mid-annulus distance passes") {
    Instance tmpl = instance_from_mask(solid(5, 5));
    double d = (cfg.delta + cfg.gamma) / 2.0;
    auto r = check_ssd(anchor, tmpl, anchor.cx + d, anchor.cy, cfg);
    CHECK(r.pass);
    CHECK(r.scale == 1.0);
    CHECK(r.shape == 0.0);
    CHECK(r.distance == Catch::Approx(d));
  }

  SECTION("distance beyond gamma violates only distance") {
    Instance tmpl = instance_from_mask(solid(5, 5));
    auto r = check_ssd(anchor, tmpl, anchor.cx + cfg.gamma + 1.0, anchor.cy, cfg);
    CHECK_FALSE(r.pass);
    REQUIRE(r.violated.size() == 1);
    CHECK(r.violated[0] == SsdTerm::distance);
  }

  SECTION("area ratio beyond epsilon is flagged") {
    SsdConfig tight = cfg;
    tight.epsilon = 1.5;
    Instance tmpl = instance_from_mask(solid(5, 10));  // area 50 vs 25 -> 2.0
    auto r = check_ssd(anchor, tmpl, anchor.cx + 10.0, anchor.cy, cfg);
    auto r2 = check_ssd(anchor, tmpl, anchor.cx + 10.0, anchor.cy, tight);
    CHECK(r.scale == 2.0);
    bool has_scale = false;
    for (auto t : r2.violated) has_scale |= t == SsdTerm::scale;
    CHECK(has_scale);
  }
}

TEST_CASE("check_ssd is translation invariant") {
  SsdConfig cfg;
  Rng rng(14);
  for (int i = 0; i < 50; ++i) {
    Instance anchor = instance_from_mask(random_mask(rng), 30, 30);
    Instance tmpl = instance_from_mask(random_mask(rng));
    double tx = 30 + rng.uniform(-100, 100), ty = 30 + rng.uniform(-100, 100);
    auto r1 = check_ssd(anchor, tmpl, tx, ty, cfg);
    Instance moved = anchor;
    moved.x += 17;
    moved.y -= 9;
    moved.cx += 17;
    moved.cy -= 9;
    auto r2 = check_ssd(moved, tmpl, tx + 17, ty - 9, cfg);
    CHECK(r1.pass == r2.pass);
    CHECK(r1.scale == r2.scale);
    CHECK(r1.shape == r2.shape);
    CHECK(r1.distance == Catch::Approx(r2.distance));
  }
}

TEST_CASE("loosening thresholds never fails a passing report") {
  Rng rng(15);
  for (int i = 0; i < 100; ++i) {
    Instance anchor = instance_from_mask(random_mask(rng), 20, 20);
    Instance tmpl = instance_from_mask(random_mask(rng));
    SsdConfig cfg;
    cfg.epsilon = 1.0 + rng.uniform(0.0, 4.0);
    cfg.rho = rng.uniform(0.0, 2.0);
    cfg.delta = rng.uniform(0.0, 10.0);
    cfg.gamma = cfg.delta + rng.uniform(0.1, 50.0);
    double tx = 20 + rng.uniform(-40, 40), ty = 20 + rng.uniform(-40, 40);
    auto base = check_ssd(anchor, tmpl, tx, ty, cfg);
    SsdConfig loose = cfg;
    loose.epsilon += 1.0;
    loose.rho = std::min(2.0, loose.rho + 0.5);
    loose.delta = std::max(0.0, loose.delta - 2.0);
    loose.gamma += 10.0;
    auto better = check_ssd(anchor, tmpl, tx, ty, loose);
    if (base.pass) CHECK(better.pass);
  }
}

TEST_CASE("invalid configs are rejected") {
  SsdConfig bad;
  bad.delta = 5.0;
  bad.gamma = 3.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  SsdConfig eps;
  eps.epsilon = 0.5;
  CHECK_THROWS_AS(eps.validate(), ConfigError);
}
