#include <catch2/catch_amalgamated.hpp>

#include "grad_cases.hpp"
#include "insmix/autodiff.hpp"
#include "insmix/rng.hpp"

using namespace insmix;
using ad::Tensor;
using ad::Var;
using gradcases::positive_tensor;
using gradcases::random_tensor;

namespace {

// independent direct convolution used as the conv2d oracle
Tensor naive_conv(const Tensor& x, const Tensor& w, long stride, long dilation, long pad) {
  long N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  long O = w.shape[0], k = w.shape[2];
  long OH = (H + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  long OW = (W + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  Tensor y({N, O, OH, OW});
  for (long n = 0; n < N; ++n)
    for (long o = 0; o < O; ++o)
      for (long oy = 0; oy < OH; ++oy)
        for (long ox = 0; ox < OW; ++ox) {
          double s = 0.0;
          for (long c = 0; c < C; ++c)
            for (long ky = 0; ky < k; ++ky)
              for (long kx = 0; kx < k; ++kx) {
                long iy = oy * stride - pad + ky * dilation;
                long ix = ox * stride - pad + kx * dilation;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                s += x.data[((n * C + c) * H + iy) * W + ix] *
                     w.data[((o * C + c) * k + ky) * k + kx];
              }
          y.data[((n * O + o) * OH + oy) * OW + ox] = s;
        }
  return y;
}

}  // namespace

TEST_CASE("tensor basics") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
  CHECK_THROWS_AS(Tensor({0, 2}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
}

TEST_CASE("non-finite forward values are rejected") {
  auto a = ad::param(Tensor::scalar(1e308));
  CHECK_THROWS_AS(ad::mul(a, a), Error);  // overflows to inf
  auto z = ad::param(Tensor::scalar(0.0));
  CHECK_THROWS_AS(ad::pow_scalar(z, -1.0), Error);
}

TEST_CASE("elementwise forward values") {
  Tensor t({4});
  t.data = {-2.0, -0.5, 0.5, 3.0};
  auto x = ad::constant(t);
  auto lr = ad::leaky_relu(x, 0.2);
  CHECK(lr->value.data == std::vector<double>{-0.4, -0.1, 0.5, 3.0});
  auto r = ad::relu(x);
  CHECK(r->value.data == std::vector<double>{0.0, 0.0, 0.5, 3.0});
  auto ab = ad::abs_(x);
  CHECK(ab->value.data == std::vector<double>{2.0, 0.5, 0.5, 3.0});
  auto sg = ad::sigmoid(ad::constant(Tensor::scalar(0.0)));
  CHECK(sg->value.item() == 0.5);
  CHECK(ad::sum_all(x)->value.item() == Catch::Approx(1.0));
  CHECK(ad::mean_all(x)->value.item() == Catch::Approx(0.25));
}

TEST_CASE("softmax values, normalization, and shift invariance") {
  Tensor t({1, 2});
  t.data = {1.0, 0.0};
  auto y = ad::softmax(ad::constant(t), 1);
  double e = std::exp(1.0);
  CHECK(y->value.data[0] == Catch::Approx(e / (e + 1.0)));
  CHECK(y->value.data[1] == Catch::Approx(1.0 / (e + 1.0)));

  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({3, 5}, rng, 0.0, 4.0);
    Tensor b = a;
    for (auto& v : b.data) v += 123.0;  // common shift per element
    auto ya = ad::softmax(ad::constant(a), 1);
    auto yb = ad::softmax(ad::constant(b), 1);
    for (long i = 0; i < 3; ++i) {
      double row = 0.0;
      for (long j = 0; j < 5; ++j) {
        row += ya->value.data[i * 5 + j];
        CHECK(ya->value.data[i * 5 + j] == Catch::Approx(yb->value.data[i * 5 + j]));
      }
      CHECK(row == Catch::Approx(1.0));
    }
  }
}

TEST_CASE("matmul matches a hand-rolled product") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    long m = 1 + static_cast<long>(rng.index(5));
    long k = 1 + static_cast<long>(rng.index(5));
    long n = 1 + static_cast<long>(rng.index(5));
    Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    auto y = ad::matmul(ad::constant(a), ad::constant(b));
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < n; ++j) {
        double s = 0.0;
        for (long l = 0; l < k; ++l) s += a.data[i * k + l] * b.data[l * n + j];
        CHECK(y->value.data[i * n + j] == Catch::Approx(s).margin(1e-12));
      }
  }
}

TEST_CASE("conv2d reproduces a delta kernel and the constant-sum case") {
  Rng rng(4);
  Tensor x = random_tensor({1, 1, 5, 5}, rng);
  Tensor delta({1, 1, 3, 3});
  delta.data[4] = 1.0;  // center tap
  auto y = ad::conv2d(ad::constant(x), ad::constant(delta), 1, 1, 1);
  CHECK(y->value.shape == x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    CHECK(y->value.data[i] == Catch::Approx(x.data[i]).margin(1e-12));

  Tensor ones({1, 2, 6, 6}, 1.0);
  Tensor kern({1, 2, 3, 3}, 1.0);
  auto z = ad::conv2d(ad::constant(ones), ad::constant(kern), 1, 1, 0);
  CHECK(z->value.shape == std::vector<long>{1, 1, 4, 4});
  for (double v : z->value.data) CHECK(v == Catch::Approx(18.0));
}

TEST_CASE("conv2d matches the direct-convolution oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    long C = 1 + static_cast<long>(rng.index(3));
    long O = 1 + static_cast<long>(rng.index(3));
    long k = 1 + 2 * static_cast<long>(rng.index(2));  // 1 or 3
    long stride = 1 + static_cast<long>(rng.index(2));
    long dilation = 1 + static_cast<long>(rng.index(2));
    long pad = static_cast<long>(rng.index(3));
    long H = 6 + static_cast<long>(rng.index(5));
    long W = 6 + static_cast<long>(rng.index(5));
    if (H + 2 * pad < dilation * (k - 1) + 1) continue;
    Tensor x = random_tensor({2, C, H, W}, rng);
    Tensor w = random_tensor({O, C, k, k}, rng);
    auto got = ad::conv2d(ad::constant(x), ad::constant(w), stride, dilation, pad);
    Tensor want = naive_conv(x, w, stride, dilation, pad);
    REQUIRE(got->value.shape == want.shape);
    for (std::size_t i = 0; i < want.data.size(); ++i)
      CHECK(got->value.data[i] == Catch::Approx(want.data[i]).margin(1e-10));
  }
}

TEST_CASE("layout ops round-trip") {
  Rng rng(6);
  Tensor x = random_tensor({1, 3, 4, 5}, rng);
  auto rows = ad::chw_to_rows(ad::constant(x));
  CHECK(rows->value.shape == std::vector<long>{20, 3});
  auto back = ad::rows_to_chw(rows, 3, 4, 5);
  CHECK(back->value.data == x.data);

  Tensor m = random_tensor({4, 3}, rng);
  auto tt = ad::transpose2(ad::transpose2(ad::constant(m)));
  CHECK(tt->value.data == m.data);

  auto up = ad::upsample2_nearest(ad::constant(x));
  CHECK(up->value.shape == std::vector<long>{1, 3, 8, 10});
  CHECK(up->value.data[0] == x.data[0]);
  CHECK(up->value.data[1] == x.data[0]);
}

TEST_CASE("extract_patches3 lays out zero-padded neighborhoods") {
  Tensor x({1, 1, 2, 2});
  x.data = {1.0, 2.0, 3.0, 4.0};
  auto p = ad::extract_patches3(ad::constant(x));
  REQUIRE(p->value.shape == std::vector<long>{4, 9});
  // row 0 = neighborhood of (0,0): zeros except center block
  std::vector<double> want = {0, 0, 0, 0, 1, 2, 0, 3, 4};
  for (int i = 0; i < 9; ++i) CHECK(p->value.data[i] == want[i]);
  // row 3 = neighborhood of (1,1)
  std::vector<double> want3 = {1, 2, 0, 3, 4, 0, 0, 0, 0};
  for (int i = 0; i < 9; ++i) CHECK(p->value.data[27 + i] == want3[i]);
}

TEST_CASE("rows_l2_normalize produces unit rows") {
  Rng rng(7);
  Tensor x = random_tensor({6, 4}, rng);
  auto y = ad::rows_l2_normalize(ad::constant(x));
  for (long i = 0; i < 6; ++i) {
    double s = 0.0;
    for (long j = 0; j < 4; ++j) s += y->value.data[i * 4 + j] * y->value.data[i * 4 + j];
    CHECK(s == Catch::Approx(1.0));
  }
}

TEST_CASE("backward gives 2 for x + x") {
  auto x = ad::param(Tensor::scalar(3.0));
  auto y = ad::add(x, x);
  ad::backward(y);
  CHECK(x->grad.data[0] == 2.0);
}

TEST_CASE("gradients match central differences for every primitive") {
  for (const auto& c : gradcases::all_cases()) {
    DYNAMIC_SECTION(c.name) { CHECK(gradcases::worst_error(c, 100) <= 1e-4); }
  }
}


TEST_CASE("gradients flow through a composite expression") {
  Rng rng(8);
  auto f = [](const std::vector<Var>& v) {
    auto h = ad::leaky_relu(ad::bias_channel(ad::conv2d(v[0], v[1], 1, 1, 1), v[2]));
    auto s = ad::softmax(ad::chw_to_rows(h), 1);
    return ad::mean_all(ad::mul(s, s));
  };
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial)
    worst = std::max(worst, ad::grad_check(f, {random_tensor({1, 2, 4, 4}, rng),
                                               random_tensor({3, 2, 3, 3}, rng),
                                               random_tensor({3}, rng)}));
  CHECK(worst <= 1e-3);
}

TEST_CASE("shape violations raise errors") {
  auto a = ad::constant(Tensor({2, 3}, 1.0));
  auto b = ad::constant(Tensor({3, 3}, 1.0));
  CHECK_THROWS_AS(ad::add(a, b), ShapeError);
  CHECK_THROWS_AS(ad::matmul(a, a), ShapeError);
  CHECK_THROWS_AS(ad::reshape(a, {5}), ShapeError);
  CHECK_THROWS_AS(ad::gather_rows(a, {7}), ShapeError);
  CHECK_THROWS_AS(ad::backward(a), ShapeError);  // non-scalar root
  auto x = ad::constant(Tensor({1, 2, 4, 4}, 1.0));
  auto w = ad::constant(Tensor({1, 3, 3, 3}, 1.0));
  CHECK_THROWS_AS(ad::conv2d(x, w), ShapeError);
}

TEST_CASE("first optimizer step moves by roughly lr in the gradient direction") {
  auto x = ad::param(Tensor::scalar(1.0));
  auto y = ad::scalar_mul(x, 4.0);  // dy/dx = 4
  ad::backward(y);
  ad::Adam opt(0.01);
  opt.step({x});
  // bias-corrected first step: lr * g / (|g| + eps) ~= lr * sign(g)
  CHECK(x->value.item() == Catch::Approx(1.0 - 0.01).epsilon(1e-6));
}

TEST_CASE("optimizer minimizes a quadratic") {
  auto x = ad::param(Tensor::scalar(5.0));
  ad::Adam opt(0.1);
  for (int i = 0; i < 500; ++i) {
    auto loss = ad::mul(x, x);
    ad::backward(loss);
    opt.step({x});
    ad::zero_grads({x});
  }
  CHECK(std::fabs(x->value.item()) < 1e-2);
}
