#pragma once

// Shared central-difference gradient-check cases: one scalar-valued wrapper
// per autodiff primitive, with input generators that keep values away from
// the kink points of abs/relu.

#include <functional>
#include <string>
#include <vector>

#include "insmix/autodiff.hpp"
#include "insmix/rng.hpp"

namespace gradcases {

using insmix::Rng;
using insmix::ad::Tensor;
using insmix::ad::Var;
namespace ad = insmix::ad;

inline Tensor random_tensor(std::vector<long> shape, Rng& rng, double lo = 0.1, double hi = 1.5) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) {
    v = rng.uniform(lo, hi);
    if (rng.coin(0.5) && lo > 0.0) v = -v;
  }
  return t;
}

inline Tensor positive_tensor(std::vector<long> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(0.2, 2.0);
  return t;
}

struct GradCase {
  std::string name;
  std::function<Var(const std::vector<Var>&)> f;
  std::function<std::vector<Tensor>(Rng&)> make;
};

inline std::vector<GradCase> all_cases() {
  auto two = [](std::vector<long> s) {
    return [s](Rng& rng) { return std::vector<Tensor>{random_tensor(s, rng), random_tensor(s, rng)}; };
  };
  auto one = [](std::vector<long> s) {
    return [s](Rng& rng) { return std::vector<Tensor>{random_tensor(s, rng)}; };
  };
  return {
      {"add", [](const std::vector<Var>& v) { return ad::sum_all(ad::add(v[0], v[1])); }, two({2, 3})},
      {"sub", [](const std::vector<Var>& v) { return ad::sum_all(ad::mul(ad::sub(v[0], v[1]), v[0])); },
       two({2, 3})},
      {"mul", [](const std::vector<Var>& v) { return ad::sum_all(ad::mul(v[0], v[1])); }, two({3, 2})},
      {"scalar_mul", [](const std::vector<Var>& v) { return ad::sum_all(ad::scalar_mul(v[0], -2.5)); },
       one({4})},
      {"scalar_add",
       [](const std::vector<Var>& v) { return ad::sum_all(ad::mul(ad::scalar_add(v[0], 1.5), v[0])); },
       one({4})},
      {"neg", [](const std::vector<Var>& v) { return ad::sum_all(ad::mul(ad::neg(v[0]), v[0])); },
       one({4})},
      {"pow_scalar", [](const std::vector<Var>& v) { return ad::sum_all(ad::pow_scalar(v[0], 1.7)); },
       [](Rng& rng) { return std::vector<Tensor>{positive_tensor({5}, rng)}; }},
      {"abs", [](const std::vector<Var>& v) { return ad::sum_all(ad::mul(ad::abs_(v[0]), v[0])); },
       one({5})},
      {"leaky_relu",
       [](const std::vector<Var>& v) { return ad::sum_all(ad::mul(ad::leaky_relu(v[0]), v[0])); },
       one({5})},
      {"relu", [](const std::vector<Var>& v) { return ad::sum_all(ad::mul(ad::relu(v[0]), v[0])); },
       one({5})},
      {"sigmoid", [](const std::vector<Var>& v) { return ad::sum_all(ad::sigmoid(v[0])); }, one({5})},
      {"sum_all", [](const std::vector<Var>& v) { return ad::sum_all(ad::mul(v[0], v[0])); }, one({2, 3})},
      {"mean_all", [](const std::vector<Var>& v) { return ad::mean_all(ad::mul(v[0], v[0])); },
       one({2, 3})},
      {"sum_rows",
       [](const std::vector<Var>& v) {
         return ad::sum_all(ad::mul(ad::sum_rows(v[0]), ad::sum_rows(v[0])));
       },
       one({3, 4})},
      {"rows_scale",
       [](const std::vector<Var>& v) {
         return ad::sum_all(ad::mul(ad::rows_scale(v[0], ad::sum_rows(v[1])), v[0]));
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({3, 4}, rng), random_tensor({3, 2}, rng)};
       }},
      {"softmax",
       [](const std::vector<Var>& v) { return ad::sum_all(ad::mul(ad::softmax(v[0], 1), v[0])); },
       one({3, 4})},
      {"matmul", [](const std::vector<Var>& v) { return ad::sum_all(ad::matmul(v[0], v[1])); },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
       }},
      {"transpose2",
       [](const std::vector<Var>& v) {
         return ad::sum_all(ad::mul(ad::transpose2(v[0]), ad::transpose2(v[0])));
       },
       one({3, 4})},
      {"reshape",
       [](const std::vector<Var>& v) {
         return ad::sum_all(ad::mul(ad::reshape(v[0], {6, 2}), ad::reshape(v[0], {6, 2})));
       },
       one({3, 4})},
      {"gather_rows",
       [](const std::vector<Var>& v) {
         return ad::sum_all(ad::mul(ad::gather_rows(v[0], {2, 0, 2}), ad::gather_rows(v[0], {2, 0, 2})));
       },
       one({4, 3})},
      {"scatter_rows",
       [](const std::vector<Var>& v) {
         auto s = ad::scatter_rows(v[0], {1, 3}, v[1]);
         return ad::sum_all(ad::mul(s, s));
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({4, 3}, rng), random_tensor({2, 3}, rng)};
       }},
      {"conv2d",
       [](const std::vector<Var>& v) {
         auto y = ad::conv2d(v[0], v[1], 2, 1, 1);
         return ad::sum_all(ad::mul(y, y));
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({1, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng)};
       }},
      {"conv2d_dilated",
       [](const std::vector<Var>& v) { return ad::sum_all(ad::conv2d(v[0], v[1], 1, 2, 2)); },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({1, 1, 7, 7}, rng), random_tensor({2, 1, 3, 3}, rng)};
       }},
      {"bias_channel",
       [](const std::vector<Var>& v) {
         auto y = ad::bias_channel(v[0], v[1]);
         return ad::sum_all(ad::mul(y, y));
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({1, 3, 2, 2}, rng), random_tensor({3}, rng)};
       }},
      {"upsample2",
       [](const std::vector<Var>& v) {
         auto y = ad::upsample2_nearest(v[0]);
         return ad::sum_all(ad::mul(y, y));
       },
       one({1, 2, 3, 3})},
      {"concat_channels",
       [](const std::vector<Var>& v) {
         auto y = ad::concat_channels(v[0], v[1]);
         return ad::sum_all(ad::mul(y, y));
       },
       [](Rng& rng) {
         return std::vector<Tensor>{random_tensor({1, 2, 3, 3}, rng), random_tensor({1, 1, 3, 3}, rng)};
       }},
      {"select_mask",
       [](const std::vector<Var>& v) {
         Tensor m({1, 1, 3, 3});
         for (int i = 0; i < 9; ++i) m.data[i] = i % 2 ? 1.0 : 0.0;
         auto y = ad::select_mask(v[0], v[1], m);
         return ad::sum_all(ad::mul(y, y));
       },
       two({1, 2, 3, 3})},
      {"extract_patches3",
       [](const std::vector<Var>& v) {
         auto y = ad::extract_patches3(v[0]);
         return ad::sum_all(ad::mul(y, y));
       },
       one({1, 2, 3, 4})},
      {"chw_rows_roundtrip",
       [](const std::vector<Var>& v) {
         auto y = ad::rows_to_chw(ad::chw_to_rows(v[0]), 2, 3, 4);
         return ad::sum_all(ad::mul(y, y));
       },
       one({1, 2, 3, 4})},
      {"rows_l2_normalize",
       [](const std::vector<Var>& v) {
         auto y = ad::rows_l2_normalize(v[0]);
         return ad::sum_all(ad::mul(y, v[0]));
       },
       one({3, 4})},
      {"mean_abs_diff", [](const std::vector<Var>& v) { return ad::mean_abs_diff(v[0], v[1]); },
       two({2, 5})},
  };
}

// worst relative error over n_seeds random draws of one case
inline double worst_error(const GradCase& c, int n_seeds) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < static_cast<std::uint64_t>(n_seeds); ++seed) {
    Rng rng(insmix::splitmix64(seed * 977 + 13));
    worst = std::max(worst, ad::grad_check(c.f, c.make(rng)));
  }
  return worst;
}

}  // namespace gradcases
