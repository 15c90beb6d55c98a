#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <cblas.h>

#include "insmix/common.hpp"

namespace insmix::ad {

// Dense row-major 64-bit float tensor.
struct Tensor {
  std::vector<long> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<long> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
  Tensor(std::vector<long> s, double fill) : shape(std::move(s)), data(numel_of(shape), fill) {}

  static std::size_t numel_of(const std::vector<long>& s) {
    std::size_t n = 1;
    for (long e : s) {
      if (e <= 0) throw ShapeError("tensor extent must be positive");
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor");
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + ")";
  }
};

inline void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data)
    if (!std::isfinite(v)) throw Error(std::string("non-finite value produced by ") + op);
}

// C(m,n) += A(m,k) * B(k,n), with optional transposes on the logical A/B.
inline void gemm_acc(bool ta, bool tb, long m, long n, long k, const double* a, const double* b,
                     double* c, double beta = 1.0) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(ta ? m : k), b, static_cast<int>(tb ? k : n), beta, c,
              static_cast<int>(n));
}

}  // namespace insmix::ad
