#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "insmix/rng.hpp"
#include "insmix/tensor.hpp"

namespace insmix::ad {

struct Node;
using Var = std::shared_ptr<Node>;

// One recorded primitive op. backward_fn reads this node's grad and
// accumulates into the parents' grads.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_ref() {
    if (grad.data.empty()) grad = Tensor(value.shape);
    return grad;
  }
  void zero_grad() { grad = Tensor(); }
};

inline Var constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return n;
}

inline Var param(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  return n;
}

inline Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bwd,
                     const char* op) {
  check_finite(value, op);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(bwd);
  }
  return n;
}

// Reverse-mode sweep from a scalar root; every reachable node is visited
// exactly once in reverse topological order.
inline void backward(const Var& root) {
  if (root->value.numel() != 1) throw ShapeError("backward: root must be scalar");
  if (!root->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root->grad_ref().data[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---- elementwise ----------------------------------------------------------

namespace detail {
inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw ShapeError(std::string(op) + ": shape mismatch " + a->value.shape_str() + " vs " +
                     b->value.shape_str());
}
inline void axpy(Tensor& dst, const Tensor& src, double s = 1.0) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += s * src.data[i];
}
}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor v = a->value;
  detail::axpy(v, b->value);
  return make_node(std::move(v), {a, b},
                   [](Node& n) {
                     for (int k = 0; k < 2; ++k)
                       if (n.parents[k]->requires_grad) detail::axpy(n.parents[k]->grad_ref(), n.grad);
                   },
                   "add");
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor v = a->value;
  detail::axpy(v, b->value, -1.0);
  return make_node(std::move(v), {a, b},
                   [](Node& n) {
                     if (n.parents[0]->requires_grad) detail::axpy(n.parents[0]->grad_ref(), n.grad);
                     if (n.parents[1]->requires_grad) detail::axpy(n.parents[1]->grad_ref(), n.grad, -1.0);
                   },
                   "sub");
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor v = a->value;
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] *= b->value.data[i];
  return make_node(std::move(v), {a, b},
                   [](Node& n) {
                     const auto& av = n.parents[0]->value.data;
                     const auto& bv = n.parents[1]->value.data;
                     if (n.parents[0]->requires_grad) {
                       auto& g = n.parents[0]->grad_ref().data;
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad.data[i] * bv[i];
                     }
                     if (n.parents[1]->requires_grad) {
                       auto& g = n.parents[1]->grad_ref().data;
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad.data[i] * av[i];
                     }
                   },
                   "mul");
}

inline Var scalar_mul(const Var& a, double s) {
  Tensor v = a->value;
  for (auto& x : v.data) x *= s;
  return make_node(std::move(v), {a},
                   [s](Node& n) {
                     if (n.parents[0]->requires_grad) detail::axpy(n.parents[0]->grad_ref(), n.grad, s);
                   },
                   "scalar_mul");
}

inline Var scalar_add(const Var& a, double s) {
  Tensor v = a->value;
  for (auto& x : v.data) x += s;
  return make_node(std::move(v), {a},
                   [](Node& n) {
                     if (n.parents[0]->requires_grad) detail::axpy(n.parents[0]->grad_ref(), n.grad);
                   },
                   "scalar_add");
}

inline Var neg(const Var& a) { return scalar_mul(a, -1.0); }

// elementwise x^p; x must stay positive for fractional/negative p
inline Var pow_scalar(const Var& a, double p) {
  Tensor v = a->value;
  for (auto& x : v.data) x = std::pow(x, p);
  return make_node(std::move(v), {a},
                   [p](Node& n) {
                     if (!n.parents[0]->requires_grad) return;
                     const auto& xv = n.parents[0]->value.data;
                     auto& g = n.parents[0]->grad_ref().data;
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += n.grad.data[i] * p * std::pow(xv[i], p - 1.0);
                   },
                   "pow_scalar");
}

inline Var abs_(const Var& a) {
  Tensor v = a->value;
  for (auto& x : v.data) x = std::fabs(x);
  return make_node(std::move(v), {a},
                   [](Node& n) {
                     if (!n.parents[0]->requires_grad) return;
                     const auto& xv = n.parents[0]->value.data;
                     auto& g = n.parents[0]->grad_ref().data;
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       double s = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
                       g[i] += n.grad.data[i] * s;
                     }
                   },
                   "abs");
}

inline Var leaky_relu(const Var& a, double slope = 0.2) {
  Tensor v = a->value;
  for (auto& x : v.data) x = x > 0.0 ? x : slope * x;
  return make_node(std::move(v), {a},
                   [slope](Node& n) {
                     if (!n.parents[0]->requires_grad) return;
                     const auto& xv = n.parents[0]->value.data;
                     auto& g = n.parents[0]->grad_ref().data;
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += n.grad.data[i] * (xv[i] > 0.0 ? 1.0 : slope);
                   },
                   "leaky_relu");
}

inline Var relu(const Var& a) { return leaky_relu(a, 0.0); }

inline Var sigmoid(const Var& a) {
  Tensor v = a->value;
  for (auto& x : v.data) x = 1.0 / (1.0 + std::exp(-x));
  return make_node(std::move(v), {a},
                   [](Node& n) {
                     if (!n.parents[0]->requires_grad) return;
                     const auto& yv = n.value.data;
                     auto& g = n.parents[0]->grad_ref().data;
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += n.grad.data[i] * yv[i] * (1.0 - yv[i]);
                   },
                   "sigmoid");
}

// ---- reductions -----------------------------------------------------------

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (double x : a->value.data) s += x;
  return make_node(Tensor::scalar(s), {a},
                   [](Node& n) {
                     if (!n.parents[0]->requires_grad) return;
                     auto& g = n.parents[0]->grad_ref().data;
                     double d = n.grad.data[0];
                     for (auto& x : g) x += d;
                   },
                   "sum_all");
}

inline Var mean_all(const Var& a) {
  return scalar_mul(sum_all(a), 1.0 / static_cast<double>(a->value.numel()));
}

// 2D (m,n) -> (m): sum along the second axis
inline Var sum_rows(const Var& a) {
  if (a->value.shape.size() != 2) throw ShapeError("sum_rows: expects 2D tensor");
  long m = a->value.shape[0], nn = a->value.shape[1];
  Tensor v({m});
  for (long i = 0; i < m; ++i) {
    double s = 0.0;
    for (long j = 0; j < nn; ++j) s += a->value.data[i * nn + j];
    v.data[i] = s;
  }
  return make_node(std::move(v), {a},
                   [m, nn](Node& n) {
                     if (!n.parents[0]->requires_grad) return;
                     auto& g = n.parents[0]->grad_ref().data;
                     for (long i = 0; i < m; ++i)
                       for (long j = 0; j < nn; ++j) g[i * nn + j] += n.grad.data[i];
                   },
                   "sum_rows");
}

// scales row i of X (m,n) by s[i]
inline Var rows_scale(const Var& x, const Var& s) {
  if (x->value.shape.size() != 2 || s->value.shape.size() != 1 ||
      s->value.shape[0] != x->value.shape[0])
    throw ShapeError("rows_scale: expects (m,n) and (m)");
  long m = x->value.shape[0], nn = x->value.shape[1];
  Tensor v = x->value;
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < nn; ++j) v.data[i * nn + j] *= s->value.data[i];
  return make_node(std::move(v), {x, s},
                   [m, nn](Node& n) {
                     const auto& xv = n.parents[0]->value.data;
                     const auto& sv = n.parents[1]->value.data;
                     if (n.parents[0]->requires_grad) {
                       auto& g = n.parents[0]->grad_ref().data;
                       for (long i = 0; i < m; ++i)
                         for (long j = 0; j < nn; ++j) g[i * nn + j] += n.grad.data[i * nn + j] * sv[i];
                     }
                     if (n.parents[1]->requires_grad) {
                       auto& g = n.parents[1]->grad_ref().data;
                       for (long i = 0; i < m; ++i) {
                         double acc = 0.0;
                         for (long j = 0; j < nn; ++j) acc += n.grad.data[i * nn + j] * xv[i * nn + j];
                         g[i] += acc;
                       }
                     }
                   },
                   "rows_scale");
}

// softmax along an arbitrary axis, max-subtracted
inline Var softmax(const Var& a, int axis) {
  const auto& sh = a->value.shape;
  if (axis < 0) axis += static_cast<int>(sh.size());
  if (axis < 0 || axis >= static_cast<int>(sh.size())) throw ShapeError("softmax: bad axis");
  long outer = 1, len = sh[axis], inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];

  Tensor v = a->value;
  for (long o = 0; o < outer; ++o)
    for (long in = 0; in < inner; ++in) {
      double mx = -std::numeric_limits<double>::infinity();
      for (long l = 0; l < len; ++l) mx = std::max(mx, v.data[(o * len + l) * inner + in]);
      double z = 0.0;
      for (long l = 0; l < len; ++l) {
        double e = std::exp(v.data[(o * len + l) * inner + in] - mx);
        v.data[(o * len + l) * inner + in] = e;
        z += e;
      }
      for (long l = 0; l < len; ++l) v.data[(o * len + l) * inner + in] /= z;
    }
  return make_node(std::move(v), {a},
                   [outer, len, inner](Node& n) {
                     if (!n.parents[0]->requires_grad) return;
                     const auto& y = n.value.data;
                     auto& g = n.parents[0]->grad_ref().data;
                     for (long o = 0; o < outer; ++o)
                       for (long in = 0; in < inner; ++in) {
                         double dot = 0.0;
                         for (long l = 0; l < len; ++l) {
                           std::size_t i = (o * len + l) * inner + in;
                           dot += n.grad.data[i] * y[i];
                         }
                         for (long l = 0; l < len; ++l) {
                           std::size_t i = (o * len + l) * inner + in;
                           g[i] += y[i] * (n.grad.data[i] - dot);
                         }
                       }
                   },
                   "softmax");
}

// ---- linear algebra / layout ----------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  if (a->value.shape.size() != 2 || b->value.shape.size() != 2 ||
      a->value.shape[1] != b->value.shape[0])
    throw ShapeError("matmul: incompatible shapes");
  long m = a->value.shape[0], k = a->value.shape[1], nn = b->value.shape[1];
  Tensor v({m, nn});
  gemm_acc(false, false, m, nn, k, a->value.data.data(), b->value.data.data(), v.data.data(), 0.0);
  return make_node(std::move(v), {a, b},
                   [m, k, nn](Node& n) {
                     if (n.parents[0]->requires_grad)
                       gemm_acc(false, true, m, k, nn, n.grad.data.data(),
                                n.parents[1]->value.data.data(), n.parents[0]->grad_ref().data.data());
                     if (n.parents[1]->requires_grad)
                       gemm_acc(true, false, k, nn, m, n.parents[0]->value.data.data(),
                                n.grad.data.data(), n.parents[1]->grad_ref().data.data());
                   },
                   "matmul");
}

inline Var transpose2(const Var& a) {
  if (a->value.shape.size() != 2) throw ShapeError("transpose2: expects 2D tensor");
  long m = a->value.shape[0], nn = a->value.shape[1];
  Tensor v({nn, m});
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < nn; ++j) v.data[j * m + i] = a->value.data[i * nn + j];
  return make_node(std::move(v), {a},
                   [m, nn](Node& n) {
                     if (!n.parents[0]->requires_grad) return;
                     auto& g = n.parents[0]->grad_ref().data;
                     for (long i = 0; i < m; ++i)
                       for (long j = 0; j < nn; ++j) g[i * nn + j] += n.grad.data[j * m + i];
                   },
                   "transpose2");
}

inline Var reshape(const Var& a, std::vector<long> shape) {
  if (Tensor::numel_of(shape) != a->value.numel()) throw ShapeError("reshape: element count mismatch");
  Tensor v = a->value;
  v.shape = std::move(shape);
  return make_node(std::move(v), {a},
                   [](Node& n) {
                     if (n.parents[0]->requires_grad) detail::axpy(n.parents[0]->grad_ref(), n.grad);
                   },
                   "reshape");
}

inline Var gather_rows(const Var& a, std::vector<long> idx) {
  if (a->value.shape.size() != 2) throw ShapeError("gather_rows: expects 2D tensor");
  long m = a->value.shape[0], nn = a->value.shape[1];
  for (long i : idx)
    if (i < 0 || i >= m) throw ShapeError("gather_rows: index out of range");
  Tensor v({static_cast<long>(idx.size()), nn});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(&a->value.data[idx[r] * nn], nn, &v.data[r * nn]);
  return make_node(std::move(v), {a},
                   [idx, nn](Node& n) {
                     if (!n.parents[0]->requires_grad) return;
                     auto& g = n.parents[0]->grad_ref().data;
                     for (std::size_t r = 0; r < idx.size(); ++r)
                       for (long j = 0; j < nn; ++j) g[idx[r] * nn + j] += n.grad.data[r * nn + j];
                   },
                   "gather_rows");
}

// copy of X with rows idx replaced by the rows of R; idx must be distinct
inline Var scatter_rows(const Var& x, std::vector<long> idx, const Var& r) {
  if (x->value.shape.size() != 2 || r->value.shape.size() != 2 ||
      x->value.shape[1] != r->value.shape[1] ||
      r->value.shape[0] != static_cast<long>(idx.size()))
    throw ShapeError("scatter_rows: incompatible shapes");
  long nn = x->value.shape[1];
  Tensor v = x->value;
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(&r->value.data[k * nn], nn, &v.data[idx[k] * nn]);
  return make_node(std::move(v), {x, r},
                   [idx, nn](Node& n) {
                     if (n.parents[0]->requires_grad) {
                       Tensor masked = n.grad;
                       for (long i : idx) std::fill_n(&masked.data[i * nn], nn, 0.0);
                       detail::axpy(n.parents[0]->grad_ref(), masked);
                     }
                     if (n.parents[1]->requires_grad) {
                       auto& g = n.parents[1]->grad_ref().data;
                       for (std::size_t k = 0; k < idx.size(); ++k)
                         for (long j = 0; j < nn; ++j) g[k * nn + j] += n.grad.data[idx[k] * nn + j];
                     }
                   },
                   "scatter_rows");
}

// ---- NCHW layers ------------------------------------------------------------

namespace detail {

inline void conv_out_extent(long H, long W, long k, long stride, long dilation, long pad, long& OH,
                            long& OW) {
  OH = (H + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  OW = (W + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
  if (OH <= 0 || OW <= 0) throw ShapeError("conv2d: non-positive output extent");
}

// cols is (C*k*k, OH*OW)
inline void im2col(const double* x, long C, long H, long W, long k, long stride, long dilation,
                   long pad, long OH, long OW, double* cols) {
  for (long c = 0; c < C; ++c)
    for (long ky = 0; ky < k; ++ky)
      for (long kx = 0; kx < k; ++kx) {
        double* row = cols + ((c * k + ky) * k + kx) * OH * OW;
        for (long oy = 0; oy < OH; ++oy) {
          long iy = oy * stride - pad + ky * dilation;
          for (long ox = 0; ox < OW; ++ox) {
            long ix = ox * stride - pad + kx * dilation;
            row[oy * OW + ox] =
                (iy >= 0 && iy < H && ix >= 0 && ix < W) ? x[(c * H + iy) * W + ix] : 0.0;
          }
        }
      }
}

inline void col2im_acc(const double* cols, long C, long H, long W, long k, long stride,
                       long dilation, long pad, long OH, long OW, double* x) {
  for (long c = 0; c < C; ++c)
    for (long ky = 0; ky < k; ++ky)
      for (long kx = 0; kx < k; ++kx) {
        const double* row = cols + ((c * k + ky) * k + kx) * OH * OW;
        for (long oy = 0; oy < OH; ++oy) {
          long iy = oy * stride - pad + ky * dilation;
          if (iy < 0 || iy >= H) continue;
          for (long ox = 0; ox < OW; ++ox) {
            long ix = ox * stride - pad + kx * dilation;
            if (ix >= 0 && ix < W) x[(c * H + iy) * W + ix] += row[oy * OW + ox];
          }
        }
      }
}

}  // namespace detail

// Cross-correlation with zero padding. x: (N,C,H,W), w: (O,C,k,k).
inline Var conv2d(const Var& x, const Var& w, long stride = 1, long dilation = 1, long pad = 0) {
  const auto& xs = x->value.shape;
  const auto& ws = w->value.shape;
  if (xs.size() != 4 || ws.size() != 4 || ws[2] != ws[3])
    throw ShapeError("conv2d: expects (N,C,H,W) and (O,C,k,k)");
  if (xs[1] != ws[1]) throw ShapeError("conv2d: channel mismatch");
  long N = xs[0], C = xs[1], H = xs[2], W = xs[3], O = ws[0], k = ws[2];
  long OH, OW;
  detail::conv_out_extent(H, W, k, stride, dilation, pad, OH, OW);

  Tensor v({N, O, OH, OW});
  std::vector<double> cols(static_cast<std::size_t>(C * k * k) * OH * OW);
  for (long n = 0; n < N; ++n) {
    detail::im2col(&x->value.data[n * C * H * W], C, H, W, k, stride, dilation, pad, OH, OW,
                   cols.data());
    gemm_acc(false, false, O, OH * OW, C * k * k, w->value.data.data(), cols.data(),
             &v.data[n * O * OH * OW], 0.0);
  }

  auto bwd = [N, C, H, W, O, k, OH, OW, stride, dilation, pad](Node& nd) {
    const auto& xv = nd.parents[0]->value;
    const auto& wv = nd.parents[1]->value;
    std::vector<double> cols(static_cast<std::size_t>(C * k * k) * OH * OW);
    for (long n = 0; n < N; ++n) {
      const double* dy = &nd.grad.data[n * O * OH * OW];
      if (nd.parents[1]->requires_grad) {
        detail::im2col(&xv.data[n * C * H * W], C, H, W, k, stride, dilation, pad, OH, OW,
                       cols.data());
        gemm_acc(false, true, O, C * k * k, OH * OW, dy, cols.data(),
                 nd.parents[1]->grad_ref().data.data());
      }
      if (nd.parents[0]->requires_grad) {
        std::fill(cols.begin(), cols.end(), 0.0);
        gemm_acc(true, false, C * k * k, OH * OW, O, wv.data.data(), dy, cols.data(), 0.0);
        detail::col2im_acc(cols.data(), C, H, W, k, stride, dilation, pad, OH, OW,
                           &nd.parents[0]->grad_ref().data[n * C * H * W]);
      }
    }
  };
  return make_node(std::move(v), {x, w}, std::move(bwd), "conv2d");
}

// adds b (C) to every (n, :, y, x) column of x (N,C,H,W)
inline Var bias_channel(const Var& x, const Var& b) {
  const auto& xs = x->value.shape;
  if (xs.size() != 4 || b->value.shape.size() != 1 || b->value.shape[0] != xs[1])
    throw ShapeError("bias_channel: expects (N,C,H,W) and (C)");
  long N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  Tensor v = x->value;
  for (long n = 0; n < N; ++n)
    for (long c = 0; c < C; ++c)
      for (long i = 0; i < HW; ++i) v.data[(n * C + c) * HW + i] += b->value.data[c];
  return make_node(std::move(v), {x, b},
                   [N, C, HW](Node& nd) {
                     if (nd.parents[0]->requires_grad) detail::axpy(nd.parents[0]->grad_ref(), nd.grad);
                     if (nd.parents[1]->requires_grad) {
                       auto& g = nd.parents[1]->grad_ref().data;
                       for (long n = 0; n < N; ++n)
                         for (long c = 0; c < C; ++c)
                           for (long i = 0; i < HW; ++i) g[c] += nd.grad.data[(n * C + c) * HW + i];
                     }
                   },
                   "bias_channel");
}

inline Var upsample2_nearest(const Var& x) {
  const auto& xs = x->value.shape;
  if (xs.size() != 4) throw ShapeError("upsample2: expects (N,C,H,W)");
  long N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  Tensor v({N, C, 2 * H, 2 * W});
  for (long nc = 0; nc < N * C; ++nc)
    for (long y = 0; y < 2 * H; ++y)
      for (long xw = 0; xw < 2 * W; ++xw)
        v.data[(nc * 2 * H + y) * 2 * W + xw] = x->value.data[(nc * H + y / 2) * W + xw / 2];
  return make_node(std::move(v), {x},
                   [N, C, H, W](Node& nd) {
                     if (!nd.parents[0]->requires_grad) return;
                     auto& g = nd.parents[0]->grad_ref().data;
                     for (long nc = 0; nc < N * C; ++nc)
                       for (long y = 0; y < 2 * H; ++y)
                         for (long xw = 0; xw < 2 * W; ++xw)
                           g[(nc * H + y / 2) * W + xw / 2] +=
                               nd.grad.data[(nc * 2 * H + y) * 2 * W + xw];
                   },
                   "upsample2");
}

inline Var concat_channels(const Var& a, const Var& b) {
  const auto& as = a->value.shape;
  const auto& bs = b->value.shape;
  if (as.size() != 4 || bs.size() != 4 || as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw ShapeError("concat_channels: incompatible shapes");
  long N = as[0], Ca = as[1], Cb = bs[1], HW = as[2] * as[3];
  Tensor v({N, Ca + Cb, as[2], as[3]});
  for (long n = 0; n < N; ++n) {
    std::copy_n(&a->value.data[n * Ca * HW], Ca * HW, &v.data[n * (Ca + Cb) * HW]);
    std::copy_n(&b->value.data[n * Cb * HW], Cb * HW, &v.data[n * (Ca + Cb) * HW + Ca * HW]);
  }
  return make_node(std::move(v), {a, b},
                   [N, Ca, Cb, HW](Node& nd) {
                     for (long n = 0; n < N; ++n) {
                       if (nd.parents[0]->requires_grad) {
                         auto& g = nd.parents[0]->grad_ref().data;
                         for (long i = 0; i < Ca * HW; ++i)
                           g[n * Ca * HW + i] += nd.grad.data[n * (Ca + Cb) * HW + i];
                       }
                       if (nd.parents[1]->requires_grad) {
                         auto& g = nd.parents[1]->grad_ref().data;
                         for (long i = 0; i < Cb * HW; ++i)
                           g[n * Cb * HW + i] += nd.grad.data[n * (Ca + Cb) * HW + Ca * HW + i];
                       }
                     }
                   },
                   "concat_channels");
}

// per-pixel select: out = m ? a : b, with m a (1,1,H,W) constant mask
// broadcast over channels
inline Var select_mask(const Var& a, const Var& b, const Tensor& m) {
  detail::require_same_shape(a, b, "select_mask");
  const auto& s = a->value.shape;
  if (s.size() != 4 || m.shape.size() != 4 || m.shape[2] != s[2] || m.shape[3] != s[3])
    throw ShapeError("select_mask: incompatible mask");
  long N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor v = b->value;
  for (long n = 0; n < N; ++n)
    for (long c = 0; c < C; ++c)
      for (long i = 0; i < HW; ++i)
        if (m.data[i] != 0.0) v.data[(n * C + c) * HW + i] = a->value.data[(n * C + c) * HW + i];
  return make_node(std::move(v), {a, b},
                   [m, N, C, HW](Node& nd) {
                     for (long n = 0; n < N; ++n)
                       for (long c = 0; c < C; ++c)
                         for (long i = 0; i < HW; ++i) {
                           std::size_t k = (n * C + c) * HW + i;
                           Node* p = m.data[i] != 0.0 ? nd.parents[0].get() : nd.parents[1].get();
                           if (p->requires_grad) p->grad_ref().data[k] += nd.grad.data[k];
                         }
                   },
                   "select_mask");
}

// (1,C,h,w) -> (h*w, C*9): row i holds the zero-padded 3x3 neighborhood of
// position i, channel-major
inline Var extract_patches3(const Var& x) {
  const auto& s = x->value.shape;
  if (s.size() != 4 || s[0] != 1) throw ShapeError("extract_patches3: expects (1,C,h,w)");
  long C = s[1], h = s[2], w = s[3];
  Tensor v({h * w, C * 9});
  for (long y = 0; y < h; ++y)
    for (long xx = 0; xx < w; ++xx)
      for (long c = 0; c < C; ++c)
        for (long ky = -1; ky <= 1; ++ky)
          for (long kx = -1; kx <= 1; ++kx) {
            long iy = y + ky, ix = xx + kx;
            double val = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                             ? x->value.data[(c * h + iy) * w + ix]
                             : 0.0;
            v.data[(y * w + xx) * C * 9 + c * 9 + (ky + 1) * 3 + (kx + 1)] = val;
          }
  return make_node(std::move(v), {x},
                   [C, h, w](Node& nd) {
                     if (!nd.parents[0]->requires_grad) return;
                     auto& g = nd.parents[0]->grad_ref().data;
                     for (long y = 0; y < h; ++y)
                       for (long xx = 0; xx < w; ++xx)
                         for (long c = 0; c < C; ++c)
                           for (long ky = -1; ky <= 1; ++ky)
                             for (long kx = -1; kx <= 1; ++kx) {
                               long iy = y + ky, ix = xx + kx;
                               if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                               g[(c * h + iy) * w + ix] +=
                                   nd.grad.data[(y * w + xx) * C * 9 + c * 9 + (ky + 1) * 3 + (kx + 1)];
                             }
                   },
                   "extract_patches3");
}

// (1,C,h,w) -> (h*w, C) position-major feature rows
inline Var chw_to_rows(const Var& x) {
  const auto& s = x->value.shape;
  if (s.size() != 4 || s[0] != 1) throw ShapeError("chw_to_rows: expects (1,C,h,w)");
  long C = s[1], HW = s[2] * s[3];
  Tensor v({HW, C});
  for (long c = 0; c < C; ++c)
    for (long i = 0; i < HW; ++i) v.data[i * C + c] = x->value.data[c * HW + i];
  return make_node(std::move(v), {x},
                   [C, HW](Node& nd) {
                     if (!nd.parents[0]->requires_grad) return;
                     auto& g = nd.parents[0]->grad_ref().data;
                     for (long c = 0; c < C; ++c)
                       for (long i = 0; i < HW; ++i) g[c * HW + i] += nd.grad.data[i * C + c];
                   },
                   "chw_to_rows");
}

inline Var rows_to_chw(const Var& x, long C, long h, long w) {
  const auto& s = x->value.shape;
  if (s.size() != 2 || s[0] != h * w || s[1] != C) throw ShapeError("rows_to_chw: bad shape");
  long HW = h * w;
  Tensor v({1, C, h, w});
  for (long c = 0; c < C; ++c)
    for (long i = 0; i < HW; ++i) v.data[c * HW + i] = x->value.data[i * C + c];
  return make_node(std::move(v), {x},
                   [C, HW](Node& nd) {
                     if (!nd.parents[0]->requires_grad) return;
                     auto& g = nd.parents[0]->grad_ref().data;
                     for (long c = 0; c < C; ++c)
                       for (long i = 0; i < HW; ++i) g[i * C + c] += nd.grad.data[c * HW + i];
                   },
                   "rows_to_chw");
}

// L2-normalizes each row of a 2D tensor (small eps keeps zero rows finite)
inline Var rows_l2_normalize(const Var& x, double eps = 1e-12) {
  Var sq = mul(x, x);
  Var inv = pow_scalar(scalar_add(sum_rows(sq), eps), -0.5);
  return rows_scale(x, inv);
}

inline Var mean_abs_diff(const Var& a, const Var& b) { return mean_all(abs_(sub(a, b))); }

// ---- verification harness ---------------------------------------------------

// Compares tape gradients against central differences; returns the worst
// relative error over every element of every input.
inline double grad_check(const std::function<Var(const std::vector<Var>&)>& f,
                         std::vector<Tensor> inputs, double eps = 1e-5) {
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (auto& t : inputs) vars.push_back(param(t));
  Var out = f(vars);
  if (out->value.numel() != 1) throw ShapeError("grad_check: f must be scalar-valued");
  backward(out);

  std::vector<Tensor> analytic;
  for (auto& v : vars) analytic.push_back(v->grad.data.empty() ? Tensor(v->value.shape) : v->grad);

  auto eval = [&](const std::vector<Tensor>& ins) {
    std::vector<Var> vs;
    vs.reserve(ins.size());
    for (const auto& t : ins) vs.push_back(constant(t));
    return f(vs)->value.item();
  };

  double worst = 0.0;
  for (std::size_t vi = 0; vi < inputs.size(); ++vi) {
    for (std::size_t i = 0; i < inputs[vi].data.size(); ++i) {
      double keep = inputs[vi].data[i];
      inputs[vi].data[i] = keep + eps;
      double fp = eval(inputs);
      inputs[vi].data[i] = keep - eps;
      double fm = eval(inputs);
      inputs[vi].data[i] = keep;
      double fd = (fp - fm) / (2.0 * eps);
      double an = analytic[vi].data[i];
      double err = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-3});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// ---- optimizer ----------------------------------------------------------------

// Adaptive-moment first-order optimizer; moment decays default to (0.5, 0.9).
class Adam {
 public:
  Adam(double lr, double beta1 = 0.5, double beta2 = 0.9, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Var>& params) {
    ++t_;
    double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (const auto& p : params) {
      if (p->grad.data.empty()) continue;
      auto& st = state_[p.get()];
      if (st.m.data.empty()) {
        st.m = Tensor(p->value.shape);
        st.v = Tensor(p->value.shape);
      }
      for (std::size_t i = 0; i < p->value.data.size(); ++i) {
        double g = p->grad.data[i];
        st.m.data[i] = b1_ * st.m.data[i] + (1.0 - b1_) * g;
        st.v.data[i] = b2_ * st.v.data[i] + (1.0 - b2_) * g * g;
        double mhat = st.m.data[i] / c1;
        double vhat = st.v.data[i] / c2;
        p->value.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  struct Moments {
    Tensor m, v;
  };
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::unordered_map<Node*, Moments> state_;
};

inline void zero_grads(const std::vector<Var>& params) {
  for (const auto& p : params) p->zero_grad();
}

}  // namespace insmix::ad
