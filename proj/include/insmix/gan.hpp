#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>

#include "insmix/autodiff.hpp"
#include "insmix/compositor.hpp"
#include "insmix/dataset.hpp"

namespace insmix {

// ---- spectral normalization -------------------------------------------------

struct SpectralState {
  std::vector<double> u;  // persistent left singular-vector estimate, unit norm
  long iterations_per_step = 1;
};

namespace gan_detail {

inline double vec_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace gan_detail

// Estimates the top singular value of w viewed as (rows, numel/rows) by
// power iteration with the persistent u of `state`, then returns w / sigma
// on the tape (sigma treated as a constant).
inline ad::Var spectral_normalize(const ad::Var& w, SpectralState& state, bool update_u = true) {
  const auto& t = w->value;
  long m = t.shape[0];
  long n = static_cast<long>(t.numel()) / m;
  const double* W = t.data.data();

  bool all_zero = true;
  for (double x : t.data)
    if (x != 0.0) {
      all_zero = false;
      break;
    }
  if (all_zero) throw Error("spectral_normalize: zero matrix has no defined direction");

  if (state.u.empty()) {
    // deterministic start: normalized ones
    state.u.assign(m, 1.0 / std::sqrt(static_cast<double>(m)));
  }
  std::vector<double> u = state.u, v(n);

  long iters = update_u ? std::max<long>(1, state.iterations_per_step) : 1;
  for (long it = 0; it < iters; ++it) {
    // v = normalize(W^T u)
    std::fill(v.begin(), v.end(), 0.0);
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < n; ++j) v[j] += W[i * n + j] * u[i];
    double nv = gan_detail::vec_norm(v);
    if (nv == 0.0) throw Error("spectral_normalize: degenerate iterate");
    for (auto& x : v) x /= nv;
    // u = normalize(W v)
    std::vector<double> wu(m, 0.0);
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < n; ++j) wu[i] += W[i * n + j] * v[j];
    double nu = gan_detail::vec_norm(wu);
    if (nu == 0.0) throw Error("spectral_normalize: degenerate iterate");
    for (long i = 0; i < m; ++i) u[i] = wu[i] / nu;
  }
  double sigma = 0.0;
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < n; ++j) sigma += u[i] * W[i * n + j] * v[j];
  if (sigma <= 0.0) throw Error("spectral_normalize: non-positive sigma estimate");
  if (update_u) state.u = u;
  return ad::scalar_mul(w, 1.0 / sigma);
}

// Plain power-iteration top singular value (fresh start), used for audits.
inline double top_singular_value(const ad::Tensor& t, long iterations) {
  long m = t.shape[0];
  long n = static_cast<long>(t.numel()) / m;
  SpectralState st;
  st.iterations_per_step = iterations;
  auto w = ad::constant(t);
  auto wn = spectral_normalize(w, st, true);
  // sigma = w / normalized: recover the applied scale from the largest element
  std::size_t imax = 0;
  for (std::size_t i = 0; i < t.data.size(); ++i)
    if (std::fabs(t.data[i]) > std::fabs(t.data[imax])) imax = i;
  (void)m;
  (void)n;
  return t.data[imax] / wn->value.data[imax];
}

// ---- configuration & parameters ----------------------------------------------

struct GanConfig {
  double margin = 1.0;       // triplet margin m
  double lambda = 10.0;      // reconstruction weight
  long base_channels = 16;
  long crop = 64;            // training crop edge, multiple of 4
  long steps = 2000;
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  std::uint64_t seed = 1;

  void validate() const {
    if (margin <= 0.0) throw ConfigError("gan: margin must be > 0");
    if (lambda < 0.0) throw ConfigError("gan: lambda must be >= 0");
    if (crop % 4 != 0 || crop <= 0) throw ConfigError("gan: crop must be a positive multiple of 4");
    if (base_channels < 1) throw ConfigError("gan: base_channels must be >= 1");
    if (steps < 0) throw ConfigError("gan: steps must be >= 0");
  }
};

struct GatedConv {
  ad::Var w_feat, b_feat, w_gate, b_gate;
  long stride = 1, dilation = 1, pad = 1;
};

struct SnConv {
  ad::Var w, b;
  SpectralState sn;
  long stride = 1, pad = 1;
};

struct GanParams {
  long base_channels = 16;
  // generator: 3 downsampling gated convs, 2 dilated bottleneck gated convs,
  // 3 upsampling gated convs, final RGB conv + logistic
  std::vector<GatedConv> enc;
  std::vector<GatedConv> bottleneck;
  std::vector<GatedConv> dec;
  ad::Var out_w, out_b;
  // discriminator: 4 spectral-normalized stride-2 convs + 1-channel head
  std::vector<SnConv> disc;

  std::vector<ad::Var> generator_params() const {
    std::vector<ad::Var> out;
    auto push = [&](const GatedConv& g) {
      out.insert(out.end(), {g.w_feat, g.b_feat, g.w_gate, g.b_gate});
    };
    for (const auto& g : enc) push(g);
    for (const auto& g : bottleneck) push(g);
    for (const auto& g : dec) push(g);
    out.push_back(out_w);
    out.push_back(out_b);
    return out;
  }

  std::vector<ad::Var> discriminator_params() const {
    std::vector<ad::Var> out;
    for (const auto& l : disc) {
      out.push_back(l.w);
      out.push_back(l.b);
    }
    return out;
  }

  std::vector<std::pair<std::string, ad::Var>> named_params() {
    std::vector<std::pair<std::string, ad::Var>> out;
    auto gc = [&](const std::string& p, GatedConv& g) {
      out.emplace_back(p + ".w_feat", g.w_feat);
      out.emplace_back(p + ".b_feat", g.b_feat);
      out.emplace_back(p + ".w_gate", g.w_gate);
      out.emplace_back(p + ".b_gate", g.b_gate);
    };
    for (std::size_t i = 0; i < enc.size(); ++i) gc("g.enc" + std::to_string(i), enc[i]);
    for (std::size_t i = 0; i < bottleneck.size(); ++i) gc("g.bott" + std::to_string(i), bottleneck[i]);
    for (std::size_t i = 0; i < dec.size(); ++i) gc("g.dec" + std::to_string(i), dec[i]);
    out.emplace_back("g.out.w", out_w);
    out.emplace_back("g.out.b", out_b);
    for (std::size_t i = 0; i < disc.size(); ++i) {
      out.emplace_back("d.conv" + std::to_string(i) + ".w", disc[i].w);
      out.emplace_back("d.conv" + std::to_string(i) + ".b", disc[i].b);
    }
    return out;
  }
};

namespace gan_detail {

inline ad::Var gaussian_param(std::vector<long> shape, Rng& rng) {
  ad::Tensor t(shape);
  double fan_in = 1.0;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= static_cast<double>(shape[i]);
  double std_dev = 1.0 / std::sqrt(std::max(1.0, fan_in));
  for (auto& v : t.data) v = std_dev * rng.normal();
  return ad::param(std::move(t));
}

inline GatedConv make_gated(long in, long out, long stride, long dilation, long pad, Rng& rng) {
  GatedConv g;
  g.w_feat = gaussian_param({out, in, 3, 3}, rng);
  g.b_feat = ad::param(ad::Tensor({out}));
  g.w_gate = gaussian_param({out, in, 3, 3}, rng);
  g.b_gate = ad::param(ad::Tensor({out}));
  g.stride = stride;
  g.dilation = dilation;
  g.pad = pad;
  return g;
}

inline SnConv make_sn(long in, long out, long k, long stride, long pad, Rng& rng) {
  SnConv l;
  l.w = gaussian_param({out, in, k, k}, rng);
  l.b = ad::param(ad::Tensor({out}));
  l.stride = stride;
  l.pad = pad;
  return l;
}

}  // namespace gan_detail

inline GanParams init_gan_params(long base_channels, std::uint64_t seed) {
  Rng rng(splitmix64(seed ^ 0x67616eULL));
  long C = base_channels;
  GanParams p;
  p.base_channels = C;
  p.enc.push_back(gan_detail::make_gated(4, C, 1, 1, 1, rng));
  p.enc.push_back(gan_detail::make_gated(C, 2 * C, 2, 1, 1, rng));
  p.enc.push_back(gan_detail::make_gated(2 * C, 4 * C, 2, 1, 1, rng));
  p.bottleneck.push_back(gan_detail::make_gated(4 * C, 4 * C, 1, 2, 2, rng));
  p.bottleneck.push_back(gan_detail::make_gated(4 * C, 4 * C, 1, 4, 4, rng));
  // decoder consumes FSE output concatenated with the raw bottleneck (8C)
  p.dec.push_back(gan_detail::make_gated(8 * C, 2 * C, 1, 1, 1, rng));
  p.dec.push_back(gan_detail::make_gated(2 * C, C, 1, 1, 1, rng));
  p.dec.push_back(gan_detail::make_gated(C, C, 1, 1, 1, rng));
  p.out_w = gan_detail::gaussian_param({3, C, 3, 3}, rng);
  p.out_b = ad::param(ad::Tensor({3}));
  p.disc.push_back(gan_detail::make_sn(3, C, 4, 2, 1, rng));
  p.disc.push_back(gan_detail::make_sn(C, 2 * C, 4, 2, 1, rng));
  p.disc.push_back(gan_detail::make_sn(2 * C, 4 * C, 4, 2, 1, rng));
  p.disc.push_back(gan_detail::make_sn(4 * C, 8 * C, 4, 2, 1, rng));
  p.disc.push_back(gan_detail::make_sn(8 * C, 1, 3, 1, 1, rng));
  return p;
}

// ---- forward passes -----------------------------------------------------------

inline ad::Var gated_conv(const ad::Var& x, const GatedConv& g) {
  ad::Var f = ad::bias_channel(ad::conv2d(x, g.w_feat, g.stride, g.dilation, g.pad), g.b_feat);
  ad::Var gate = ad::bias_channel(ad::conv2d(x, g.w_gate, g.stride, g.dilation, g.pad), g.b_gate);
  return ad::mul(ad::leaky_relu(f, 0.2), ad::sigmoid(gate));
}

// Downsamples a (1,1,H,W) mask by area average then thresholds at 0.5.
inline ad::Tensor downsample_mask(const ad::Tensor& m, long factor) {
  long H = m.shape[2], W = m.shape[3];
  long h = H / factor, w = W / factor;
  ad::Tensor out({1, 1, h, w});
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double s = 0.0;
      for (long dy = 0; dy < factor; ++dy)
        for (long dx = 0; dx < factor; ++dx) s += m.data[(y * factor + dy) * W + (x * factor + dx)];
      out.data[y * w + x] = s / static_cast<double>(factor * factor) > 0.5 ? 1.0 : 0.0;
    }
  return out;
}

struct FseResult {
  ad::Var out;                  // feature map with template positions rewritten
  ad::Var weights;              // (nT, nO) softmax attention weights (empty Var if no templates)
  std::vector<long> template_rows, original_rows;
};

// Patch-similarity attention: every template-region position receives a
// convex combination of original-region center features, weighted by the
// softmax of cosine similarities between 3x3 feature patches.
inline FseResult fse(const ad::Var& feat, const ad::Tensor& m_t_ds, const ad::Tensor& m_o_ds) {
  const auto& s = feat->value.shape;
  long C = s[1], h = s[2], w = s[3];
  if (m_t_ds.shape[2] != h || m_t_ds.shape[3] != w || m_o_ds.shape[2] != h || m_o_ds.shape[3] != w)
    throw ShapeError("fse: masks must be at feature resolution");

  FseResult r;
  for (long i = 0; i < h * w; ++i) {
    if (m_t_ds.data[i] != 0.0) r.template_rows.push_back(i);
    else if (m_o_ds.data[i] != 0.0) r.original_rows.push_back(i);
  }
  if (r.template_rows.empty()) {
    r.out = feat;
    return r;
  }
  if (r.original_rows.empty()) throw Error("fse: template region present but no original region");

  ad::Var patches = ad::extract_patches3(feat);
  ad::Var a = ad::rows_l2_normalize(ad::gather_rows(patches, r.template_rows));
  ad::Var b = ad::rows_l2_normalize(ad::gather_rows(patches, r.original_rows));
  ad::Var sim = ad::matmul(a, ad::transpose2(b));
  r.weights = ad::softmax(sim, 1);

  ad::Var rows = ad::chw_to_rows(feat);
  ad::Var originals = ad::gather_rows(rows, r.original_rows);
  ad::Var mixed = ad::matmul(r.weights, originals);
  r.out = ad::rows_to_chw(ad::scatter_rows(rows, r.template_rows, mixed), C, h, w);
  return r;
}

struct GeneratorOut {
  ad::Var g;           // (1,3,H,W) in (0,1)
  FseResult fse_info;
};

// Input is RGB plus the template mask as a fourth channel. The bottleneck
// passes through the FSE and is concatenated with the raw bottleneck
// feature before decoding.
inline GeneratorOut generator_forward(const GanParams& p, const ad::Var& u_rgb,
                                      const ad::Tensor& m_template, const ad::Tensor& m_original) {
  const auto& s = u_rgb->value.shape;
  long H = s[2], W = s[3];
  if (H % 4 != 0 || W % 4 != 0) throw ShapeError("generator: extents must be divisible by 4");

  ad::Var x = ad::concat_channels(u_rgb, ad::constant(m_template));
  for (const auto& g : p.enc) x = gated_conv(x, g);
  for (const auto& g : p.bottleneck) x = gated_conv(x, g);

  ad::Tensor mt = downsample_mask(m_template, 4);
  ad::Tensor mo = downsample_mask(m_original, 4);
  // the attention source must be non-empty whenever a template region
  // survives downsampling; fall back to the feature-level complement of the
  // template (covers full-foreground re-rendering, where no untouched
  // instance region exists), and skip the exchange entirely if even the
  // complement is empty
  auto any_set = [](const ad::Tensor& m) {
    for (double v : m.data)
      if (v != 0.0) return true;
    return false;
  };
  if (any_set(mt) && !any_set(mo)) {
    for (std::size_t i = 0; i < mo.data.size(); ++i) mo.data[i] = mt.data[i] == 0.0 ? 1.0 : 0.0;
    if (!any_set(mo)) std::fill(mt.data.begin(), mt.data.end(), 0.0);
  }
  GeneratorOut out;
  out.fse_info = fse(x, mt, mo);
  x = ad::concat_channels(out.fse_info.out, x);

  x = gated_conv(ad::upsample2_nearest(x), p.dec[0]);
  x = gated_conv(ad::upsample2_nearest(x), p.dec[1]);
  x = gated_conv(x, p.dec[2]);
  out.g = ad::sigmoid(ad::bias_channel(ad::conv2d(x, p.out_w, 1, 1, 1), p.out_b));
  return out;
}

// S(u) = G(u) on the template region, u elsewhere (bit-exact outside M).
inline ad::Var compose(const ad::Var& u, const ad::Var& g, const ad::Tensor& m) {
  return ad::select_mask(g, u, m);
}

// One set of spectral-normalized discriminator weights; reuse across the
// triplet so all three patch maps see identical effective weights.
inline std::vector<ad::Var> discriminator_weights(GanParams& p, bool update_u) {
  std::vector<ad::Var> ws;
  ws.reserve(p.disc.size());
  for (auto& l : p.disc) ws.push_back(spectral_normalize(l.w, l.sn, update_u));
  return ws;
}

inline ad::Var discriminator_forward(const GanParams& p, const std::vector<ad::Var>& norm_w,
                                     const ad::Var& x) {
  const auto& s = x->value.shape;
  if (s[2] % 16 != 0 || s[3] % 16 != 0)
    throw ShapeError("discriminator: extents must be divisible by 16");
  ad::Var h = x;
  for (std::size_t i = 0; i + 1 < p.disc.size(); ++i) {
    h = ad::bias_channel(ad::conv2d(h, norm_w[i], p.disc[i].stride, 1, p.disc[i].pad), p.disc[i].b);
    h = ad::leaky_relu(h, 0.2);
  }
  const auto& last = p.disc.back();
  return ad::bias_channel(ad::conv2d(h, norm_w.back(), last.stride, 1, last.pad), last.b);
}

inline ad::Var discriminator_forward(GanParams& p, const ad::Var& x, bool update_u = false) {
  return discriminator_forward(p, discriminator_weights(p, update_u), x);
}

// mean absolute difference between patch maps
inline ad::Var patch_distance(const ad::Var& a, const ad::Var& b) { return ad::mean_abs_diff(a, b); }

// L_D = max(0, d(D(xa),D(xp)) - d(D(xa),D(S(u))) + m)
inline ad::Var loss_d(const ad::Var& d_anchor, const ad::Var& d_positive, const ad::Var& d_negative,
                      double margin) {
  ad::Var d_pos = patch_distance(d_anchor, d_positive);
  ad::Var d_neg = patch_distance(d_anchor, d_negative);
  return ad::relu(ad::scalar_add(ad::sub(d_pos, d_neg), margin));
}

// L_G = [d(D(xa),D(S(u))) - d(D(xa),D(xp))] + lambda * mean|u - G(u)|
inline ad::Var loss_g(const ad::Var& d_anchor, const ad::Var& d_positive, const ad::Var& d_su,
                      const ad::Var& u, const ad::Var& g, double lambda) {
  ad::Var adv = ad::sub(patch_distance(d_anchor, d_su), patch_distance(d_anchor, d_positive));
  return ad::add(adv, ad::scalar_mul(ad::mean_abs_diff(u, g), lambda));
}

// ---- image <-> tensor ----------------------------------------------------------

inline ad::Tensor image_to_tensor(const Image8& img) {
  ad::Tensor t({1, 3, img.h, img.w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        t.data[(static_cast<long>(c) * img.h + y) * img.w + x] = img.at(y, x, c) / 255.0;
  return t;
}

inline Image8 tensor_to_image(const ad::Tensor& t) {
  long h = t.shape[2], w = t.shape[3];
  Image8 img(static_cast<int>(h), static_cast<int>(w));
  for (int c = 0; c < 3; ++c)
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double v = t.data[(c * h + y) * w + x] * 255.0;
        img.at(static_cast<int>(y), static_cast<int>(x), c) =
            static_cast<std::uint8_t>(std::clamp<long>(std::llround(v), 0, 255));
      }
  return img;
}

inline ad::Tensor mask_to_tensor(const Mask& m) {
  ad::Tensor t({1, 1, m.h, m.w});
  for (std::size_t i = 0; i < m.data.size(); ++i) t.data[i] = m.data[i] ? 1.0 : 0.0;
  return t;
}

// ---- checkpoints ----------------------------------------------------------------

// Flat binary container: magic "INSMIXW1", then per-tensor records of
// name length + bytes, rank, extents (LE u64), values (LE f64).
namespace gan_detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& os, double d) {
  std::uint64_t v;
  static_assert(sizeof(v) == sizeof(d));
  std::memcpy(&v, &d, 8);
  write_u64(os, v);
}

inline double read_f64(std::istream& is) {
  std::uint64_t v = read_u64(is);
  double d;
  std::memcpy(&d, &v, 8);
  return d;
}

inline void write_record(std::ostream& os, const std::string& name, const ad::Tensor& t) {
  write_u64(os, name.size());
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u64(os, t.shape.size());
  for (long e : t.shape) write_u64(os, static_cast<std::uint64_t>(e));
  for (double v : t.data) write_f64(os, v);
}

}  // namespace gan_detail

inline void save_checkpoint(GanParams& p, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write("INSMIXW1", 8);
  for (auto& [name, var] : p.named_params()) gan_detail::write_record(os, name, var->value);
  for (std::size_t i = 0; i < p.disc.size(); ++i) {
    if (p.disc[i].sn.u.empty()) continue;
    ad::Tensor u({static_cast<long>(p.disc[i].sn.u.size())});
    u.data = p.disc[i].sn.u;
    gan_detail::write_record(os, "d.conv" + std::to_string(i) + ".sn_u", u);
  }
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

inline GanParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != "INSMIXW1") throw IoError("bad checkpoint magic: " + path.string());

  std::map<std::string, ad::Tensor> tensors;
  while (true) {
    std::uint64_t nlen = gan_detail::read_u64(is);
    if (!is || is.eof()) break;
    std::string name(nlen, '\0');
    is.read(name.data(), static_cast<std::streamsize>(nlen));
    std::uint64_t rank = gan_detail::read_u64(is);
    std::vector<long> shape(rank);
    for (auto& e : shape) e = static_cast<long>(gan_detail::read_u64(is));
    ad::Tensor t(shape);
    for (auto& v : t.data) v = gan_detail::read_f64(is);
    if (!is) throw IoError("truncated checkpoint: " + path.string());
    tensors.emplace(std::move(name), std::move(t));
  }

  auto it = tensors.find("g.enc0.w_feat");
  if (it == tensors.end()) throw IoError("checkpoint missing generator weights: " + path.string());
  long base = it->second.shape[0];
  GanParams p = init_gan_params(base, 0);
  for (auto& [name, var] : p.named_params()) {
    auto f = tensors.find(name);
    if (f == tensors.end()) throw IoError("checkpoint missing tensor '" + name + "'");
    if (f->second.shape != var->value.shape)
      throw IoError("checkpoint shape mismatch for '" + name + "'");
    var->value = f->second;
  }
  for (std::size_t i = 0; i < p.disc.size(); ++i) {
    auto f = tensors.find("d.conv" + std::to_string(i) + ".sn_u");
    if (f != tensors.end()) p.disc[i].sn.u = f->second.data;
  }
  return p;
}

// ---- training -------------------------------------------------------------------

struct StepMetrics {
  long step = 0;
  double loss_d = 0.0;
  double loss_adv = 0.0;
  double recon = 0.0;
};

struct TrainResult {
  GanParams params;
  std::vector<StepMetrics> history;
};

namespace gan_detail {

struct TrainBatch {
  ad::Tensor u, m_template, m_original, x_a, x_p;
};

inline ad::Tensor random_crop_tensor(const std::vector<LabeledImage>& dataset, long crop, Rng& rng) {
  const LabeledImage& img = dataset[rng.index(dataset.size())];
  if (img.height() < crop || img.width() < crop) throw Error("train: image smaller than crop");
  int y0 = static_cast<int>(rng.index(img.height() - crop + 1));
  int x0 = static_cast<int>(rng.index(img.width() - crop + 1));
  return image_to_tensor(crop_labeled(img, x0, y0, static_cast<int>(crop), static_cast<int>(crop)).pixels);
}

// u is built by the compositor on a random crop; masks come along with it.
inline TrainBatch make_batch(const std::vector<LabeledImage>& dataset, const InstanceBank& bank,
                             long crop, const CompositorConfig& ccfg, Rng& rng) {
  TrainBatch b;
  for (int tries = 0; tries < 32; ++tries) {
    const LabeledImage& img = dataset[rng.index(dataset.size())];
    if (img.height() < crop || img.width() < crop) continue;
    int y0 = static_cast<int>(rng.index(img.height() - crop + 1));
    int x0 = static_cast<int>(rng.index(img.width() - crop + 1));
    LabeledImage window = crop_labeled(img, x0, y0, static_cast<int>(crop), static_cast<int>(crop));
    if (foreground_area(window.labels) == 0) continue;

    PlacementPlan plan;
    try {
      plan = propose_placements(window, bank, ccfg, rng);
    } catch (const Error&) {
      continue;
    }
    if (plan.placements.empty()) continue;
    LabeledImage augmented = apply_plan(window, plan);

    b.u = image_to_tensor(augmented.pixels);
    b.m_template = mask_to_tensor(plan.template_mask);
    // original-instance region still visible after pasting: disjoint from M
    Mask orig(static_cast<int>(crop), static_cast<int>(crop));
    for (int y = 0; y < orig.h; ++y)
      for (int x = 0; x < orig.w; ++x)
        orig.at(y, x) = window.labels.at(y, x) != 0 && !plan.template_mask.at(y, x) ? 1 : 0;
    if (orig.area() == 0) continue;
    b.m_original = mask_to_tensor(orig);
    b.x_a = random_crop_tensor(dataset, crop, rng);
    b.x_p = random_crop_tensor(dataset, crop, rng);
    return b;
  }
  throw Error("train: could not assemble a batch (no crops with instances?)");
}

}  // namespace gan_detail

// Alternating 1 D-step / 1 G-step; deterministic given cfg.seed.
inline TrainResult train(const std::vector<LabeledImage>& dataset, const InstanceBank& bank,
                         const GanConfig& cfg, const CompositorConfig& compositor_cfg = {},
                         std::ostream* metrics_csv = nullptr) {
  cfg.validate();
  if (dataset.empty()) throw Error("train: empty dataset");
  TrainResult result;
  result.params = init_gan_params(cfg.base_channels, cfg.seed);
  GanParams& p = result.params;

  Rng rng(splitmix64(cfg.seed));
  ad::Adam opt_d(cfg.lr_d), opt_g(cfg.lr_g);
  auto d_params = p.discriminator_params();
  auto g_params = p.generator_params();

  if (metrics_csv) *metrics_csv << "step,loss_d,loss_adv,recon\n";

  for (long step = 1; step <= cfg.steps; ++step) {
    auto batch = gan_detail::make_batch(dataset, bank, cfg.crop, compositor_cfg, rng);

    // one generator forward per step; its value feeds the D step as a
    // constant, its tape feeds the G step
    ad::Var u_const = ad::constant(batch.u);
    GeneratorOut gen = generator_forward(p, u_const, batch.m_template, batch.m_original);
    ad::Var s_u_const = ad::constant(compose(u_const, ad::constant(gen.g->value), batch.m_template)->value);

    auto d_weights = discriminator_weights(p, /*update_u=*/true);
    ad::Var da = discriminator_forward(p, d_weights, ad::constant(batch.x_a));
    ad::Var dp = discriminator_forward(p, d_weights, ad::constant(batch.x_p));
    ad::Var dn = discriminator_forward(p, d_weights, s_u_const);
    ad::Var ld = loss_d(da, dp, dn, cfg.margin);
    if (!std::isfinite(ld->value.item())) throw Error("train: non-finite discriminator loss");
    ad::backward(ld);
    opt_d.step(d_params);
    ad::zero_grads(d_params);
    ad::zero_grads(g_params);

    // --- generator step (reuses the forward tape; D weights re-normalized
    // after the D update)
    ad::Var s_u = compose(u_const, gen.g, batch.m_template);
    auto d_weights2 = discriminator_weights(p, /*update_u=*/false);
    ad::Var da2 = discriminator_forward(p, d_weights2, ad::constant(batch.x_a));
    ad::Var dp2 = discriminator_forward(p, d_weights2, ad::constant(batch.x_p));
    ad::Var dsu = discriminator_forward(p, d_weights2, s_u);
    ad::Var adv = ad::sub(patch_distance(da2, dsu), patch_distance(da2, dp2));
    ad::Var recon = ad::mean_abs_diff(u_const, gen.g);
    ad::Var lg = ad::add(adv, ad::scalar_mul(recon, cfg.lambda));
    if (!std::isfinite(lg->value.item())) throw Error("train: non-finite generator loss");
    ad::backward(lg);
    opt_g.step(g_params);
    ad::zero_grads(g_params);
    ad::zero_grads(d_params);

    StepMetrics m{step, ld->value.item(), adv->value.item(), recon->value.item()};
    result.history.push_back(m);
    if (metrics_csv)
      *metrics_csv << m.step << ',' << m.loss_d << ',' << m.loss_adv << ',' << m.recon << '\n';
  }
  return result;
}

// ---- inference ---------------------------------------------------------------------

namespace gan_detail {

inline long pad_to(long v, long mult) { return (v + mult - 1) / mult * mult; }

inline ad::Tensor pad_reflect(const ad::Tensor& t, long H2, long W2) {
  long C = t.shape[1], H = t.shape[2], W = t.shape[3];
  ad::Tensor out({1, C, H2, W2});
  auto reflect = [](long i, long n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
    return i;
  };
  for (long c = 0; c < C; ++c)
    for (long y = 0; y < H2; ++y)
      for (long x = 0; x < W2; ++x)
        out.data[(c * H2 + y) * W2 + x] = t.data[(c * H + reflect(y, H)) * W + reflect(x, W)];
  return out;
}

}  // namespace gan_detail

// Re-renders the template region through the generator; pixels outside the
// mask and the label map are returned untouched.
inline LabeledImage smooth(const LabeledImage& img, const Mask& template_mask, const GanParams& params) {
  img.validate();
  if (template_mask.h != img.height() || template_mask.w != img.width())
    throw ShapeError("smooth: mask extents mismatch");
  if (template_mask.area() == 0) return img;

  long H = img.height(), W = img.width();
  long H2 = gan_detail::pad_to(H, 16), W2 = gan_detail::pad_to(W, 16);

  ad::Tensor u = image_to_tensor(img.pixels);
  ad::Tensor mt = mask_to_tensor(template_mask);
  Mask orig(static_cast<int>(H), static_cast<int>(W));
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      orig.at(y, x) = img.labels.at(y, x) != 0 && !template_mask.at(y, x) ? 1 : 0;
  ad::Tensor mo = mask_to_tensor(orig);

  if (H2 != H || W2 != W) {
    u = gan_detail::pad_reflect(u, H2, W2);
    // masks are zero-padded: no template or original region in the margin
    auto zpad = [&](const ad::Tensor& t) {
      ad::Tensor out({1, 1, H2, W2});
      for (long y = 0; y < H; ++y)
        for (long x = 0; x < W; ++x) out.data[y * W2 + x] = t.data[y * W + x];
      return out;
    };
    mt = zpad(mt);
    mo = zpad(mo);
  }

  ad::Var u_var = ad::constant(u);
  GeneratorOut gen = generator_forward(params, u_var, mt, mo);
  ad::Var s_u = compose(u_var, gen.g, mt);

  // crop back and quantize; compose guarantees bit-identity outside M
  ad::Tensor out_t({1, 3, H, W});
  for (long c = 0; c < 3; ++c)
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x)
        out_t.data[(c * H + y) * W + x] = s_u->value.data[(c * H2 + y) * W2 + x];

  LabeledImage out = img;
  Image8 rendered = tensor_to_image(out_t);
  // only template-region pixels may change
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (template_mask.at(y, x))
        for (int c = 0; c < 3; ++c) out.pixels.at(y, x, c) = rendered.at(y, x, c);
  return out;
}

}  // namespace insmix
