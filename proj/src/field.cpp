#include "sv3d/field.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace sv3d::field {

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    n += std::size_t(widths[l + 1]) * widths[l] + widths[l + 1];
  return n;
}

namespace {

// Weights row-major (out x in) then bias, layer by layer.
std::size_t layer_offset(const MlpSpec& spec, int layer) {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l)
    off += std::size_t(spec.widths[l + 1]) * spec.widths[l] + spec.widths[l + 1];
  return off;
}

// Fixed-size workspace: widths and depth are small and bounded, so the
// hot path never touches the heap.
constexpr int kMaxWidth = 128;
constexpr int kMaxLayers = 8;

struct MlpCache {
  double act[kMaxLayers + 1][kMaxWidth];  // act[l] = input to layer l
  double pre[kMaxLayers][kMaxWidth];      // pre[l] = pre-activation of layer l
};

void mlp_forward(const MlpSpec& spec, const double* params, const double* x, MlpCache& cache,
                 double* out) {
  int L = spec.layers();
  std::copy(x, x + spec.widths[0], cache.act[0]);
  std::size_t off = 0;
  for (int l = 0; l < L; ++l) {
    int nin = spec.widths[l], nout = spec.widths[l + 1];
    const double* W = params + off;
    const double* b = W + std::size_t(nout) * nin;
    const double* a = cache.act[l];
    for (int o = 0; o < nout; ++o) {
      double z = b[o];
      const double* w = W + std::size_t(o) * nin;
      for (int i = 0; i < nin; ++i) z += w[i] * a[i];
      cache.pre[l][o] = z;
    }
    if (l + 1 < L)
      for (int o = 0; o < nout; ++o) cache.act[l + 1][o] = softplus(cache.pre[l][o]);
    off += std::size_t(nout) * nin + nout;
  }
  std::copy(cache.pre[L - 1], cache.pre[L - 1] + spec.widths[L], out);
}

// d_out is the adjoint of the (linear) output; accumulates into
// grad_params and returns the input adjoint in d_in.
void mlp_backward(const MlpSpec& spec, const double* params, const MlpCache& cache,
                  const double* d_out, double* grad_params, double* d_in) {
  int L = spec.layers();
  double dz[kMaxWidth], da[kMaxWidth];
  std::copy(d_out, d_out + spec.widths[L], dz);
  for (int l = L - 1; l >= 0; --l) {
    int nin = spec.widths[l], nout = spec.widths[l + 1];
    std::size_t off = layer_offset(spec, l);
    const double* W = params + off;
    double* gW = grad_params + off;
    double* gb = gW + std::size_t(nout) * nin;
    const double* a = cache.act[l];
    std::fill(da, da + nin, 0.0);
    for (int o = 0; o < nout; ++o) {
      double g = dz[o];
      gb[o] += g;
      double* gw = gW + std::size_t(o) * nin;
      const double* w = W + std::size_t(o) * nin;
      for (int i = 0; i < nin; ++i) {
        gw[i] += g * a[i];
        da[i] += g * w[i];
      }
    }
    if (l > 0) {
      for (int i = 0; i < nin; ++i) dz[i] = da[i] * sigmoid(cache.pre[l - 1][i]);
    } else {
      std::copy(da, da + nin, d_in);
    }
  }
}

// Bilinear lookup context on one plane.
struct PlaneCtx {
  int i0, j0;       // lower cell corner (u, v)
  double fu, fv;    // fractional position in the cell
  double dscale_u;  // d(u)/d(world coord), 0 when clamped
  double dscale_v;
};

PlaneCtx plane_ctx(double a, double b, int R) {
  PlaneCtx c;
  double ac = std::clamp(a, -1.0, 1.0);
  double bc = std::clamp(b, -1.0, 1.0);
  double u = (ac + 1.0) * 0.5 * (R - 1);
  double v = (bc + 1.0) * 0.5 * (R - 1);
  c.i0 = std::clamp(int(std::floor(u)), 0, R - 2);
  c.j0 = std::clamp(int(std::floor(v)), 0, R - 2);
  c.fu = u - c.i0;
  c.fv = v - c.j0;
  c.dscale_u = (std::abs(a) < 1.0) ? 0.5 * (R - 1) : 0.0;
  c.dscale_v = (std::abs(b) < 1.0) ? 0.5 * (R - 1) : 0.0;
  return c;
}

// world-axis indices feeding each plane's (u, v)
constexpr int kPlaneAxes[3][2] = {{0, 1}, {0, 2}, {1, 2}};

}  // namespace

TriplaneField::TriplaneField(int resolution, int feature_dim, MlpSpec density_spec,
                             MlpSpec color_spec)
    : resolution_(resolution),
      feature_dim_(feature_dim),
      density_spec_(std::move(density_spec)),
      color_spec_(std::move(color_spec)) {
  init_layout();
}

TriplaneField::TriplaneField(int resolution, int feature_dim, int hidden_width, std::uint64_t seed)
    : resolution_(resolution), feature_dim_(feature_dim) {
  int fin = 3 * feature_dim;
  density_spec_.widths = {fin, hidden_width, hidden_width, 1};
  color_spec_.widths = {fin, hidden_width, hidden_width, hidden_width, 3};
  init_layout();

  Rng rng(seed);
  for (std::size_t i = 0; i < plane_param_count(); ++i) params_[i] = rng.uniform(-0.01, 0.01);
  auto init_head = [&](const MlpSpec& spec, std::size_t base) {
    for (int l = 0; l < spec.layers(); ++l) {
      int nin = spec.widths[l], nout = spec.widths[l + 1];
      double std = std::sqrt(2.0 / nin);
      double* W = params_.data() + base + layer_offset(spec, l);
      for (int i = 0; i < nout * nin; ++i) W[i] = rng.normal() * std;
      // biases start at zero
    }
  };
  init_head(density_spec_, density_offset_);
  init_head(color_spec_, color_offset_);
  // start near-transparent: softplus(-6) ~ 0.0025 keeps initial renders
  // at alpha < 0.05 over the full ray span even with the random
  // plane/hidden-layer spread
  params_[density_head_end() - 1] = -6.0;
}

void TriplaneField::init_layout() {
  for (const MlpSpec* s : {&density_spec_, &color_spec_}) {
    if (s->layers() > kMaxLayers) throw std::invalid_argument("mlp too deep");
    for (int w : s->widths)
      if (w > kMaxWidth) throw std::invalid_argument("mlp layer too wide");
  }
  density_offset_ = plane_param_count();
  color_offset_ = density_offset_ + density_spec_.param_count();
  params_.assign(color_offset_ + color_spec_.param_count(), 0.0);
  grads_.assign(params_.size(), 0.0);
}

std::size_t TriplaneField::plane_param_count() const {
  return 3 * std::size_t(resolution_) * resolution_ * feature_dim_;
}

void TriplaneField::zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

void TriplaneField::sample_feature(const Vec3& p, double* out3f) const {
  int R = resolution_, F = feature_dim_;
  std::size_t plane_sz = std::size_t(R) * R * F;
  for (int pl = 0; pl < 3; ++pl) {
    PlaneCtx c = plane_ctx(p[kPlaneAxes[pl][0]], p[kPlaneAxes[pl][1]], R);
    const double* plane = params_.data() + pl * plane_sz;
    for (int f = 0; f < F; ++f) {
      auto node = [&](int i, int j) { return plane[(std::size_t(j) * R + i) * F + f]; };
      double v = (1 - c.fv) * ((1 - c.fu) * node(c.i0, c.j0) + c.fu * node(c.i0 + 1, c.j0)) +
                 c.fv * ((1 - c.fu) * node(c.i0, c.j0 + 1) + c.fu * node(c.i0 + 1, c.j0 + 1));
      out3f[pl * F + f] = v;
    }
  }
}

namespace {

// Shared feature VJP: given d(feature), accumulate plane gradients and
// optionally the position adjoint.
void feature_vjp(const TriplaneField& field, const std::vector<double>& params, const Vec3& p,
                 const double* d_feat, std::vector<double>& grads, Vec3* d_pos) {
  int R = field.resolution(), F = field.feature_dim();
  std::size_t plane_sz = std::size_t(R) * R * F;
  for (int pl = 0; pl < 3; ++pl) {
    int ax_u = kPlaneAxes[pl][0], ax_v = kPlaneAxes[pl][1];
    PlaneCtx c = plane_ctx(p[ax_u], p[ax_v], R);
    const double* plane = params.data() + pl * plane_sz;
    double* gplane = grads.data() + pl * plane_sz;
    for (int f = 0; f < F; ++f) {
      double g = d_feat[pl * F + f];
      if (g == 0.0) continue;
      auto idx = [&](int i, int j) { return (std::size_t(j) * R + i) * F + f; };
      gplane[idx(c.i0, c.j0)] += g * (1 - c.fu) * (1 - c.fv);
      gplane[idx(c.i0 + 1, c.j0)] += g * c.fu * (1 - c.fv);
      gplane[idx(c.i0, c.j0 + 1)] += g * (1 - c.fu) * c.fv;
      gplane[idx(c.i0 + 1, c.j0 + 1)] += g * c.fu * c.fv;
      if (d_pos) {
        double v00 = plane[idx(c.i0, c.j0)], v10 = plane[idx(c.i0 + 1, c.j0)];
        double v01 = plane[idx(c.i0, c.j0 + 1)], v11 = plane[idx(c.i0 + 1, c.j0 + 1)];
        double dv_du = (1 - c.fv) * (v10 - v00) + c.fv * (v11 - v01);
        double dv_dv = (1 - c.fu) * (v01 - v00) + c.fu * (v11 - v10);
        (*d_pos)[ax_u] += g * dv_du * c.dscale_u;
        (*d_pos)[ax_v] += g * dv_dv * c.dscale_v;
      }
    }
  }
}

}  // namespace

double TriplaneField::density(const Vec3& p) const {
  double feat[kMaxWidth];
  sample_feature(p, feat);
  MlpCache cache;
  double z;
  mlp_forward(density_spec_, params_.data() + density_offset_, feat, cache, &z);
  return softplus(z);
}

Vec3 TriplaneField::color(const Vec3& p) const {
  double feat[kMaxWidth];
  sample_feature(p, feat);
  MlpCache cache;
  double z[3];
  mlp_forward(color_spec_, params_.data() + color_offset_, feat, cache, z);
  return Vec3(sigmoid(z[0]), sigmoid(z[1]), sigmoid(z[2]));
}

double TriplaneField::density_vjp(const Vec3& p, double d_sigma, std::vector<double>& grads,
                                  Vec3* d_pos) const {
  double feat[kMaxWidth];
  sample_feature(p, feat);
  MlpCache cache;
  double z;
  mlp_forward(density_spec_, params_.data() + density_offset_, feat, cache, &z);
  double sigma = softplus(z);
  double dz = d_sigma * sigmoid(z);  // d softplus
  double d_feat[kMaxWidth];
  mlp_backward(density_spec_, params_.data() + density_offset_, cache, &dz,
               grads.data() + density_offset_, d_feat);
  feature_vjp(*this, params_, p, d_feat, grads, d_pos);
  return sigma;
}

Vec3 TriplaneField::color_vjp(const Vec3& p, const Vec3& d_rgb, std::vector<double>& grads,
                              Vec3* d_pos) const {
  double feat[kMaxWidth];
  sample_feature(p, feat);
  MlpCache cache;
  double z[3];
  mlp_forward(color_spec_, params_.data() + color_offset_, feat, cache, z);
  Vec3 rgb(sigmoid(z[0]), sigmoid(z[1]), sigmoid(z[2]));
  double dz[3];
  for (int c = 0; c < 3; ++c) dz[c] = d_rgb[c] * rgb[c] * (1.0 - rgb[c]);  // d sigmoid
  double d_feat[kMaxWidth];
  mlp_backward(color_spec_, params_.data() + color_offset_, cache, dz,
               grads.data() + color_offset_, d_feat);
  feature_vjp(*this, params_, p, d_feat, grads, d_pos);
  return rgb;
}

namespace {

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}
void push_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  push_u32(out, bits);
}

struct ByteReader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
  std::uint32_t u32() {
    if (pos + 4 > bytes.size()) throw TruncatedPayload();
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

std::vector<std::uint8_t> TriplaneField::serialize() const {
  std::vector<std::uint8_t> out;
  out.push_back('P');
  out.push_back('R');
  out.push_back('G');
  out.push_back('M');
  push_u32(out, 1);  // format version
  push_u32(out, std::uint32_t(resolution_));
  push_u32(out, std::uint32_t(feature_dim_));
  auto push_spec = [&](const MlpSpec& s) {
    push_u32(out, std::uint32_t(s.layers()));
    for (int w : s.widths) push_u32(out, std::uint32_t(w));
  };
  push_spec(density_spec_);
  push_spec(color_spec_);
  for (double v : params_) push_f32(out, float(v));
  return out;
}

TriplaneField TriplaneField::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || bytes[0] != 'P' || bytes[1] != 'R' || bytes[2] != 'G' || bytes[3] != 'M')
    throw BadMagic();
  ByteReader rd{bytes, 4};
  if (rd.u32() != 1) throw VersionMismatch();
  int R = int(rd.u32());
  int F = int(rd.u32());
  auto read_spec = [&]() {
    MlpSpec s;
    int layers = int(rd.u32());
    s.widths.resize(layers + 1);
    for (int& w : s.widths) w = int(rd.u32());
    return s;
  };
  MlpSpec dspec = read_spec();
  MlpSpec cspec = read_spec();
  TriplaneField f(R, F, dspec, cspec);
  for (double& v : f.params_) v = rd.f32();
  return f;
}

BakedField::BakedField(const RadianceField& src, int resolution) : res_(resolution) {
  int n = res_ + 1;
  data_.resize(std::size_t(n) * n * n * 4);
  parallel_ranges(std::size_t(n) * n * n, 64, [&](std::size_t lo, std::size_t hi, int) {
    for (std::size_t idx = lo; idx < hi; ++idx) {
      int i = int(idx % n);
      int j = int((idx / n) % n);
      int k = int(idx / (std::size_t(n) * n));
      Vec3 p(-1.0 + 2.0 * i / res_, -1.0 + 2.0 * j / res_, -1.0 + 2.0 * k / res_);
      double* d = data_.data() + idx * 4;
      d[0] = src.density(p);
      Vec3 c = src.color(p);
      d[1] = c[0];
      d[2] = c[1];
      d[3] = c[2];
    }
  });
}

double BakedField::fetch(int i, int j, int k, int c) const {
  int n = res_ + 1;
  return data_[((std::size_t(k) * n + j) * n + i) * 4 + c];
}

namespace {
struct TriCtx {
  int i0[3];
  double f[3];
};
}  // namespace

double BakedField::density(const Vec3& p) const {
  TriCtx c;
  for (int a = 0; a < 3; ++a) {
    double u = (std::clamp(p[a], -1.0, 1.0) + 1.0) * 0.5 * res_;
    c.i0[a] = std::clamp(int(std::floor(u)), 0, res_ - 1);
    c.f[a] = u - c.i0[a];
  }
  double acc = 0.0;
  for (int di = 0; di < 2; ++di)
    for (int dj = 0; dj < 2; ++dj)
      for (int dk = 0; dk < 2; ++dk) {
        double w = (di ? c.f[0] : 1 - c.f[0]) * (dj ? c.f[1] : 1 - c.f[1]) *
                   (dk ? c.f[2] : 1 - c.f[2]);
        acc += w * fetch(c.i0[0] + di, c.i0[1] + dj, c.i0[2] + dk, 0);
      }
  return acc;
}

Vec3 BakedField::color(const Vec3& p) const {
  TriCtx c;
  for (int a = 0; a < 3; ++a) {
    double u = (std::clamp(p[a], -1.0, 1.0) + 1.0) * 0.5 * res_;
    c.i0[a] = std::clamp(int(std::floor(u)), 0, res_ - 1);
    c.f[a] = u - c.i0[a];
  }
  Vec3 acc = Vec3::Zero();
  for (int di = 0; di < 2; ++di)
    for (int dj = 0; dj < 2; ++dj)
      for (int dk = 0; dk < 2; ++dk) {
        double w = (di ? c.f[0] : 1 - c.f[0]) * (dj ? c.f[1] : 1 - c.f[1]) *
                   (dk ? c.f[2] : 1 - c.f[2]);
        for (int ch = 0; ch < 3; ++ch)
          acc[ch] += w * fetch(c.i0[0] + di, c.i0[1] + dj, c.i0[2] + dk, 1 + ch);
      }
  return acc;
}

}  // namespace sv3d::field
