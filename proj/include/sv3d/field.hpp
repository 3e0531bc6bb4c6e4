#pragma once

#include "sv3d/common.hpp"

#include <cstdint>
#include <vector>

namespace sv3d::field {

struct BadMagic : std::runtime_error {
  BadMagic() : std::runtime_error("field checkpoint: bad magic") {}
};
struct VersionMismatch : std::runtime_error {
  VersionMismatch() : std::runtime_error("field checkpoint: unsupported format version") {}
};
struct TruncatedPayload : std::runtime_error {
  TruncatedPayload() : std::runtime_error("field checkpoint: truncated payload") {}
};

double softplus(double x);
double sigmoid(double x);

// Fully-connected head with softplus hidden activations and a linear
// output layer; widths[0] is the input size, widths.back() the output.
struct MlpSpec {
  std::vector<int> widths;
  std::size_t param_count() const;
  int layers() const { return int(widths.size()) - 1; }
};

// Triplane radiance field over [-1,1]^3: three feature planes whose
// concatenated bilinear samples feed a density head (softplus output)
// and a color head (sigmoid output). All parameters live in one flat
// vector with a same-shape gradient accumulator.
class TriplaneField : public RadianceField {
 public:
  TriplaneField(int resolution, int feature_dim, int hidden_width, std::uint64_t seed);
  TriplaneField(int resolution, int feature_dim, MlpSpec density_spec, MlpSpec color_spec);

  int resolution() const { return resolution_; }
  int feature_dim() const { return feature_dim_; }
  const MlpSpec& density_spec() const { return density_spec_; }
  const MlpSpec& color_spec() const { return color_spec_; }

  double density(const Vec3& p) const override;
  Vec3 color(const Vec3& p) const override;
  void sample_feature(const Vec3& p, double* out3f) const;

  // Reverse-mode: accumulates d(loss)/d(params) into `grads` given the
  // adjoint of the activated output; optionally also returns the
  // adjoint of the query position. Returns the forward value.
  double density_vjp(const Vec3& p, double d_sigma, std::vector<double>& grads,
                     Vec3* d_pos = nullptr) const;
  Vec3 color_vjp(const Vec3& p, const Vec3& d_rgb, std::vector<double>& grads,
                 Vec3* d_pos = nullptr) const;

  std::vector<double>& values() { return params_; }
  const std::vector<double>& values() const { return params_; }
  std::vector<double>& grads() { return grads_; }
  void zero_grads();

  std::size_t param_count() const { return params_.size(); }
  std::size_t plane_param_count() const;
  std::size_t density_head_begin() const { return density_offset_; }
  std::size_t density_head_end() const { return density_offset_ + density_spec_.param_count(); }
  std::size_t color_head_begin() const { return color_offset_; }
  std::size_t color_head_end() const { return color_offset_ + color_spec_.param_count(); }

  // "PRGM" little-endian binary checkpoint, format version 1, float32
  // parameters.
  std::vector<std::uint8_t> serialize() const;
  static TriplaneField deserialize(const std::vector<std::uint8_t>& bytes);

 private:
  int resolution_;
  int feature_dim_;
  MlpSpec density_spec_;
  MlpSpec color_spec_;
  std::size_t density_offset_ = 0;
  std::size_t color_offset_ = 0;
  std::vector<double> params_;
  std::vector<double> grads_;

  void init_layout();
};

// Dense voxel cache of any radiance field over [-1,1]^3 with trilinear
// interpolation; used where many cheap lookups of a frozen field are
// needed (pose inversion).
class BakedField : public RadianceField {
 public:
  BakedField(const RadianceField& src, int resolution);
  double density(const Vec3& p) const override;
  Vec3 color(const Vec3& p) const override;

 private:
  int res_;
  std::vector<double> data_;  // (res+1)^3 * 4: sigma, r, g, b
  double fetch(int i, int j, int k, int c) const;
};

}  // namespace sv3d::field
