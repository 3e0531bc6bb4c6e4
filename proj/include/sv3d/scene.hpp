#pragma once

#include "sv3d/common.hpp"
#include "sv3d/geometry.hpp"
#include "sv3d/meshing.hpp"
#include "sv3d/render.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sv3d::scene {

// SDF composition tree. Primitives are exact signed distances
// (negative inside); union takes the pointwise minimum.
struct SdfNode {
  enum class Kind { Sphere, Box, Torus, Union } kind;
  Vec3 center = Vec3::Zero();
  double radius = 0.5;        // sphere
  Vec3 half_extents;          // box
  double major = 0.4, minor = 0.1;  // torus (axis z)
  std::vector<SdfNode> children;

  static SdfNode sphere(const Vec3& c, double r);
  static SdfNode box(const Vec3& c, const Vec3& he);
  static SdfNode torus(const Vec3& c, double major, double minor);
  static SdfNode join(std::vector<SdfNode> children);
};

double sdf_eval(const SdfNode& node, const Vec3& p);

struct ColorFn {
  enum class Kind { Checker, AxisGradient } kind = Kind::Checker;
  double period = 0.25;
  Vec3 color_a = Vec3(0.9, 0.3, 0.2);
  Vec3 color_b = Vec3(0.2, 0.4, 0.9);
  Vec3 eval(const Vec3& p) const;
};

// Analytic ground-truth radiance field: density is a sigmoid ramp of
// the SDF, sigma_max / (1 + exp(sdf / width)).
class AnalyticScene : public RadianceField {
 public:
  SdfNode sdf;
  ColorFn color_fn;
  double sigma_max = 50.0;
  double width = 0.01;
  std::string preset = "custom";

  double density(const Vec3& p) const override;
  Vec3 color(const Vec3& p) const override;

  // Exact ray-interval hit test where the primitive supports it
  // (sphere/box/union); empty when only the alpha-threshold fallback
  // applies (torus).
  std::optional<bool> exact_hit(const geometry::Ray& ray) const;
};

// Shipped presets: sphere, box, torus, composite (azimuth-asymmetric
// sphere + offset box with checker texture).
AnalyticScene make_preset(const std::string& name);

struct OracleView {
  render::RenderedView view;
  Image mask;  // exact silhouette where available, else alpha > 0.5
};

// Same quadrature code path as the volume renderer, fed the analytic
// field.
OracleView render_oracle(const AnalyticScene& scene, const geometry::CameraPose& pose,
                         int n_samples, std::uint64_t seed);

// Condition-image augmentation hooks.
Image augment_noise(const Image& img, double sigma, Rng& rng);
Image augment_resize(const Image& img, double scale);

// Ground-truth mesh: marching cubes on the exact SDF at iso 0.
meshing::TriMesh oracle_mesh(const AnalyticScene& scene, int G);

struct ObservationSet {
  std::vector<render::Observation> observations;
  std::vector<geometry::CameraPose> ground_truth_poses;
};

struct AugmentConfig {
  bool enabled = false;
  double noise_sigma = 0.02;  // in [0, 0.05]
  double resize_scale = 1.0;  // in [0.5, 1]
};

ObservationSet make_observations(const AnalyticScene& scene,
                                 const std::vector<geometry::CameraPose>& poses, int n_samples,
                                 const AugmentConfig& augment, std::uint64_t seed);

}  // namespace sv3d::scene
