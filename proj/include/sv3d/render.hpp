#pragma once

#include "sv3d/common.hpp"
#include "sv3d/field.hpp"
#include "sv3d/geometry.hpp"

#include <vector>

namespace sv3d::render {

struct InsufficientViews : std::runtime_error {
  InsufficientViews() : std::runtime_error("fit_field: need at least 2 observations") {}
};

// Strictly ascending quadrature depths along one ray.
struct RaySamples {
  std::vector<double> t;      // sample depths
  std::vector<double> delta;  // delta[k] = t[k+1]-t[k], last one t_far - t[N-1]
};

// One uniform sample per equal-width bin of [t_near, t_far].
RaySamples stratified_samples(const geometry::Ray& ray, int n, Rng& rng);

struct RayShade {
  Vec3 rgb = Vec3::Zero();
  double alpha = 0.0;
  double depth = 0.0;
};

// Volume rendering quadrature: C = sum_i T_i (1 - exp(-sigma_i delta_i)) c_i,
// T_i = exp(-sum_{j<i} sigma_j delta_j). Black background; depth is the
// alpha-normalized expected termination depth.
RayShade render_ray(const RadianceField& field, const geometry::Ray& ray,
                    const RaySamples& samples);

// Reverse pass of render_ray for a triplane field: accumulates exact
// adjoints of every parameter (including through the transmittance
// prefix sums) into `grads`.
RayShade render_ray_vjp(const field::TriplaneField& field, const geometry::Ray& ray,
                        const RaySamples& samples, const Vec3& d_rgb, double d_alpha,
                        double d_depth, std::vector<double>& grads);

struct RenderedView {
  Image rgb;    // H x W x 3, linear [0,1]
  Image depth;  // H x W
  Image alpha;  // H x W
  geometry::CameraPose pose;
};

RenderedView render_view(const RadianceField& field, const geometry::CameraPose& pose,
                         int n_samples, std::uint64_t seed);

// 3-level image-pyramid MSE standing in for a learned perceptual metric.
double perceptual_proxy(const Image& a, const Image& b);
void perceptual_proxy_vjp(const Image& a, const Image& b, double d_out, Image& d_a_accum);

// L_vol = MSE_rgb + lambda_p * perceptual_proxy
double loss_vol(const RenderedView& rendered, const Image& target, double lambda_p);

struct Observation {
  geometry::CameraPose pose;
  Image rgb;
  Image mask;   // H x W, 0/1 foreground
  Image depth;  // optional (empty when absent)
};

// Full-image L_vol over all observations plus its exact parameter
// gradient; targets are composited on black via their masks.
double loss_and_grad_vol(const field::TriplaneField& field,
                         const std::vector<Observation>& observations, int n_samples,
                         std::uint64_t seed, double lambda_p, std::vector<double>& grads);

struct FitConfig {
  int steps = 2000;
  int batch_rays = 512;
  int n_samples = 32;
  double lr = 1e-2;
  double lr_min = 1e-4;
  double lambda_p = 0.5;  // applied in full-image loss evaluation
  // silhouette supervision on batch rays: lambda_m * (alpha - mask)^2,
  // applied only where the 3x3 mask neighborhood is uniform (at the
  // silhouette boundary the true alpha is fractional and a binary
  // target would bias it). Without it, black-colored floaters are
  // photometrically invisible against the black background.
  double lambda_m = 1.0;
  // visual-hull carving: density at sampled points that project
  // outside the silhouette in at least one view is provably free space
  // and is penalized by lambda_h * sigma. Never biases the object.
  double lambda_h = 0.1;
  int hull_points = 256;
  // stochastic density-sparsity term: lambda_s * mean sigma over
  // uniformly sampled points, for floaters inside the visual hull.
  // 0 disables (default: carving alone is usually enough and sparsity
  // biases the interior).
  double lambda_s = 0.0;
  int sparsity_points = 128;
  std::uint64_t seed = 0;
  int field_resolution = 32;
  int field_feature_dim = 4;
  int field_hidden_width = 32;
};

struct FitResult {
  field::TriplaneField field;
  std::vector<double> loss_curve;  // per-step batch loss
};

// Stage-one training: per-scene optimization of the volume-rendering
// loss on random ray batches.
FitResult fit_field(const std::vector<Observation>& observations, const FitConfig& config);

}  // namespace sv3d::render
