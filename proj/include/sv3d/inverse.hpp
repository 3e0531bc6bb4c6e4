#pragma once

#include "sv3d/common.hpp"
#include "sv3d/field.hpp"
#include "sv3d/geometry.hpp"
#include "sv3d/render.hpp"

#include <vector>

namespace sv3d::inverse {

struct NonFiniteLoss : std::runtime_error {
  NonFiniteLoss() : std::runtime_error("invert_pose: render produced non-finite loss") {}
};

struct PoseEstimate {
  geometry::CameraPose pose;
  double final_loss = 0.0;
  int start_index = 0;
  int iterations = 0;
};

struct InvertPoseConfig {
  std::vector<geometry::CameraPose> starts;  // empty -> default_starts()
  int opt_size = 24;       // render resolution during optimization
  // quadrature samples during optimization; below ~32 the fixed-jitter
  // surrogate flattens near the optimum and angular recovery degrades
  int n_samples = 32;
  int max_steps = 150;
  double lr = 0.02;
  double early_stop_improvement = 1e-6;
  int early_stop_window = 20;
  // Dense trilinear bake of the field used as the optimization-time
  // renderer; 0 queries the field directly.
  int bake_resolution = 128;
  std::uint64_t seed = 0;
};

// 24 starts: 8 azimuths 45 degrees apart x elevations {-30, 0, +30},
// roll 0, radius 1.5.
std::vector<geometry::CameraPose> default_starts(const geometry::CameraPose& like = {});

// Photometric pose inversion: per start, minimizes
// L_pos(p) = 0.5 MSE_rgb + 0.5 MSE_mask between render_view(field, p)
// and the target over (azimuth, elevation, roll, radius); the field is
// never mutated. Returns the minimum-final-loss start.
PoseEstimate invert_pose(const RadianceField& field, const render::Observation& target,
                         const InvertPoseConfig& config);

// Per-start final losses alongside the winner (the winner's loss is the
// minimum; ties keep the lowest start index).
PoseEstimate invert_pose(const RadianceField& field, const render::Observation& target,
                         const InvertPoseConfig& config, std::vector<double>& start_losses);

struct RefineAppearanceConfig {
  int steps = 200;
  int n_samples = 32;
  double lr = 5e-3;
  double lambda_p = 0.5;
  std::uint64_t seed = 0;
};

struct RefinementReport {
  std::vector<double> mse_before;
  std::vector<double> mse_after;
  int steps = 0;
  bool planes_changed = false;
  bool color_head_changed = false;
  bool density_head_changed = false;  // contract: always false
};

// View-guided texture refinement: minimizes
// L_tex = MSE_rgb + lambda_p * perceptual_proxy over the planes and the
// color head only; the density head stays bit-identical. Returns the
// running-minimum-loss parameters.
std::pair<field::TriplaneField, RefinementReport> refine_appearance(
    const field::TriplaneField& field,
    const std::vector<std::pair<PoseEstimate, render::Observation>>& registered_views,
    const RefineAppearanceConfig& config);

}  // namespace sv3d::inverse
