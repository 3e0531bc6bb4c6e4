#include "sv3d/inverse.hpp"

#include "sv3d/optim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>

namespace sv3d::inverse {

std::vector<geometry::CameraPose> default_starts(const geometry::CameraPose& like) {
  std::vector<geometry::CameraPose> starts;
  for (double elev : {-30.0, 0.0, 30.0})
    for (int a = 0; a < 8; ++a) {
      geometry::CameraPose p = like;
      p.azimuth_deg = 45.0 * a;
      p.elevation_deg = elev;
      p.roll_deg = 0.0;
      p.radius = 1.5;
      starts.push_back(p);
    }
  return starts;
}

namespace {

Image dilate_mask(const Image& mask, int radius) {
  Image out = mask;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      double v = 0.0;
      for (int dy = -radius; dy <= radius && v < 0.5; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= mask.height || xx >= mask.width) continue;
          if (mask.at(yy, xx, 0) > 0.5) {
            v = 1.0;
            break;
          }
        }
      out.at(y, x, 0) = v;
    }
  return out;
}

// Silhouette masks are hard cuts through the renderer's soft alpha ramp;
// compositing the target on the raw mask would truncate real edge pixels
// and bias the recovered pose (the optimizer shrinks the object to match
// the thinner mask). So rgb is composited on a dilated mask and the
// alpha term only scores pixels whose mask neighborhood is uniform.
Image composite_on_mask(const Image& rgb, const Image& mask) {
  Image wide = dilate_mask(mask, 3);
  Image out = rgb;
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < out.channels; ++c) out.at(y, x, c) *= wide.at(y, x, 0);
  return out;
}

Image mask_interior_weight(const Image& mask, int radius) {
  Image w(mask.width, mask.height, 1);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      bool uniform = true;
      double v0 = mask.at(y, x, 0);
      for (int dy = -radius; dy <= radius && uniform; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          int yy = std::clamp(y + dy, 0, mask.height - 1);
          int xx = std::clamp(x + dx, 0, mask.width - 1);
          if ((mask.at(yy, xx, 0) > 0.5) != (v0 > 0.5)) {
            uniform = false;
            break;
          }
        }
      w.at(y, x, 0) = uniform ? 1.0 : 0.0;
    }
  return w;
}

struct PoseTarget {
  Image rgb;     // composited on black (dilated mask)
  Image mask;
  Image weight;  // 1 away from the silhouette boundary, 0 in the edge band
  double fov_deg;
};

// x = (azimuth, elevation, roll) in radians plus radius
geometry::CameraPose pose_from_params(const double* x, const PoseTarget& target, int size) {
  geometry::CameraPose p;
  p.azimuth_deg = rad2deg(x[0]);
  p.elevation_deg = rad2deg(x[1]);
  p.roll_deg = rad2deg(x[2]);
  p.radius = x[3];
  p.fov_deg = target.fov_deg;
  p.width = size;
  p.height = size;
  return p;
}

double pose_loss(const RadianceField& field, const double* x, const PoseTarget& target, int size,
                 int n_samples, std::uint64_t seed) {
  geometry::CameraPose p = pose_from_params(x, target, size);
  render::RenderedView view = render::render_view(field, p, n_samples, seed);
  double mask_acc = 0.0, wsum = 0.0;
  for (int yy = 0; yy < size; ++yy)
    for (int xx = 0; xx < size; ++xx) {
      double w = target.weight.at(yy, xx, 0);
      double d = view.alpha.at(yy, xx, 0) - target.mask.at(yy, xx, 0);
      mask_acc += w * d * d;
      wsum += w;
    }
  double loss = 0.5 * image_mse(view.rgb, target.rgb) + 0.5 * mask_acc / std::max(wsum, 1.0);
  if (!std::isfinite(loss)) throw NonFiniteLoss();
  return loss;
}

void clamp_params(double* x) {
  x[1] = std::clamp(x[1], deg2rad(-88.0), deg2rad(88.0));
  x[3] = std::clamp(x[3], 0.6, 4.0);
}

}  // namespace

PoseEstimate invert_pose(const RadianceField& field, const render::Observation& target,
                         const InvertPoseConfig& config, std::vector<double>& start_losses) {
  const std::vector<geometry::CameraPose> starts =
      config.starts.empty() ? default_starts(target.pose) : config.starts;
  const int n_starts = int(starts.size());

  // optimization-time renderer: a trilinear bake of the frozen field
  std::unique_ptr<field::BakedField> baked;
  if (config.bake_resolution > 0)
    baked = std::make_unique<field::BakedField>(field, config.bake_resolution);
  const RadianceField& opt_field = baked ? static_cast<const RadianceField&>(*baked) : field;

  Image coarse_mask = resize_bilinear(target.mask, config.opt_size, config.opt_size);
  PoseTarget coarse{resize_bilinear(composite_on_mask(target.rgb, target.mask), config.opt_size,
                                    config.opt_size),
                    coarse_mask, mask_interior_weight(coarse_mask, 2), target.pose.fov_deg};
  PoseTarget fine{composite_on_mask(target.rgb, target.mask), target.mask,
                  mask_interior_weight(target.mask, 3), target.pose.fov_deg};

  // one jitter stream shared by every start and every finite-difference
  // probe, so each start descends a fixed deterministic surrogate
  const std::uint64_t opt_seed = hash_mix(config.seed, 0x9e37u);
  const std::uint64_t eval_seed = hash_mix(config.seed, 0x51deu);

  start_losses.assign(n_starts, 0.0);
  std::vector<std::array<double, 4>> final_params(n_starts);
  std::vector<int> iterations(n_starts, 0);
  std::vector<std::exception_ptr> errors(n_starts);

  parallel_chunks(n_starts, [&](int s) {
    try {
      std::array<double, 4> x = {deg2rad(starts[s].azimuth_deg), deg2rad(starts[s].elevation_deg),
                                 deg2rad(starts[s].roll_deg), starts[s].radius};
      Adam adam;
      adam.reset(4);
      const std::array<double, 4> h = {1e-3, 1e-3, 1e-3, 1.5e-3};
      double best = std::numeric_limits<double>::infinity();
      std::array<double, 4> best_x = x;
      int since_improved = 0;
      int step = 0;
      std::vector<double> g(4);
      for (; step < config.max_steps; ++step) {
        double loss =
            pose_loss(opt_field, x.data(), coarse, config.opt_size, config.n_samples, opt_seed);
        if (loss < best - config.early_stop_improvement)
          since_improved = 0;
        else if (++since_improved >= config.early_stop_window)
          break;
        // the surrogate basin is shallow near convergence; keep the
        // best-seen iterate rather than wherever the oscillation ends
        if (loss < best) {
          best = loss;
          best_x = x;
        }
        for (int d = 0; d < 4; ++d) {
          std::array<double, 4> xp = x, xm = x;
          xp[d] += h[d];
          xm[d] -= h[d];
          g[d] = (pose_loss(opt_field, xp.data(), coarse, config.opt_size, config.n_samples,
                            opt_seed) -
                  pose_loss(opt_field, xm.data(), coarse, config.opt_size, config.n_samples,
                            opt_seed)) /
                 (2.0 * h[d]);
        }
        std::vector<double> xv(x.begin(), x.end());
        adam.step(xv, g, cosine_lr(config.lr, 0.1 * config.lr, step, config.max_steps));
        std::copy(xv.begin(), xv.end(), x.begin());
        clamp_params(x.data());
      }
      final_params[s] = best_x;
      iterations[s] = step;
      // consistent full-resolution evaluation for the argmin across
      // starts, at twice the optimization sample count: the coarse
      // surrogate's fixed jitter displaces its minimum by a degree or
      // two, and ranking basins on a sharper objective avoids promoting
      // a spurious one
      start_losses[s] = pose_loss(opt_field, best_x.data(), fine, target.rgb.width, hp_samples,
                                  eval_seed);
    } catch (...) {
      errors[s] = std::current_exception();
    }
  });
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  int winner = 0;
  for (int s = 1; s < n_starts; ++s)
    if (start_losses[s] < start_losses[winner]) winner = s;

  PoseEstimate est;
  est.pose = pose_from_params(final_params[winner].data(), fine, target.rgb.width);
  est.pose.width = target.pose.width;
  est.pose.height = target.pose.height;
  est.final_loss = start_losses[winner];
  est.start_index = winner;
  est.iterations = iterations[winner];
  return est;
}

PoseEstimate invert_pose(const RadianceField& field, const render::Observation& target,
                         const InvertPoseConfig& config) {
  std::vector<double> start_losses;
  return invert_pose(field, target, config, start_losses);
}

std::pair<field::TriplaneField, RefinementReport> refine_appearance(
    const field::TriplaneField& field,
    const std::vector<std::pair<PoseEstimate, render::Observation>>& registered_views,
    const RefineAppearanceConfig& config) {
  field::TriplaneField f = field;
  RefinementReport report;
  report.steps = config.steps;

  std::vector<render::Observation> observations;
  observations.reserve(registered_views.size());
  for (const auto& [estimate, obs] : registered_views) {
    render::Observation o = obs;
    o.pose = estimate.pose;
    observations.push_back(std::move(o));
  }

  const std::uint64_t eval_seed = hash_mix(config.seed, 0xabu);
  auto view_mse = [&](const field::TriplaneField& g, const render::Observation& obs) {
    render::RenderedView view = render::render_view(g, obs.pose, config.n_samples, eval_seed);
    return image_mse(view.rgb, composite_on_mask(obs.rgb, obs.mask));
  };
  for (const auto& obs : observations) report.mse_before.push_back(view_mse(f, obs));

  const std::size_t planes_end = f.plane_param_count();
  Adam adam_planes, adam_color;
  adam_planes.reset(f.param_count());
  adam_color.reset(f.param_count());

  std::vector<double> grads(f.param_count(), 0.0);
  std::vector<double> best_params = f.values();
  double best_loss = std::numeric_limits<double>::infinity();
  for (int step = 0; step < config.steps; ++step) {
    std::fill(grads.begin(), grads.end(), 0.0);
    double loss = render::loss_and_grad_vol(f, observations, config.n_samples,
                                            hash_mix(config.seed, std::uint64_t(step)),
                                            config.lambda_p, grads);
    if (loss < best_loss) {
      best_loss = loss;
      best_params = f.values();
    }
    adam_planes.step_range(f.values(), grads, config.lr, 0, planes_end);
    adam_color.step_range(f.values(), grads, config.lr, f.color_head_begin(), f.color_head_end());
  }
  if (config.steps > 0) {
    std::fill(grads.begin(), grads.end(), 0.0);
    double loss = render::loss_and_grad_vol(f, observations, config.n_samples,
                                            hash_mix(config.seed, std::uint64_t(config.steps)),
                                            config.lambda_p, grads);
    if (loss < best_loss) {
      best_loss = loss;
      best_params = f.values();
    }
    f.values() = best_params;
  }

  for (const auto& obs : observations) report.mse_after.push_back(view_mse(f, obs));
  report.planes_changed =
      !std::equal(f.values().begin(), f.values().begin() + planes_end, field.values().begin());
  report.color_head_changed =
      !std::equal(f.values().begin() + f.color_head_begin(),
                  f.values().begin() + f.color_head_end(),
                  field.values().begin() + f.color_head_begin());
  report.density_head_changed =
      !std::equal(f.values().begin() + f.density_head_begin(),
                  f.values().begin() + f.density_head_end(),
                  field.values().begin() + f.density_head_begin());
  return {std::move(f), report};
}

}  // namespace sv3d::inverse
