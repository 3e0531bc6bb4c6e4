#include "sv3d/render.hpp"

#include "sv3d/optim.hpp"

#include <algorithm>
#include <cmath>

namespace sv3d::render {

RaySamples stratified_samples(const geometry::Ray& ray, int n, Rng& rng) {
  RaySamples s;
  s.t.resize(n);
  s.delta.resize(n);
  double span = ray.t_far - ray.t_near;
  double bin = span / n;
  for (int i = 0; i < n; ++i) s.t[i] = ray.t_near + (i + rng.uniform()) * bin;
  for (int i = 0; i + 1 < n; ++i) s.delta[i] = s.t[i + 1] - s.t[i];
  s.delta[n - 1] = ray.t_far - s.t[n - 1];
  return s;
}

RayShade render_ray(const RadianceField& field, const geometry::Ray& ray,
                    const RaySamples& samples) {
  RayShade out;
  double T = 1.0;
  double weighted_t = 0.0;
  for (std::size_t i = 0; i < samples.t.size(); ++i) {
    Vec3 p = ray.origin + samples.t[i] * ray.direction;
    double sigma = field.density(p);
    double att = std::exp(-sigma * samples.delta[i]);
    double w = T * (1.0 - att);
    if (w > 0.0) out.rgb += w * field.color(p);
    out.alpha += w;
    weighted_t += w * samples.t[i];
    T *= att;
  }
  out.depth = weighted_t / std::max(out.alpha, 1e-8);
  return out;
}

RayShade render_ray_vjp(const field::TriplaneField& field, const geometry::Ray& ray,
                        const RaySamples& samples, const Vec3& d_rgb, double d_alpha,
                        double d_depth, std::vector<double>& grads) {
  constexpr std::size_t kMaxSamples = 512;
  const std::size_t n = samples.t.size();
  if (n > kMaxSamples) throw std::invalid_argument("render_ray_vjp: too many samples");
  double sigma[kMaxSamples], att[kMaxSamples], w[kMaxSamples], Tvec[kMaxSamples];
  Vec3 pos[kMaxSamples], col[kMaxSamples];
  RayShade out;
  double T = 1.0;
  double weighted_t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    pos[i] = ray.origin + samples.t[i] * ray.direction;
    sigma[i] = field.density(pos[i]);
    col[i] = field.color(pos[i]);
    att[i] = std::exp(-sigma[i] * samples.delta[i]);
    Tvec[i] = T;
    w[i] = T * (1.0 - att[i]);
    out.rgb += w[i] * col[i];
    out.alpha += w[i];
    weighted_t += w[i] * samples.t[i];
    T *= att[i];
  }
  double denom = std::max(out.alpha, 1e-8);
  out.depth = weighted_t / denom;

  // dL/dw_i, then dL/dsigma_j through the transmittance prefix sums
  double dw[kMaxSamples];
  double depth_alpha_term = (out.alpha > 1e-8) ? weighted_t / (denom * denom) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dw[i] = d_rgb.dot(col[i]) + d_alpha +
            d_depth * (samples.t[i] / denom - depth_alpha_term);
  }
  double suffix = 0.0;  // sum_{i>j} w_i dw_i
  for (std::size_t j = n; j-- > 0;) {
    double d_sigma = samples.delta[j] * (Tvec[j] * att[j] * dw[j] - suffix);
    suffix += w[j] * dw[j];
    if (d_sigma != 0.0) field.density_vjp(pos[j], d_sigma, grads);
    Vec3 d_col = w[j] * d_rgb;
    if (d_col.squaredNorm() != 0.0) field.color_vjp(pos[j], d_col, grads);
  }
  return out;
}

RenderedView render_view(const RadianceField& field, const geometry::CameraPose& pose,
                         int n_samples, std::uint64_t seed) {
  RenderedView view;
  view.pose = pose;
  view.rgb = Image(pose.width, pose.height, 3);
  view.depth = Image(pose.width, pose.height, 1);
  view.alpha = Image(pose.width, pose.height, 1);
  std::size_t n_px = std::size_t(pose.width) * pose.height;
  parallel_ranges(n_px, 64, [&](std::size_t lo, std::size_t hi, int) {
    for (std::size_t idx = lo; idx < hi; ++idx) {
      int y = int(idx / pose.width);
      int x = int(idx % pose.width);
      geometry::Ray ray = geometry::pixel_ray(pose, x + 0.5, y + 0.5);
      Rng rng(hash_mix(seed, idx));
      RaySamples samples = stratified_samples(ray, n_samples, rng);
      RayShade shade = render_ray(field, ray, samples);
      for (int c = 0; c < 3; ++c) view.rgb.at(y, x, c) = shade.rgb[c];
      view.depth.at(y, x, 0) = shade.depth;
      view.alpha.at(y, x, 0) = shade.alpha;
    }
  });
  return view;
}

namespace {

Image downsample2(const Image& src) {
  Image out(src.width / 2, src.height / 2, src.channels);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < src.channels; ++c)
        out.at(y, x, c) = 0.25 * (src.at(2 * y, 2 * x, c) + src.at(2 * y, 2 * x + 1, c) +
                                  src.at(2 * y + 1, 2 * x, c) + src.at(2 * y + 1, 2 * x + 1, c));
  return out;
}

}  // namespace

double perceptual_proxy(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("perceptual_proxy: shape mismatch");
  Image la = a, lb = b;
  double acc = 0.0;
  int levels = 0;
  for (int l = 0; l < 3 && la.width >= 2 && la.height >= 2; ++l) {
    la = downsample2(la);
    lb = downsample2(lb);
    acc += image_mse(la, lb);
    ++levels;
  }
  return levels ? acc / levels : 0.0;
}

void perceptual_proxy_vjp(const Image& a, const Image& b, double d_out, Image& d_a_accum) {
  if (!a.same_shape(b)) throw ShapeMismatch("perceptual_proxy: shape mismatch");
  std::vector<Image> pyr_a{a}, pyr_b{b};
  while (int(pyr_a.size()) <= 3 && pyr_a.back().width >= 2 && pyr_a.back().height >= 2 &&
         pyr_a.size() < 4) {
    pyr_a.push_back(downsample2(pyr_a.back()));
    pyr_b.push_back(downsample2(pyr_b.back()));
  }
  int levels = int(pyr_a.size()) - 1;
  if (levels == 0) return;
  // adjoint per level, pushed back up through the box filters
  std::vector<Image> adj(pyr_a.size());
  for (int l = 1; l <= levels; ++l) {
    const Image& la = pyr_a[l];
    const Image& lb = pyr_b[l];
    adj[l] = Image(la.width, la.height, la.channels);
    double scale = 2.0 * d_out / (levels * double(la.data.size()));
    for (std::size_t i = 0; i < la.data.size(); ++i)
      adj[l].data[i] = scale * (la.data[i] - lb.data[i]);
  }
  for (int l = levels; l >= 1; --l) {
    Image& up = (l == 1) ? d_a_accum : adj[l - 1];
    if (l != 1 && up.data.empty()) up = Image(pyr_a[l - 1].width, pyr_a[l - 1].height, a.channels);
    const Image& src = adj[l];
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x)
        for (int c = 0; c < src.channels; ++c) {
          double g = 0.25 * src.at(y, x, c);
          up.at(2 * y, 2 * x, c) += g;
          up.at(2 * y, 2 * x + 1, c) += g;
          up.at(2 * y + 1, 2 * x, c) += g;
          up.at(2 * y + 1, 2 * x + 1, c) += g;
        }
  }
}

double loss_vol(const RenderedView& rendered, const Image& target, double lambda_p) {
  if (!rendered.rgb.same_shape(target)) throw ShapeMismatch("loss_vol: shape mismatch");
  return image_mse(rendered.rgb, target) + lambda_p * perceptual_proxy(rendered.rgb, target);
}

namespace {

Image composite_black(const Image& rgb, const Image& mask) {
  Image out = rgb;
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      double m = mask.at(y, x, 0) > 0.5 ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) out.at(y, x, c) *= m;
    }
  return out;
}

}  // namespace

double loss_and_grad_vol(const field::TriplaneField& field,
                         const std::vector<Observation>& observations, int n_samples,
                         std::uint64_t seed, double lambda_p, std::vector<double>& grads) {
  double total = 0.0;
  const double vw = 1.0 / double(observations.size());
  for (std::size_t v = 0; v < observations.size(); ++v) {
    const auto& obs = observations[v];
    Image target = composite_black(obs.rgb, obs.mask);
    std::uint64_t view_seed = hash_mix(seed, v);
    RenderedView rendered = render_view(field, obs.pose, n_samples, view_seed);
    total += vw * loss_vol(rendered, target, lambda_p);

    Image d_rgb(target.width, target.height, 3);
    double mse_scale = 2.0 * vw / double(target.data.size());
    for (std::size_t i = 0; i < target.data.size(); ++i)
      d_rgb.data[i] = mse_scale * (rendered.rgb.data[i] - target.data[i]);
    perceptual_proxy_vjp(rendered.rgb, target, vw * lambda_p, d_rgb);

    std::size_t n_px = std::size_t(target.width) * target.height;
    const int n_chunks = 64;
    std::vector<std::vector<double>> chunk_grads(n_chunks);
    parallel_ranges(n_px, n_chunks, [&](std::size_t lo, std::size_t hi, int chunk) {
      auto& g = chunk_grads[chunk];
      g.assign(field.param_count(), 0.0);
      for (std::size_t idx = lo; idx < hi; ++idx) {
        int y = int(idx / target.width);
        int x = int(idx % target.width);
        geometry::Ray ray = geometry::pixel_ray(obs.pose, x + 0.5, y + 0.5);
        Rng rng(hash_mix(view_seed, idx));
        RaySamples samples = stratified_samples(ray, n_samples, rng);
        Vec3 d(d_rgb.at(y, x, 0), d_rgb.at(y, x, 1), d_rgb.at(y, x, 2));
        render_ray_vjp(field, ray, samples, d, 0.0, 0.0, g);
      }
    });
    for (const auto& g : chunk_grads)
      if (!g.empty())
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += g[i];
  }
  return total;
}

FitResult fit_field(const std::vector<Observation>& observations, const FitConfig& config) {
  if (observations.size() < 2) throw InsufficientViews();

  field::TriplaneField fld(config.field_resolution, config.field_feature_dim,
                           config.field_hidden_width, config.seed);
  // Composite targets on black outside a dilated mask: the rendered
  // alpha ramp extends a few pixels past the exact silhouette, and
  // zeroing those pixels would put contradictory supervision on the
  // edge band.
  std::vector<Image> targets;
  targets.reserve(observations.size());
  const int dilate = 3;
  for (const auto& obs : observations) {
    Image wide = obs.mask;
    for (int y = 0; y < wide.height; ++y)
      for (int x = 0; x < wide.width; ++x) {
        double m = 0.0;
        for (int dy = -dilate; dy <= dilate && m == 0.0; ++dy)
          for (int dx = -dilate; dx <= dilate; ++dx) {
            int yy = std::clamp(y + dy, 0, wide.height - 1);
            int xx = std::clamp(x + dx, 0, wide.width - 1);
            if (obs.mask.at(yy, xx, 0) > 0.5) {
              m = 1.0;
              break;
            }
          }
        wide.at(y, x, 0) = m;
      }
    targets.push_back(composite_black(obs.rgb, wide));
  }

  Adam opt;
  opt.reset(fld.param_count());
  std::vector<double> grads(fld.param_count());
  std::vector<double> losses;
  losses.reserve(config.steps);

  const int n_chunks = 64;
  std::vector<std::vector<double>> chunk_grads(n_chunks);
  std::vector<double> chunk_loss(n_chunks);

  const std::size_t n_views = observations.size();

  for (int step = 0; step < config.steps; ++step) {
    std::uint64_t step_seed = hash_mix(config.seed, 0x5a17ull * 1000003ull + std::uint64_t(step));
    Rng batch_rng(step_seed);
    struct RaySlot {
      int view, x, y;
    };
    std::vector<RaySlot> batch(config.batch_rays);
    for (auto& slot : batch) {
      slot.view = int(batch_rng.next_u64() % n_views);
      slot.x = int(batch_rng.next_u64() % observations[slot.view].pose.width);
      slot.y = int(batch_rng.next_u64() % observations[slot.view].pose.height);
    }

    std::fill(chunk_loss.begin(), chunk_loss.end(), 0.0);
    parallel_ranges(batch.size(), n_chunks, [&](std::size_t lo, std::size_t hi, int chunk) {
      auto& g = chunk_grads[chunk];
      g.assign(fld.param_count(), 0.0);
      double loss = 0.0;
      for (std::size_t s = lo; s < hi; ++s) {
        const auto& slot = batch[s];
        const auto& obs = observations[slot.view];
        geometry::Ray ray = geometry::pixel_ray(obs.pose, slot.x + 0.5, slot.y + 0.5);
        Rng rng(hash_mix(step_seed, 0x9000 + s));
        RaySamples samples = stratified_samples(ray, config.n_samples, rng);
        RayShade shade = render_ray(fld, ray, samples);
        Vec3 tgt(targets[slot.view].at(slot.y, slot.x, 0), targets[slot.view].at(slot.y, slot.x, 1),
                 targets[slot.view].at(slot.y, slot.x, 2));
        Vec3 res = shade.rgb - tgt;
        loss += res.squaredNorm();
        Vec3 d_rgb = 2.0 * res / (double(batch.size()) * 3.0);
        // silhouette term: pull alpha toward the mask, but only away
        // from the boundary (there the true alpha is fractional and a
        // binary target would bias it)
        double d_alpha = 0.0;
        bool uniform = true;
        double m0 = obs.mask.at(slot.y, slot.x, 0);
        for (int dy = -3; dy <= 3 && uniform; ++dy)
          for (int dx = -3; dx <= 3; ++dx) {
            int yy = std::clamp(slot.y + dy, 0, obs.pose.height - 1);
            int xx = std::clamp(slot.x + dx, 0, obs.pose.width - 1);
            if (obs.mask.at(yy, xx, 0) != m0) {
              uniform = false;
              break;
            }
          }
        if (uniform) {
          double mres = shade.alpha - m0;
          loss += config.lambda_m * mres * mres * 3.0;
          d_alpha = config.lambda_m * 2.0 * mres / double(batch.size());
        }
        render_ray_vjp(fld, ray, samples, d_rgb, d_alpha, 0.0, g);
      }
      chunk_loss[chunk] = loss;
    });

    std::fill(grads.begin(), grads.end(), 0.0);
    double loss = 0.0;
    for (int c = 0; c < n_chunks; ++c) {
      loss += chunk_loss[c];
      if (!chunk_grads[c].empty())
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += chunk_grads[c][i];
    }
    loss /= double(batch.size()) * 3.0;

    // visual-hull carving: a point that projects outside the mask in
    // any view is provably empty, so its density is pushed to zero
    // (serial: identical for every thread count)
    if (config.lambda_h > 0.0 && config.hull_points > 0) {
      Rng hrng(hash_mix(step_seed, 0x41c9));
      double d_sigma = config.lambda_h / double(config.hull_points);
      double hp = 0.0;
      for (int s = 0; s < config.hull_points; ++s) {
        Vec3 p(hrng.uniform(-1, 1), hrng.uniform(-1, 1), hrng.uniform(-1, 1));
        bool free_space = false;
        for (const auto& obs : observations) {
          double px, py;
          if (!geometry::project_point(obs.pose, p, &px, &py)) {
            free_space = true;  // outside the frustum of a full view
            break;
          }
          // conservative: free only when all four neighboring mask
          // pixels are background (half-pixel margin at the boundary)
          int x0 = int(std::floor(px - 0.5)), y0 = int(std::floor(py - 0.5));
          bool any_fg = false;
          for (int dy = 0; dy <= 1 && !any_fg; ++dy)
            for (int dx = 0; dx <= 1; ++dx) {
              int xx = x0 + dx, yy = y0 + dy;
              if (xx < 0 || yy < 0 || xx >= obs.pose.width || yy >= obs.pose.height) continue;
              if (obs.mask.at(yy, xx, 0) > 0.5) {
                any_fg = true;
                break;
              }
            }
          if (!any_fg) {
            free_space = true;
            break;
          }
        }
        if (free_space) hp += fld.density_vjp(p, d_sigma, grads);
      }
      loss += config.lambda_h * hp / double(config.hull_points);
    }

    // density sparsity at uniformly sampled points (serial: identical
    // for every thread count)
    if (config.lambda_s > 0.0 && config.sparsity_points > 0) {
      Rng srng(hash_mix(step_seed, 0x57a9));
      double d_sigma = config.lambda_s / double(config.sparsity_points);
      double sp = 0.0;
      for (int s = 0; s < config.sparsity_points; ++s) {
        Vec3 p(srng.uniform(-1, 1), srng.uniform(-1, 1), srng.uniform(-1, 1));
        sp += fld.density_vjp(p, d_sigma, grads);
      }
      loss += config.lambda_s * sp / double(config.sparsity_points);
    }
    losses.push_back(loss);

    double lr = cosine_lr(config.lr, config.lr_min, step, config.steps);
    opt.step(fld.values(), grads, lr);
  }

  return FitResult{std::move(fld), std::move(losses)};
}

}  // namespace sv3d::render
