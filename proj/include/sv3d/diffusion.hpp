#pragma once

#include "sv3d/common.hpp"
#include "sv3d/geometry.hpp"

#include <vector>

namespace sv3d::diffusion {

// beta/alpha/alpha_bar/sigma tables, 1-indexed by timestep (entry 0
// unused) so formulas read like their usual statement.
struct DiffusionSchedule {
  int T = 0;
  std::vector<double> beta, alpha, alpha_bar, sigma;
};

// Linear beta schedule from 1e-4 to 0.02; sigma_t^2 = beta_t.
DiffusionSchedule make_schedule(int T);
DiffusionSchedule make_schedule(const std::vector<double>& betas);

using State = std::vector<double>;

struct MultiviewState {
  std::vector<State> views;
  int t = 0;
};

// Opaque conditioning passed through to the denoiser: condition images
// plus per-target-view Plucker ray embeddings. This module never
// interprets the contents.
struct Conditioning {
  std::vector<Image> condition_images;
  std::vector<std::vector<geometry::PluckerRay>> target_pose_embeddings;
};

// Joint noise predictor over all views. Implementations must be
// deterministic functions of their inputs.
struct Denoiser {
  virtual ~Denoiser() = default;
  virtual std::vector<State> predict(const std::vector<State>& views, int t,
                                     const Conditioning& conditioning) const = 0;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
State forward_noise(const State& x0, int t, const State& eps, const DiffusionSchedule& schedule);

// x_{t-1} = mu_theta + sigma_t z, mu_theta = (x_t - beta_t/sqrt(1-abar_t) eps_hat)/sqrt(alpha_t);
// no noise is added at t = 1.
State reverse_step(const State& x_t, int t, const State& eps_hat,
                   const DiffusionSchedule& schedule, Rng& rng);
State reverse_mean(const State& x_t, int t, const State& eps_hat,
                   const DiffusionSchedule& schedule);

// Monte-Carlo estimate of E ||eps - eps_theta(x_t, t)||^2 with uniform
// t and fresh independent noise per view.
double training_loss(const Denoiser& denoiser, const std::vector<MultiviewState>& x0_batch,
                     const DiffusionSchedule& schedule, Rng& rng,
                     const Conditioning& conditioning = {});

// Joint reverse process from x_T ~ N(0, I). Per-view noise streams are
// seeded independently (stream n = hash(seed, n) unless overridden), so
// a factorized denoiser reproduces N independent single-view runs
// bit-exactly under shared stream seeds.
MultiviewState sample_multiview(const Denoiser& denoiser, int n_views, std::size_t dim,
                                const DiffusionSchedule& schedule, const Conditioning& conditioning,
                                std::uint64_t seed,
                                const std::vector<std::uint64_t>* stream_seeds = nullptr);

// --- toy denoisers (analytic stand-ins for the out-of-scope network) ---

// Predicts zero noise for every view.
struct ZeroDenoiser : Denoiser {
  std::vector<State> predict(const std::vector<State>& views, int t,
                             const Conditioning&) const override;
};

// Exact posterior-mean denoiser for x0 ~ N(mean, var I), factorized
// over views: eps_hat = (x_t - sqrt(abar_t) m_hat)/sqrt(1-abar_t) with
// m_hat the Gaussian posterior mean.
struct GaussianPosteriorDenoiser : Denoiser {
  double mean = 0.0;
  double var = 1.0;
  const DiffusionSchedule* schedule = nullptr;
  GaussianPosteriorDenoiser(double mean, double var, const DiffusionSchedule& schedule)
      : mean(mean), var(var), schedule(&schedule) {}
  std::vector<State> predict(const std::vector<State>& views, int t,
                             const Conditioning&) const override;
};

// eps_hat = a * x_t + b, trainable by gradient descent on training_loss.
struct LinearDenoiser : Denoiser {
  double a = 0.0, b = 0.0;
  std::vector<State> predict(const std::vector<State>& views, int t,
                             const Conditioning&) const override;
  // One SGD step on the per-batch loss; returns the batch loss.
  double train_step(const std::vector<MultiviewState>& x0_batch, const DiffusionSchedule& schedule,
                    Rng& rng, double lr);
};

}  // namespace sv3d::diffusion
