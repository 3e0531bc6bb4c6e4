#include "sv3d/diffusion.hpp"

#include <cmath>

namespace sv3d::diffusion {

DiffusionSchedule make_schedule(const std::vector<double>& betas) {
  DiffusionSchedule s;
  s.T = int(betas.size());
  s.beta.assign(s.T + 1, 0.0);
  s.alpha.assign(s.T + 1, 1.0);
  s.alpha_bar.assign(s.T + 1, 1.0);
  s.sigma.assign(s.T + 1, 0.0);
  for (int t = 1; t <= s.T; ++t) {
    s.beta[t] = betas[t - 1];
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.sigma[t] = std::sqrt(s.beta[t]);
  }
  return s;
}

DiffusionSchedule make_schedule(int T) {
  std::vector<double> betas(T);
  for (int t = 0; t < T; ++t)
    betas[t] = T == 1 ? 1e-4 : 1e-4 + (0.02 - 1e-4) * double(t) / double(T - 1);
  return make_schedule(betas);
}

State forward_noise(const State& x0, int t, const State& eps, const DiffusionSchedule& schedule) {
  double sa = std::sqrt(schedule.alpha_bar[t]);
  double sb = std::sqrt(1.0 - schedule.alpha_bar[t]);
  State out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = sa * x0[i] + sb * eps[i];
  return out;
}

State reverse_mean(const State& x_t, int t, const State& eps_hat,
                   const DiffusionSchedule& schedule) {
  double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha[t]);
  double coef = schedule.beta[t] / std::sqrt(1.0 - schedule.alpha_bar[t]);
  State out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i)
    out[i] = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]);
  return out;
}

State reverse_step(const State& x_t, int t, const State& eps_hat,
                   const DiffusionSchedule& schedule, Rng& rng) {
  State out = reverse_mean(x_t, t, eps_hat, schedule);
  if (t > 1)
    for (double& v : out) v += schedule.sigma[t] * rng.normal();
  return out;
}

double training_loss(const Denoiser& denoiser, const std::vector<MultiviewState>& x0_batch,
                     const DiffusionSchedule& schedule, Rng& rng,
                     const Conditioning& conditioning) {
  double acc = 0.0;
  for (const auto& sample : x0_batch) {
    int t = 1 + int(rng.next_u64() % std::uint64_t(schedule.T));
    std::vector<State> noised(sample.views.size());
    std::vector<State> eps(sample.views.size());
    for (std::size_t n = 0; n < sample.views.size(); ++n) {
      eps[n].resize(sample.views[n].size());
      for (double& e : eps[n]) e = rng.normal();
      noised[n] = forward_noise(sample.views[n], t, eps[n], schedule);
    }
    std::vector<State> pred = denoiser.predict(noised, t, conditioning);
    for (std::size_t n = 0; n < sample.views.size(); ++n)
      for (std::size_t i = 0; i < eps[n].size(); ++i) {
        double d = eps[n][i] - pred[n][i];
        acc += d * d;
      }
  }
  return acc / double(x0_batch.size());
}

MultiviewState sample_multiview(const Denoiser& denoiser, int n_views, std::size_t dim,
                                const DiffusionSchedule& schedule, const Conditioning& conditioning,
                                std::uint64_t seed,
                                const std::vector<std::uint64_t>* stream_seeds) {
  MultiviewState state;
  state.t = schedule.T;
  state.views.resize(n_views);
  std::vector<Rng> streams;
  streams.reserve(n_views);
  for (int n = 0; n < n_views; ++n)
    streams.emplace_back(stream_seeds ? (*stream_seeds)[n] : hash_mix(seed, std::uint64_t(n)));
  for (int n = 0; n < n_views; ++n) {
    state.views[n].resize(dim);
    for (double& v : state.views[n]) v = streams[n].normal();
  }
  for (int t = schedule.T; t >= 1; --t) {
    std::vector<State> eps_hat = denoiser.predict(state.views, t, conditioning);
    for (int n = 0; n < n_views; ++n)
      state.views[n] = reverse_step(state.views[n], t, eps_hat[n], schedule, streams[n]);
    state.t = t - 1;
  }
  return state;
}

std::vector<State> ZeroDenoiser::predict(const std::vector<State>& views, int,
                                         const Conditioning&) const {
  std::vector<State> out(views.size());
  for (std::size_t n = 0; n < views.size(); ++n) out[n].assign(views[n].size(), 0.0);
  return out;
}

std::vector<State> GaussianPosteriorDenoiser::predict(const std::vector<State>& views, int t,
                                                      const Conditioning&) const {
  double abar = schedule->alpha_bar[t];
  double sa = std::sqrt(abar);
  double sb = std::sqrt(1.0 - abar);
  std::vector<State> out(views.size());
  for (std::size_t n = 0; n < views.size(); ++n) {
    out[n].resize(views[n].size());
    for (std::size_t i = 0; i < views[n].size(); ++i) {
      double x = views[n][i];
      double m_hat = (sa * var * x + (1.0 - abar) * mean) / (abar * var + 1.0 - abar);
      out[n][i] = (x - sa * m_hat) / sb;
    }
  }
  return out;
}

std::vector<State> LinearDenoiser::predict(const std::vector<State>& views, int,
                                           const Conditioning&) const {
  std::vector<State> out(views.size());
  for (std::size_t n = 0; n < views.size(); ++n) {
    out[n].resize(views[n].size());
    for (std::size_t i = 0; i < views[n].size(); ++i) out[n][i] = a * views[n][i] + b;
  }
  return out;
}

double LinearDenoiser::train_step(const std::vector<MultiviewState>& x0_batch,
                                  const DiffusionSchedule& schedule, Rng& rng, double lr) {
  double loss = 0.0, grad_a = 0.0, grad_b = 0.0;
  std::size_t count = 0;
  for (const auto& sample : x0_batch) {
    int t = 1 + int(rng.next_u64() % std::uint64_t(schedule.T));
    for (const auto& view : sample.views)
      for (double x0 : view) {
        double eps = rng.normal();
        double xt = std::sqrt(schedule.alpha_bar[t]) * x0 +
                    std::sqrt(1.0 - schedule.alpha_bar[t]) * eps;
        double res = a * xt + b - eps;
        loss += res * res;
        grad_a += 2.0 * res * xt;
        grad_b += 2.0 * res;
        ++count;
      }
  }
  if (count == 0) return 0.0;
  a -= lr * grad_a / double(count);
  b -= lr * grad_b / double(count);
  return loss / double(count);
}

}  // namespace sv3d::diffusion
