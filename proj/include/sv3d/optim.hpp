#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace sv3d {

// Adam-style adaptive moments (beta2 = 0.95 default, weight decay 0).
struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  std::vector<double> m, v;
  long t = 0;

  void reset(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }

  // Updates x[lo, hi) in place; indices outside the range keep their
  // values and moments untouched (frozen-parameter contract).
  void step_range(std::vector<double>& x, const std::vector<double>& g, double lr, std::size_t lo,
                  std::size_t hi) {
    ++t;
    double c1 = 1.0 - std::pow(beta1, double(t));
    double c2 = 1.0 - std::pow(beta2, double(t));
    for (std::size_t i = lo; i < hi; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }

  void step(std::vector<double>& x, const std::vector<double>& g, double lr) {
    step_range(x, g, lr, 0, x.size());
  }
};

inline double cosine_lr(double lr0, double lr_min, long step, long total) {
  if (total <= 0) return lr0;
  double u = double(step) / double(total);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(M_PI * u));
}

}  // namespace sv3d
