#include "sv3d/common.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace sv3d {

Image resize_bilinear(const Image& src, int out_w, int out_h) {
  Image out(out_w, out_h, src.channels);
  const double sx = double(src.width) / out_w;
  const double sy = double(src.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      // map output pixel center into source pixel coordinates
      double fx = (x + 0.5) * sx - 0.5;
      double fy = (y + 0.5) * sy - 0.5;
      int x0 = int(std::floor(fx));
      int y0 = int(std::floor(fy));
      double wx = fx - x0;
      double wy = fy - y0;
      int x1 = std::clamp(x0 + 1, 0, src.width - 1);
      int y1 = std::clamp(y0 + 1, 0, src.height - 1);
      x0 = std::clamp(x0, 0, src.width - 1);
      y0 = std::clamp(y0, 0, src.height - 1);
      for (int c = 0; c < src.channels; ++c) {
        double v00 = src.at(y0, x0, c), v01 = src.at(y0, x1, c);
        double v10 = src.at(y1, x0, c), v11 = src.at(y1, x1, c);
        out.at(y, x, c) = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
      }
    }
  }
  return out;
}

double image_mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("image_mse: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / double(a.data.size());
}

int& thread_count() {
  static int n = 1;
  return n;
}

void parallel_chunks(int n_chunks, const std::function<void(int)>& worker) {
  int workers = std::min(thread_count(), n_chunks);
  if (workers <= 1) {
    for (int c = 0; c < n_chunks; ++c) worker(c);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        int c = next.fetch_add(1);
        if (c >= n_chunks) return;
        worker(c);
      }
    });
  }
  for (auto& t : pool) t.join();
}

void parallel_ranges(std::size_t n, int n_chunks,
                     const std::function<void(std::size_t, std::size_t, int)>& worker) {
  if (n == 0) return;
  n_chunks = std::min<std::size_t>(n_chunks, n);
  parallel_chunks(n_chunks, [&](int c) {
    std::size_t lo = n * std::size_t(c) / n_chunks;
    std::size_t hi = n * std::size_t(c + 1) / n_chunks;
    worker(lo, hi, c);
  });
}

}  // namespace sv3d
