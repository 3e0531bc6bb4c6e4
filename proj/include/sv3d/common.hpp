#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace sv3d {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic counter-free RNG (splitmix64). Streams are derived by
// hashing a base seed with stream ids, so parallel work can own
// independent reproducible generators.
struct Rng {
  std::uint64_t state;
  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller; draws two uniforms per call
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
};

inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2);
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

// Interleaved row-major image, values in linear [0,1] unless noted.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), data(std::size_t(w) * h * c, 0.0) {}

  double& at(int y, int x, int c) { return data[(std::size_t(y) * width + x) * channels + c]; }
  double at(int y, int x, int c) const { return data[(std::size_t(y) * width + x) * channels + c]; }

  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

// Bilinear resize to an arbitrary size; samples are clamped at borders.
Image resize_bilinear(const Image& src, int out_w, int out_h);

double image_mse(const Image& a, const Image& b);

// Worker thread cap shared by all data-parallel loops. 1 by default;
// the CLI sets it from --threads.
int& thread_count();

// Runs worker(chunk) for chunk in [0, n_chunks). The chunking is fixed
// independently of the thread count, so callers that write into
// per-chunk storage and merge in chunk order get bit-identical results
// for any thread count.
void parallel_chunks(int n_chunks, const std::function<void(int)>& worker);

// Convenience: splits [0, n) into n_chunks contiguous ranges.
void parallel_ranges(std::size_t n, int n_chunks,
                     const std::function<void(std::size_t, std::size_t, int)>& worker);

// Interface shared by the learned triplane field and the analytic scene
// oracle, so both run through the identical rendering code path.
struct RadianceField {
  virtual ~RadianceField() = default;
  virtual double density(const Vec3& p) const = 0;
  virtual Vec3 color(const Vec3& p) const = 0;
};

inline double deg2rad(double d) { return d * M_PI / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / M_PI; }

}  // namespace sv3d
