#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sv3d/field.hpp"

#include <cmath>
#include <numeric>
#include <vector>

using namespace sv3d;
using namespace sv3d::field;

namespace {

// Offset of layer `l`'s weight block inside a head that starts at
// `base`; weights are row-major [out][in] followed by the bias.
std::size_t layer_offset(const MlpSpec& spec, std::size_t base, int l) {
  std::size_t off = base;
  for (int k = 0; k < l; ++k)
    off += std::size_t(spec.widths[k + 1]) * spec.widths[k] + spec.widths[k + 1];
  return off;
}

// Grid node i maps to world coordinate 2 i / (R - 1) - 1.
double node_coord(int i, int R) { return 2.0 * i / (R - 1) - 1.0; }

}  // namespace

TEST_CASE("softplus and sigmoid") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(sigmoid(0.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(softplus(40.0) == doctest::Approx(40.0).epsilon(1e-12));
  CHECK(softplus(-40.0) > 0.0);
  CHECK(sigmoid(40.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constant planes give a constant feature vector") {
  TriplaneField f(4, 2, 8, 1);
  for (std::size_t i = 0; i < f.plane_param_count(); ++i) f.values()[i] = 0.75;
  double feat[6];
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    f.sample_feature(p, feat);
    for (int c = 0; c < 6; ++c) CHECK(feat[c] == doctest::Approx(0.75).epsilon(1e-14));
  }
}

TEST_CASE("bilinear sampling is exact at nodes and averages at midpoints") {
  const int R = 4, F = 1;
  TriplaneField f(R, F, 8, 1);
  // plane layout: XY, XZ, YZ contiguous, each R*R*F with (row, col)
  // storage; fill with distinct values
  auto plane_value = [&](int plane, int a, int b) { return 0.1 * plane + 0.01 * a + 0.003 * b; };
  for (int plane = 0; plane < 3; ++plane)
    for (int a = 0; a < R; ++a)
      for (int b = 0; b < R; ++b)
        f.values()[(std::size_t(plane) * R * R + std::size_t(a) * R + b) * F] =
            plane_value(plane, a, b);

  // node-exact: p at grid node (i, j, k). The XY plane is indexed by
  // (x, y), XZ by (x, z), YZ by (y, z).
  double feat[3];
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < R; ++j)
      for (int k = 0; k < R; ++k) {
        Vec3 p(node_coord(i, R), node_coord(j, R), node_coord(k, R));
        f.sample_feature(p, feat);
        // plane storage is [second-axis row][first-axis column]
        CHECK(feat[0] == doctest::Approx(plane_value(0, j, i)).epsilon(1e-12));
        CHECK(feat[1] == doctest::Approx(plane_value(1, k, i)).epsilon(1e-12));
        CHECK(feat[2] == doctest::Approx(plane_value(2, k, j)).epsilon(1e-12));
      }

  // midpoint between four XY nodes -> average of the four corners
  Vec3 mid(0.5 * (node_coord(1, R) + node_coord(2, R)), 0.5 * (node_coord(1, R) + node_coord(2, R)),
           node_coord(0, R));
  f.sample_feature(mid, feat);
  double expect_xy = 0.25 * (plane_value(0, 1, 1) + plane_value(0, 1, 2) + plane_value(0, 2, 1) +
                             plane_value(0, 2, 2));
  CHECK(feat[0] == doctest::Approx(expect_xy).epsilon(1e-12));

  // clamping: far outside the box equals the boundary value
  double fa[3], fb[3];
  f.sample_feature(Vec3(5.0, 0.2, -0.3), fa);
  f.sample_feature(Vec3(1.0, 0.2, -0.3), fb);
  for (int c = 0; c < 3; ++c) CHECK(fa[c] == doctest::Approx(fb[c]).epsilon(1e-14));
}

TEST_CASE("all-zero density head gives softplus(0) everywhere") {
  TriplaneField f(4, 2, 8, 5);
  std::fill(f.values().begin() + f.density_head_begin(), f.values().begin() + f.density_head_end(),
            0.0);
  Rng rng(9);
  for (int i = 0; i < 10; ++i) {
    Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    CHECK(f.density(p) == doctest::Approx(std::log(2.0)).epsilon(1e-13));
  }
}

TEST_CASE("color head saturates to white with final bias 20") {
  TriplaneField f(4, 2, 8, 5);
  std::fill(f.values().begin() + f.color_head_begin(), f.values().begin() + f.color_head_end(), 0.0);
  const MlpSpec& spec = f.color_spec();
  std::size_t last = layer_offset(spec, f.color_head_begin(), spec.layers() - 1);
  std::size_t bias = last + std::size_t(spec.widths[spec.layers()]) * spec.widths[spec.layers() - 1];
  for (int c = 0; c < 3; ++c) f.values()[bias + c] = 20.0;
  Vec3 rgb = f.color(Vec3(0.3, -0.2, 0.1));
  for (int c = 0; c < 3; ++c) CHECK(std::abs(rgb[c] - 1.0) < 1e-8);
}

TEST_CASE("hand-computed two-layer density forward pass") {
  // R=2, F=1 -> 3 inputs; density head widths {3, 2, 1}; constant
  // planes 0.5 so the feature is (0.5, 0.5, 0.5). Frozen oracle from an
  // independent implementation of the same arithmetic.
  MlpSpec dspec{{3, 2, 1}};
  MlpSpec cspec{{3, 2, 3}};
  TriplaneField f(2, 1, dspec, cspec);
  for (std::size_t i = 0; i < f.plane_param_count(); ++i) f.values()[i] = 0.5;
  std::size_t b = f.density_head_begin();
  const double W1[6] = {1, 0, -1, 0.5, 0.5, 0.5};
  const double b1[2] = {0.1, -0.2};
  const double W2[2] = {2, -1};
  const double b2 = 0.3;
  for (int i = 0; i < 6; ++i) f.values()[b + i] = W1[i];
  f.values()[b + 6] = b1[0];
  f.values()[b + 7] = b1[1];
  std::size_t l2 = layer_offset(dspec, b, 1);
  f.values()[l2] = W2[0];
  f.values()[l2 + 1] = W2[1];
  f.values()[l2 + 2] = b2;

  double sigma = f.density(Vec3(0.0, 0.0, 0.0));
  CHECK(sigma == doctest::Approx(1.1596085593067413).epsilon(1e-12));

  // d sigma / d final-bias = sigmoid(pre-activation)
  std::vector<double> grads(f.param_count(), 0.0);
  f.density_vjp(Vec3(0.0, 0.0, 0.0), 1.0, grads);
  CHECK(grads[f.density_head_end() - 1] ==
        doctest::Approx(0.68639108384920089).epsilon(1e-12));

  // zero adjoint leaves gradients unchanged
  std::vector<double> before = grads;
  f.density_vjp(Vec3(0.1, 0.2, 0.3), 0.0, grads);
  f.color_vjp(Vec3(0.1, 0.2, 0.3), Vec3::Zero(), grads);
  CHECK(grads == before);
}

TEST_CASE("parameter gradients match finite differences") {
  // random tiny field; scalar loss = a * density + b . color at a few
  // points, checked against central differences for every parameter
  MlpSpec dspec{{6, 8, 8, 1}};
  MlpSpec cspec{{6, 8, 8, 8, 3}};
  TriplaneField f(4, 2, dspec, cspec);
  Rng rng(17);
  for (double& v : f.values()) v = rng.uniform(-0.8, 0.8);

  std::vector<Vec3> points;
  std::vector<double> da;
  std::vector<Vec3> db;
  for (int i = 0; i < 3; ++i) {
    points.emplace_back(rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9));
    da.push_back(rng.uniform(-1, 1));
    db.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  }
  auto loss = [&](const TriplaneField& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      s += da[i] * g.density(points[i]);
      s += db[i].dot(g.color(points[i]));
    }
    return s;
  };
  std::vector<double> grads(f.param_count(), 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    f.density_vjp(points[i], da[i], grads);
    f.color_vjp(points[i], db[i], grads);
  }
  const double h = 1e-4;
  double max_rel = 0.0;
  for (std::size_t k = 0; k < f.param_count(); ++k) {
    TriplaneField g = f;
    g.values()[k] = f.values()[k] + h;
    double up = loss(g);
    g.values()[k] = f.values()[k] - h;
    double dn = loss(g);
    g.values()[k] = f.values()[k];
    double fd = (up - dn) / (2 * h);
    double denom = std::max({std::abs(fd), std::abs(grads[k]), 1e-6});
    max_rel = std::max(max_rel, std::abs(fd - grads[k]) / denom);
  }
  CHECK(max_rel < 1e-4);
}

TEST_CASE("position adjoints match finite differences") {
  TriplaneField f(6, 2, 8, 23);
  Rng rng(29);
  for (double& v : f.values()) v = rng.uniform(-0.6, 0.6);
  std::vector<double> grads(f.param_count(), 0.0);
  const double h = 1e-5;
  for (int i = 0; i < 10; ++i) {
    Vec3 p(rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9));
    Vec3 d_pos = Vec3::Zero();  // the vjp accumulates into it
    f.density_vjp(p, 1.0, grads, &d_pos);
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 pp = p, pm = p;
      pp[axis] += h;
      pm[axis] -= h;
      double fd = (f.density(pp) - f.density(pm)) / (2 * h);
      CHECK(d_pos[axis] == doctest::Approx(fd).epsilon(2e-4));
    }
  }
}

TEST_CASE("x-y plane symmetry") {
  // planes: XY symmetric under transpose, XZ == YZ; first head layer
  // weighs input blocks 2 and 3 identically. Then density(x,y,z) ==
  // density(y,x,z).
  const int R = 4, F = 1;
  MlpSpec dspec{{3, 4, 1}};
  MlpSpec cspec{{3, 4, 3}};
  TriplaneField f(R, F, dspec, cspec);
  Rng rng(31);
  auto idx = [&](int plane, int a, int b) { return (std::size_t(plane) * R * R + std::size_t(a) * R + b) * F; };
  for (int a = 0; a < R; ++a)
    for (int b = a; b < R; ++b) {
      double v = rng.uniform(-1, 1);
      f.values()[idx(0, a, b)] = v;
      f.values()[idx(0, b, a)] = v;
    }
  for (int a = 0; a < R; ++a)
    for (int b = 0; b < R; ++b) {
      double v = rng.uniform(-1, 1);
      f.values()[idx(1, a, b)] = v;
      f.values()[idx(2, a, b)] = v;
    }
  for (std::size_t i = f.density_head_begin(); i < f.density_head_end(); ++i)
    f.values()[i] = rng.uniform(-1, 1);
  // tie columns 1 and 2 (the XZ and YZ features) of the first layer
  std::size_t b0 = f.density_head_begin();
  for (int row = 0; row < 4; ++row) f.values()[b0 + 3 * row + 2] = f.values()[b0 + 3 * row + 1];

  for (int i = 0; i < 30; ++i) {
    Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    Vec3 q(p.y(), p.x(), p.z());
    CHECK(f.density(p) == doctest::Approx(f.density(q)).epsilon(1e-12));
  }
}

TEST_CASE("checkpoint round trip") {
  TriplaneField f(4, 2, 8, 99);
  auto bytes = f.serialize();
  TriplaneField g = TriplaneField::deserialize(bytes);
  CHECK(g.resolution() == f.resolution());
  CHECK(g.feature_dim() == f.feature_dim());
  REQUIRE(g.param_count() == f.param_count());
  // parameters are stored as float32; after one round trip the values
  // are float32-representable and the format round-trips bit-exactly
  for (std::size_t i = 0; i < f.param_count(); ++i)
    CHECK(g.values()[i] == doctest::Approx(f.values()[i]).epsilon(1e-6));
  auto bytes2 = g.serialize();
  CHECK(bytes2 == bytes);
  TriplaneField h = TriplaneField::deserialize(bytes2);
  CHECK(h.values() == g.values());
}

TEST_CASE("checkpoint error paths") {
  TriplaneField f(4, 2, 8, 1);
  auto bytes = f.serialize();
  auto bad = bytes;
  bad[0] ^= 0xff;
  CHECK_THROWS_AS(TriplaneField::deserialize(bad), BadMagic);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 8);
  CHECK_THROWS_AS(TriplaneField::deserialize(truncated), TruncatedPayload);

  auto wrong_version = bytes;
  wrong_version[4] = 0x7f;
  CHECK_THROWS_AS(TriplaneField::deserialize(wrong_version), VersionMismatch);
}

TEST_CASE("seeded construction is deterministic and near-transparent") {
  TriplaneField a(8, 2, 16, 42);
  TriplaneField b(8, 2, 16, 42);
  CHECK(a.values() == b.values());
  TriplaneField c(8, 2, 16, 43);
  CHECK(a.values() != c.values());

  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    CHECK(a.density(p) < 0.05);
    Vec3 rgb = a.color(p);
    for (int ch = 0; ch < 3; ++ch) {
      CHECK(rgb[ch] >= 0.0);
      CHECK(rgb[ch] <= 1.0);
    }
  }
}

TEST_CASE("baked field matches the source at grid nodes") {
  TriplaneField f(6, 2, 8, 7);
  Rng rng(13);
  for (double& v : f.values()) v = rng.uniform(-0.5, 0.5);
  const int G = 16;
  BakedField baked(f, G);
  for (int i = 0; i <= G; i += 4)
    for (int j = 0; j <= G; j += 4)
      for (int k = 0; k <= G; k += 4) {
        Vec3 p(2.0 * i / G - 1, 2.0 * j / G - 1, 2.0 * k / G - 1);
        CHECK(baked.density(p) == doctest::Approx(f.density(p)).epsilon(1e-10));
        CHECK((baked.color(p) - f.color(p)).norm() < 1e-10);
      }
  // interior points are close for a smooth field at this resolution
  for (int i = 0; i < 10; ++i) {
    Vec3 p(rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9));
    CHECK(std::abs(baked.density(p) - f.density(p)) < 0.05);
  }
}
