#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sv3d/geometry.hpp"

#include <cmath>
#include <set>

using namespace sv3d;
using namespace sv3d::geometry;

namespace {

CameraPose make_pose(double az, double el, double roll = 0.0, double r = 1.5) {
  CameraPose p;
  p.azimuth_deg = az;
  p.elevation_deg = el;
  p.roll_deg = roll;
  p.radius = r;
  return p;
}

}  // namespace

TEST_CASE("camera position on the viewing sphere") {
  Vec3 p0 = camera_position(make_pose(0, 0));
  CHECK(p0.isApprox(Vec3(1.5, 0, 0), 1e-12));

  Vec3 p90 = camera_position(make_pose(90, 0));
  CHECK((p90 - Vec3(0, 1.5, 0)).norm() < 1e-12);

  Vec3 up = camera_position(make_pose(30, 90));
  CHECK((up - Vec3(0, 0, 1.5)).norm() < 1e-12);

  // radius scales the position linearly
  Vec3 far = camera_position(make_pose(12, -40, 0, 3.0));
  CHECK(std::abs(far.norm() - 3.0) < 1e-12);
}

TEST_CASE("center ray points at the origin") {
  for (double az : {0.0, 45.0, 90.0, -135.0}) {
    for (double el : {-60.0, 0.0, 30.0}) {
      CameraPose pose = make_pose(az, el);
      Ray ray = pixel_ray(pose, 0.5 * pose.width, 0.5 * pose.height);
      Vec3 cam = camera_position(pose);
      CHECK((ray.origin - cam).norm() < 1e-12);
      // direction is the unit vector from camera to origin
      CHECK((ray.direction - (-cam.normalized())).norm() < 1e-12);
      CHECK(std::abs(ray.direction.norm() - 1.0) < 1e-12);
    }
  }

  // hand values for azimuth 0 and 90 at elevation 0
  Ray r0 = pixel_ray(make_pose(0, 0), 32, 32);
  CHECK((r0.origin - Vec3(1.5, 0, 0)).norm() < 1e-12);
  CHECK((r0.direction - Vec3(-1, 0, 0)).norm() < 1e-12);
  Ray r90 = pixel_ray(make_pose(90, 0), 32, 32);
  CHECK((r90.origin - Vec3(0, 1.5, 0)).norm() < 1e-12);
  CHECK((r90.direction - Vec3(0, -1, 0)).norm() < 1e-12);
}

TEST_CASE("corner pixel ray of a 3x3 fov-60 camera") {
  // Independently derived: s = 2 tan(30 deg) / 3, pixel (0,0) center at
  // (0.5, 0.5) gives screen coords (-s, +s); with the camera on +x the
  // basis is right=(0,1,0), up=(0,0,1), forward=(-1,0,0).
  CameraPose pose = make_pose(0, 0);
  pose.fov_deg = 60.0;
  pose.width = 3;
  pose.height = 3;
  Ray ray = pixel_ray(pose, 0.5, 0.5);
  CHECK((ray.origin - Vec3(1.5, 0, 0)).norm() < 1e-12);
  Vec3 expect(-0.87831006565367975, -0.33806170189140655, 0.33806170189140655);
  CHECK((ray.direction - expect).norm() < 1e-9);
}

TEST_CASE("ray t bounds bracket the unit cube") {
  CameraPose pose = make_pose(20, 10);  // radius 1.5 < sqrt(3): near clamps
  Ray ray = pixel_ray(pose, 32, 32);
  CHECK(ray.t_near == doctest::Approx(1e-3));
  CHECK(ray.t_far == doctest::Approx(1.5 + std::sqrt(3.0)));

  CameraPose pose_far = make_pose(20, 10, 0, 3.0);
  Ray rf = pixel_ray(pose_far, 32, 32);
  CHECK(rf.t_near == doctest::Approx(3.0 - std::sqrt(3.0)));
  CHECK(rf.t_far == doctest::Approx(3.0 + std::sqrt(3.0)));
}

TEST_CASE("pose_to_rays is row-major and matches pixel_ray") {
  CameraPose pose = make_pose(33, -12, 5);
  pose.width = 5;
  pose.height = 4;
  auto rays = pose_to_rays(pose);
  REQUIRE(rays.size() == 20);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      Ray expect = pixel_ray(pose, x + 0.5, y + 0.5);
      const Ray& got = rays[std::size_t(y) * 5 + x];
      CHECK((got.origin - expect.origin).norm() < 1e-15);
      CHECK((got.direction - expect.direction).norm() < 1e-15);
    }
  }
}

TEST_CASE("rotation matrix is orthonormal with det +1") {
  for (double az : {0.0, 17.0, -120.0}) {
    for (double el : {0.0, 45.0, -89.0}) {
      for (double roll : {0.0, 30.0}) {
        Mat3 R = camera_rotation(make_pose(az, el, roll));
        CHECK((R.transpose() * R - Mat3::Identity()).norm() < 1e-12);
        CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("plucker coordinates") {
  // hand oracle for the corner ray of the 3x3 fov-60 camera
  CameraPose pose = make_pose(0, 0);
  pose.fov_deg = 60.0;
  pose.width = 3;
  pose.height = 3;
  PluckerRay pl = plucker(pixel_ray(pose, 0.5, 0.5));
  Vec3 m_expect(0.0, -0.50709255283710986, -0.50709255283710986);
  CHECK((pl.moment - m_expect).norm() < 1e-9);

  // invariants over sampled poses: unit direction, d . m = 0, and the
  // moment is invariant to sliding the origin along the ray
  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    CameraPose p = make_pose(rng.uniform(-180, 180), rng.uniform(-85, 85), rng.uniform(0, 360));
    Ray ray = pixel_ray(p, rng.uniform(0, p.width), rng.uniform(0, p.height));
    PluckerRay a = plucker(ray);
    CHECK(std::abs(a.direction.norm() - 1.0) < 1e-12);
    CHECK(std::abs(a.direction.dot(a.moment)) < 1e-12);
    Ray slid = ray;
    slid.origin += 0.37 * ray.direction;
    PluckerRay b = plucker(slid);
    CHECK((a.moment - b.moment).norm() < 1e-12);
  }
}

TEST_CASE("canonical rig azimuth sets") {
  auto azimuths = [](const CanonicalRig& rig) {
    std::multiset<double> s;
    for (const auto& p : rig.poses) s.insert(p.azimuth_deg);
    return s;
  };

  CanonicalRig rig0 = build_canonical_rig(0.0, 50.0, 64, 64);
  REQUIRE(rig0.poses.size() == 8);
  std::multiset<double> expect0{-135, -90, -45, 0, 45, 90, 135, 180};
  CHECK(azimuths(rig0) == expect0);
  for (const auto& p : rig0.poses) {
    CHECK(p.elevation_deg == 0.0);
    CHECK(p.radius == doctest::Approx(1.5));
    CHECK(p.fov_deg == doctest::Approx(50.0));
  }
  // sorted by azimuth
  for (std::size_t i = 1; i < rig0.poses.size(); ++i)
    CHECK(rig0.poses[i - 1].azimuth_deg < rig0.poses[i].azimuth_deg);

  CanonicalRig rig10 = build_canonical_rig(10.0, 50.0, 64, 64);
  std::multiset<double> expect10{-170, -125, -80, -35, 10, 55, 100, 145};
  CHECK(azimuths(rig10) == expect10);
}

TEST_CASE("center_object homography oracle") {
  // mask bounding box spans pixels [10, 19] x [10, 19] in a 100x100
  // image; margin 0 and out_size 64 give scale 64/10 = 6.4 and a
  // translation mapping input (10, 10) to output (0, 0).
  Image img(100, 100, 3);
  Image mask(100, 100, 1);
  for (int y = 10; y < 20; ++y)
    for (int x = 10; x < 20; ++x) {
      mask.at(y, x, 0) = 1.0;
      img.at(y, x, 0) = 1.0;
    }
  auto [out, H] = center_object(img, mask, 0.0, 64);
  CHECK(out.width == 64);
  CHECK(out.height == 64);
  CHECK(H(0, 0) == doctest::Approx(6.4));
  CHECK(H(1, 1) == doctest::Approx(6.4));
  Vec3 mapped = H * Vec3(10, 10, 1);
  CHECK(mapped.x() / mapped.z() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(mapped.y() / mapped.z() == doctest::Approx(0.0).epsilon(1e-9));
  Vec3 far_corner = H * Vec3(20, 20, 1);
  CHECK(far_corner.x() / far_corner.z() == doctest::Approx(64.0));
}

TEST_CASE("center_object identity and empty mask") {
  Image img(32, 32, 3);
  Image mask(32, 32, 1);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      mask.at(y, x, 0) = 1.0;
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = (x * 7 + y * 3 + c) % 11 / 10.0;
    }
  auto [out, H] = center_object(img, mask, 0.0, 32);
  CHECK((H - Mat3::Identity()).norm() < 1e-9);
  double max_err = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i)
    max_err = std::max(max_err, std::abs(out.data[i] - img.data[i]));
  CHECK(max_err < 1e-9);

  Image empty_mask(32, 32, 1);
  CHECK_THROWS_AS(center_object(img, empty_mask, 0.1, 32), EmptyMask);
}

TEST_CASE("rotation geodesic distance") {
  CameraPose a = make_pose(10, 20, 30);
  CHECK(rotation_geodesic_deg(a, a) == doctest::Approx(0.0));

  // 90 degree azimuth separation at zero elevation is a 90 degree
  // rotation about the z axis
  CHECK(rotation_geodesic_deg(make_pose(0, 0), make_pose(90, 0)) == doctest::Approx(90.0));
  CHECK(rotation_geodesic_deg(make_pose(0, 0), make_pose(180, 0)) == doctest::Approx(180.0));
  // roll about the viewing axis is also a pure rotation by that angle
  CHECK(rotation_geodesic_deg(make_pose(0, 0, 0), make_pose(0, 0, 25)) == doctest::Approx(25.0));

  // symmetry and triangle inequality over sampled poses
  Rng rng(11);
  for (int i = 0; i < 30; ++i) {
    CameraPose x = make_pose(rng.uniform(-180, 180), rng.uniform(-85, 85), rng.uniform(0, 360));
    CameraPose y = make_pose(rng.uniform(-180, 180), rng.uniform(-85, 85), rng.uniform(0, 360));
    CameraPose z = make_pose(rng.uniform(-180, 180), rng.uniform(-85, 85), rng.uniform(0, 360));
    double dxy = rotation_geodesic_deg(x, y);
    double dyx = rotation_geodesic_deg(y, x);
    CHECK(dxy == doctest::Approx(dyx).epsilon(1e-10));
    CHECK(dxy >= 0.0);
    CHECK(dxy <= 180.0 + 1e-12);
    CHECK(dxy <= rotation_geodesic_deg(x, z) + rotation_geodesic_deg(z, y) + 1e-9);
  }
}
