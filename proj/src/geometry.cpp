#include "sv3d/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace sv3d::geometry {

Vec3 camera_position(const CameraPose& pose) {
  double az = deg2rad(pose.azimuth_deg);
  double el = deg2rad(pose.elevation_deg);
  return pose.radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

Mat3 camera_rotation(const CameraPose& pose) {
  Vec3 pos = camera_position(pose);
  Vec3 forward = (-pos).normalized();
  Vec3 world_up(0.0, 0.0, 1.0);
  Vec3 right = forward.cross(world_up);
  if (right.norm() < 1e-9) {
    // looking straight up/down; pick the azimuth meridian as reference
    double az = deg2rad(pose.azimuth_deg);
    right = Vec3(-std::sin(az), std::cos(az), 0.0);
  }
  right.normalize();
  Vec3 up = right.cross(forward);
  double roll = deg2rad(pose.roll_deg);
  Vec3 r2 = std::cos(roll) * right + std::sin(roll) * up;
  Vec3 u2 = -std::sin(roll) * right + std::cos(roll) * up;
  Mat3 R;
  R.col(0) = r2;
  R.col(1) = u2;
  R.col(2) = -forward;
  return R;
}

Ray pixel_ray(const CameraPose& pose, double px_x, double px_y) {
  Vec3 pos = camera_position(pose);
  Mat3 R = camera_rotation(pose);
  double tan_half = std::tan(0.5 * deg2rad(pose.fov_deg));
  double sx = (px_x - 0.5 * pose.width) * (2.0 * tan_half / pose.height);
  double sy = (0.5 * pose.height - px_y) * (2.0 * tan_half / pose.height);
  Vec3 dir = (R.col(0) * sx + R.col(1) * sy - R.col(2)).normalized();
  Ray ray;
  ray.origin = pos;
  ray.direction = dir;
  ray.t_near = std::max(pose.radius - std::sqrt(3.0), 1e-3);
  ray.t_far = pose.radius + std::sqrt(3.0);
  return ray;
}

std::vector<Ray> pose_to_rays(const CameraPose& pose) {
  std::vector<Ray> rays;
  rays.reserve(std::size_t(pose.width) * pose.height);
  for (int y = 0; y < pose.height; ++y)
    for (int x = 0; x < pose.width; ++x) rays.push_back(pixel_ray(pose, x + 0.5, y + 0.5));
  return rays;
}

PluckerRay plucker(const Ray& ray) {
  return PluckerRay{ray.direction, ray.origin.cross(ray.direction)};
}

bool project_point(const CameraPose& pose, const Vec3& p, double* px_x, double* px_y) {
  Vec3 cam = camera_rotation(pose).transpose() * (p - camera_position(pose));
  if (cam.z() >= -1e-9) return false;  // camera looks down -z
  double tan_half = std::tan(0.5 * deg2rad(pose.fov_deg));
  double s = 2.0 * tan_half / pose.height;
  double sx = -cam.x() / cam.z();
  double sy = -cam.y() / cam.z();
  *px_x = sx / s + 0.5 * pose.width;
  *px_y = 0.5 * pose.height - sy / s;
  return true;
}

CanonicalRig build_canonical_rig(double reference_azimuth_deg, double fov_deg, int width,
                                 int height) {
  CanonicalRig rig;
  rig.reference_azimuth_deg = reference_azimuth_deg;
  std::set<double> azimuths;
  for (double off : {0.0, 45.0, -45.0, 90.0, -90.0, 135.0, -135.0, 180.0, -180.0}) {
    double a = std::fmod(reference_azimuth_deg + off, 360.0);
    // normalize to (-180, 180]
    if (a <= -180.0) a += 360.0;
    if (a > 180.0) a -= 360.0;
    azimuths.insert(a);
  }
  for (double a : azimuths) {
    CameraPose p;
    p.azimuth_deg = a;
    p.elevation_deg = 0.0;
    p.roll_deg = 0.0;
    p.radius = 1.5;
    p.fov_deg = fov_deg;
    p.width = width;
    p.height = height;
    rig.poses.push_back(p);
  }
  return rig;
}

std::pair<Image, Mat3> center_object(const Image& image, const Image& mask, double margin,
                                     int out_size) {
  int xmin = mask.width, xmax = -1, ymin = mask.height, ymax = -1;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x, 0) > 0.5) {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
  if (xmax < 0) throw EmptyMask();

  // continuous bbox: pixel x spans [x, x+1)
  double bw = double(xmax + 1 - xmin);
  double bh = double(ymax + 1 - ymin);
  double cx = 0.5 * (xmin + xmax + 1);
  double cy = 0.5 * (ymin + ymax + 1);
  double side = std::max(bw, bh) * (1.0 + 2.0 * margin);
  double scale = double(out_size) / side;

  Mat3 H = Mat3::Identity();
  H(0, 0) = scale;
  H(1, 1) = scale;
  H(0, 2) = scale * (side / 2.0 - cx);
  H(1, 2) = scale * (side / 2.0 - cy);

  Image out(out_size, out_size, image.channels);
  double inv_scale = 1.0 / scale;
  for (int y = 0; y < out_size; ++y) {
    for (int x = 0; x < out_size; ++x) {
      // inverse map output pixel center into input coordinates
      double ix = (x + 0.5 - H(0, 2)) * inv_scale;
      double iy = (y + 0.5 - H(1, 2)) * inv_scale;
      double fx = ix - 0.5, fy = iy - 0.5;
      int x0 = int(std::floor(fx)), y0 = int(std::floor(fy));
      double wx = fx - x0, wy = fy - y0;
      for (int c = 0; c < image.channels; ++c) {
        auto sample = [&](int yy, int xx) -> double {
          if (xx < 0 || yy < 0 || xx >= image.width || yy >= image.height) return 0.0;
          return image.at(yy, xx, c);
        };
        out.at(y, x, c) = (1 - wy) * ((1 - wx) * sample(y0, x0) + wx * sample(y0, x0 + 1)) +
                          wy * ((1 - wx) * sample(y0 + 1, x0) + wx * sample(y0 + 1, x0 + 1));
      }
    }
  }
  return {out, H};
}

double rotation_geodesic_deg(const CameraPose& a, const CameraPose& b) {
  Mat3 rel = camera_rotation(a).transpose() * camera_rotation(b);
  double c = std::clamp(0.5 * (rel.trace() - 1.0), -1.0, 1.0);
  return rad2deg(std::acos(c));
}

}  // namespace sv3d::geometry
