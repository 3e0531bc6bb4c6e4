#pragma once

#include "sv3d/common.hpp"

#include <utility>
#include <vector>

namespace sv3d::geometry {

struct EmptyMask : std::runtime_error {
  EmptyMask() : std::runtime_error("center_object: mask has no foreground pixels") {}
};

// Spherical camera pose: the camera sits at radius `radius` from the
// world origin, at the given azimuth/elevation, and always looks at the
// origin. The world is z-up right-handed; `roll_deg` rotates the image
// plane about the viewing axis.
struct CameraPose {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double roll_deg = 0.0;
  double radius = 1.5;
  double fov_deg = 50.0;  // vertical field of view
  int width = 64;
  int height = 64;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
  double t_near = 0.0;
  double t_far = 1.0;
};

struct PluckerRay {
  Vec3 direction;
  Vec3 moment;  // origin x direction
};

struct CanonicalRig {
  double reference_azimuth_deg = 0.0;
  std::vector<CameraPose> poses;  // 8 poses, sorted by azimuth
};

Vec3 camera_position(const CameraPose& pose);

// World-from-camera rotation; columns are (right, up, -forward), i.e.
// the camera looks down its local -z axis.
Mat3 camera_rotation(const CameraPose& pose);

// Pinhole ray through the center of each pixel, row-major (ray for
// pixel (row, col) at index row * width + col). t bounds default to
// radius -/+ sqrt(3) clamped positive so rays span the [-1,1]^3 field.
std::vector<Ray> pose_to_rays(const CameraPose& pose);
Ray pixel_ray(const CameraPose& pose, double px_x, double px_y);

PluckerRay plucker(const Ray& ray);

// Projects a world point to continuous pixel coordinates; false when
// the point is not strictly in front of the camera.
bool project_point(const CameraPose& pose, const Vec3& p, double* px_x, double* px_y);

CanonicalRig build_canonical_rig(double reference_azimuth_deg, double fov_deg, int width,
                                 int height);

// Crops the mask's bounding region (expanded to a square plus margin)
// and rescales it onto an out_size x out_size image. Returns the
// similarity homography H mapping input pixel coordinates to output
// pixel coordinates. Pixels sampled outside the input are black.
std::pair<Image, Mat3> center_object(const Image& image, const Image& mask, double margin,
                                     int out_size);

// Geodesic angle between the two camera rotations, in [0, 180].
double rotation_geodesic_deg(const CameraPose& a, const CameraPose& b);

// poses.json (de)serialization lives in sv3d/io.hpp.

}  // namespace sv3d::geometry
