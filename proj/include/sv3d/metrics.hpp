#pragma once

#include "sv3d/common.hpp"
#include "sv3d/geometry.hpp"
#include "sv3d/meshing.hpp"

#include <map>
#include <vector>

namespace sv3d::metrics {

struct EmptySet : std::runtime_error {
  EmptySet() : std::runtime_error("chamfer: empty point set") {}
};
struct EmptyMesh : std::runtime_error {
  EmptyMesh() : std::runtime_error("normalize_mesh: empty mesh") {}
};
struct NotWatertight : std::runtime_error {
  NotWatertight() : std::runtime_error("volume_iou: mesh has an edge not shared by 2 triangles") {}
};
struct DegenerateUnion : std::runtime_error {
  DegenerateUnion() : std::runtime_error("volume_iou: voxelized union is empty") {}
};
struct DegenerateGeometry : std::runtime_error {
  DegenerateGeometry() : std::runtime_error("icp_align: collinear or coincident points") {}
};
struct LengthMismatch : std::runtime_error {
  LengthMismatch() : std::runtime_error("pose_accuracy: list lengths differ") {}
};

// 10 log10(1/MSE), capped at 99 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);

// Mean local SSIM on luma, 11x11 Gaussian window sigma 1.5,
// C1 = 0.01^2, C2 = 0.03^2 on the [0,1] range.
double ssim(const Image& a, const Image& b);

// Symmetric mean nearest-neighbor Euclidean distance (unsquared).
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

bool is_watertight(const meshing::TriMesh& mesh);

// Voxel-occupancy IoU by ray-parity test along +x, over the joint
// bounding cube at resolution G.
double volume_iou(const meshing::TriMesh& a, const meshing::TriMesh& b, int G = 64);

// Translates the bbox center to the origin and scales the longest bbox
// side to 1.
meshing::TriMesh normalize_mesh(const meshing::TriMesh& m);

// Area-weighted uniform surface sampling.
std::vector<Vec3> sample_mesh_points(const meshing::TriMesh& m, int n_points, std::uint64_t seed);

struct MeshAlignment {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;  // fixed 1; normalize_mesh handles scale
  double rmse = 0.0;
};

struct IcpConfig {
  int max_iterations = 50;
  double tolerance = 1e-7;
};

// Point-to-point ICP with closed-form (SVD Procrustes) rotation.
MeshAlignment icp_align(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                        const IcpConfig& config = {});

// Fraction of estimates within each geodesic-rotation threshold.
std::map<double, double> pose_accuracy(const std::vector<geometry::CameraPose>& estimates,
                                       const std::vector<geometry::CameraPose>& ground_truth,
                                       const std::vector<double>& thresholds_deg = {15.0, 30.0});

struct MetricsReport {
  std::vector<double> psnr_db;
  std::vector<double> ssim;
  std::vector<double> perceptual_proxy;
  double chamfer = 0.0;
  double volume_iou = 0.0;
  double icp_rmse = 0.0;
  std::map<double, double> pose_accuracy;
};

}  // namespace sv3d::metrics
