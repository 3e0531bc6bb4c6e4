#pragma once

#include "sv3d/common.hpp"
#include "sv3d/field.hpp"
#include "sv3d/geometry.hpp"
#include "sv3d/render.hpp"

#include <array>
#include <vector>

namespace sv3d::meshing {

struct EmptySurface : std::runtime_error {
  EmptySurface() : std::runtime_error("marching_cubes: no cell straddles the iso level") {}
};
struct DegenerateEdge : std::runtime_error {
  DegenerateEdge() : std::runtime_error("diffmc_backward: |g_b - g_a| below 1e-9") {}
};

// Scalar density samples at the (G+1)^3 nodes of a lattice over
// [-1,1]^3, plus per-node deformation offsets bounded to half a cell.
struct DensityGrid {
  int resolution = 0;  // G
  double iso = 2.0;
  std::vector<double> values;
  std::vector<Vec3> deform;

  double cell_size() const { return 2.0 / resolution; }
  std::size_t index(int i, int j, int k) const {
    std::size_t n = resolution + 1;
    return (std::size_t(k) * n + j) * n + i;
  }
  Vec3 node_base(int i, int j, int k) const {
    return Vec3(-1.0 + 2.0 * i / resolution, -1.0 + 2.0 * j / resolution,
                -1.0 + 2.0 * k / resolution);
  }
  Vec3 node_pos(int i, int j, int k) const { return node_base(i, j, k) + deform[index(i, j, k)]; }
};

// Per-vertex provenance: the grid edge (node indices) and interpolation
// weight that produced it, v = p_a + u (p_b - p_a).
struct VertexProvenance {
  std::size_t node_a = 0, node_b = 0;
  double u = 0.5;
};

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<VertexProvenance> provenance;  // empty for meshes loaded from files
};

// Evaluates the field's density at every (possibly deformed) node.
DensityGrid bake_density_grid(const RadianceField& field, int G, double iso);

// Standard 256-case marching cubes on the density grid; a node is
// inside where its value exceeds the iso level. Vertices are welded
// across cells, so closed iso-surfaces come out watertight.
TriMesh marching_cubes(const DensityGrid& grid);

// Vertex gradients dL/dg and dL/ddeform from per-vertex adjoints, via
// du/dg_a = (iso - g_b)/(g_b - g_a)^2 and du/dg_b = (g_a - iso)/(g_b - g_a)^2.
void diffmc_backward(const TriMesh& mesh, const DensityGrid& grid,
                     const std::vector<Vec3>& d_vertices, std::vector<double>& d_values,
                     std::vector<Vec3>& d_deform);

struct RasterOutput {
  int width = 0, height = 0;
  Image rgb;    // colors queried from the field at surface points
  Image depth;  // distance along the pixel ray
  Image mask;
  std::vector<int> tri_id;             // -1 where uncovered
  std::vector<Vec3> barycentric;       // screen-space barycentrics
  std::vector<Vec3> point;             // world-space surface point
};

// Z-buffered perspective rasterization; ties at equal depth keep the
// lower triangle id.
RasterOutput rasterize(const TriMesh& mesh, const geometry::CameraPose& pose,
                       const RadianceField& field);

struct GeoWeights {
  double lambda_p = 0.5;
  double lambda_d = 0.5;
  double lambda_m = 1.0;
  double lambda_r = 0.01;
};

// L_geo = MSE_rgb + lp*proxy + ld*MSE_depth(mask intersection)
//       + lm*MSE_mask + lr*mean(a(1-a))
double loss_geo(const RasterOutput& raster, const render::Observation& target,
                const GeoWeights& weights, const Image& alpha_from_volume);

// Adjoint of the ray-plane intersection depth t with respect to the
// triangle vertices, accumulated into dv0..dv2.
void ray_plane_t_vjp(const Vec3& origin, const Vec3& dir, const Vec3& v0, const Vec3& v1,
                     const Vec3& v2, double d_t, Vec3& dv0, Vec3& dv1, Vec3& dv2);

struct RefineGeoConfig {
  int steps = 60;
  int grid_resolution = 32;
  double iso = 2.0;
  double lr = 2e-3;
  double lr_deform = 1e-3;
  int alpha_size = 32;    // resolution of the opacity-regularizer pass
  int alpha_samples = 24;
  GeoWeights weights;
  std::uint64_t seed = 0;
};

struct RefineGeoResult {
  field::TriplaneField field;
  std::vector<Vec3> deform;
  std::vector<double> loss_curve;
};

// Stage-two training: bake -> marching cubes -> rasterize -> L_geo,
// with gradients reaching the field both through surface colors and
// through vertex positions.
RefineGeoResult refine_geometry(const field::TriplaneField& field,
                                const std::vector<render::Observation>& observations,
                                const RefineGeoConfig& config);

}  // namespace sv3d::meshing
