#include "sv3d/meshing.hpp"

#include "sv3d/mc_tables.hpp"
#include "sv3d/optim.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace sv3d::meshing {

DensityGrid bake_density_grid(const RadianceField& field, int G, double iso) {
  DensityGrid grid;
  grid.resolution = G;
  grid.iso = iso;
  std::size_t n = std::size_t(G + 1);
  grid.values.resize(n * n * n);
  grid.deform.assign(n * n * n, Vec3::Zero());
  parallel_ranges(n * n * n, 64, [&](std::size_t lo, std::size_t hi, int) {
    for (std::size_t idx = lo; idx < hi; ++idx) {
      int i = int(idx % n);
      int j = int((idx / n) % n);
      int k = int(idx / (n * n));
      grid.values[idx] = field.density(grid.node_pos(i, j, k));
    }
  });
  // force the outermost layer outside so iso-surfaces that would leak
  // through the domain boundary are closed (keeps meshes watertight)
  for (int k = 0; k <= G; ++k)
    for (int j = 0; j <= G; ++j)
      for (int i = 0; i <= G; ++i)
        if (i == 0 || j == 0 || k == 0 || i == G || j == G || k == G) {
          double& v = grid.values[grid.index(i, j, k)];
          v = std::min(v, iso - 1e-3);
        }
  return grid;
}

namespace {

constexpr int kCornerOffset[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                     {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace

TriMesh marching_cubes(const DensityGrid& grid) {
  TriMesh mesh;
  const int G = grid.resolution;
  const double iso = grid.iso;
  std::unordered_map<std::uint64_t, int> edge_vertex;
  std::size_t n_nodes = std::size_t(G + 1) * (G + 1) * (G + 1);

  auto vertex_on_edge = [&](std::size_t na, std::size_t nb) -> int {
    if (na > nb) std::swap(na, nb);
    std::uint64_t key = std::uint64_t(na) * n_nodes + nb;
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    double ga = grid.values[na], gb = grid.values[nb];
    double u = (iso - ga) / (gb - ga);
    u = std::clamp(u, 1e-6, 1.0 - 1e-6);
    auto unpack = [&](std::size_t idx) {
      int i = int(idx % (G + 1));
      int j = int((idx / (G + 1)) % (G + 1));
      int k = int(idx / ((G + 1) * std::size_t(G + 1)));
      return grid.node_pos(i, j, k);
    };
    Vec3 pa = unpack(na), pb = unpack(nb);
    int id = int(mesh.vertices.size());
    mesh.vertices.push_back(pa + u * (pb - pa));
    mesh.provenance.push_back(VertexProvenance{na, nb, u});
    edge_vertex.emplace(key, id);
    return id;
  };

  for (int k = 0; k < G; ++k)
    for (int j = 0; j < G; ++j)
      for (int i = 0; i < G; ++i) {
        std::size_t corner_idx[8];
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          corner_idx[c] = grid.index(i + kCornerOffset[c][0], j + kCornerOffset[c][1],
                                     k + kCornerOffset[c][2]);
          // density above iso counts as inside
          if (grid.values[corner_idx[c]] > iso) cube |= 1 << c;
        }
        if (kEdgeTable[cube] == 0) continue;
        int edge_verts[12];
        for (int e = 0; e < 12; ++e)
          if (kEdgeTable[cube] & (1 << e))
            edge_verts[e] = vertex_on_edge(corner_idx[kEdgeCorners[e][0]],
                                           corner_idx[kEdgeCorners[e][1]]);
        for (const int* t = kTriTable[cube]; *t != -1; t += 3) {
          // reversed emission order: with "inside = value > iso" the
          // table's winding points inward, we want CCW-outward
          std::array<int, 3> tri = {edge_verts[t[0]], edge_verts[t[2]], edge_verts[t[1]]};
          // near-zero-area triangles (nodes almost exactly at iso) are
          // kept: dropping them would open holes in the edge manifold
          mesh.triangles.push_back(tri);
        }
      }

  if (mesh.triangles.empty()) throw EmptySurface();
  return mesh;
}

void diffmc_backward(const TriMesh& mesh, const DensityGrid& grid,
                     const std::vector<Vec3>& d_vertices, std::vector<double>& d_values,
                     std::vector<Vec3>& d_deform) {
  const double iso = grid.iso;
  d_values.assign(grid.values.size(), 0.0);
  d_deform.assign(grid.values.size(), Vec3::Zero());
  auto node_of = [&](std::size_t idx) {
    int n = grid.resolution + 1;
    int i = int(idx % n);
    int j = int((idx / n) % n);
    int k = int(idx / (std::size_t(n) * n));
    return grid.node_pos(i, j, k);
  };
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const Vec3& dv = d_vertices[v];
    if (dv.squaredNorm() == 0.0) continue;
    const auto& prov = mesh.provenance[v];
    double ga = grid.values[prov.node_a], gb = grid.values[prov.node_b];
    double diff = gb - ga;
    if (std::abs(diff) < 1e-9) throw DegenerateEdge();
    Vec3 pa = node_of(prov.node_a), pb = node_of(prov.node_b);
    double du = dv.dot(pb - pa);
    d_values[prov.node_a] += du * (iso - gb) / (diff * diff);
    d_values[prov.node_b] += du * (ga - iso) / (diff * diff);
    d_deform[prov.node_a] += (1.0 - prov.u) * dv;
    d_deform[prov.node_b] += prov.u * dv;
  }
}

RasterOutput rasterize(const TriMesh& mesh, const geometry::CameraPose& pose,
                       const RadianceField& field) {
  RasterOutput out;
  out.width = pose.width;
  out.height = pose.height;
  out.rgb = Image(pose.width, pose.height, 3);
  out.depth = Image(pose.width, pose.height, 1);
  out.mask = Image(pose.width, pose.height, 1);
  std::size_t n_px = std::size_t(pose.width) * pose.height;
  out.tri_id.assign(n_px, -1);
  out.barycentric.assign(n_px, Vec3::Zero());
  out.point.assign(n_px, Vec3::Zero());

  Mat3 R = geometry::camera_rotation(pose);
  Vec3 cam_pos = geometry::camera_position(pose);
  double tan_half = std::tan(0.5 * deg2rad(pose.fov_deg));
  double focal = pose.height / (2.0 * tan_half);

  // project once
  std::vector<Eigen::Vector2d> screen(mesh.vertices.size());
  std::vector<bool> valid(mesh.vertices.size());
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    Vec3 pc = R.transpose() * (mesh.vertices[v] - cam_pos);
    valid[v] = pc.z() < -1e-9;
    if (valid[v])
      screen[v] = Eigen::Vector2d(pc.x() / -pc.z() * focal + 0.5 * pose.width,
                                  0.5 * pose.height - pc.y() / -pc.z() * focal);
  }

  std::vector<double> zbuf(n_px, std::numeric_limits<double>::infinity());
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    const auto& tri = mesh.triangles[t];
    if (!valid[tri[0]] || !valid[tri[1]] || !valid[tri[2]]) continue;
    Eigen::Vector2d a = screen[tri[0]], b = screen[tri[1]], c = screen[tri[2]];
    double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
    if (std::abs(area) < 1e-12) continue;
    int x0 = std::max(0, int(std::floor(std::min({a.x(), b.x(), c.x()}) - 0.5)));
    int x1 = std::min(pose.width - 1, int(std::ceil(std::max({a.x(), b.x(), c.x()}))));
    int y0 = std::max(0, int(std::floor(std::min({a.y(), b.y(), c.y()}) - 0.5)));
    int y1 = std::min(pose.height - 1, int(std::ceil(std::max({a.y(), b.y(), c.y()}))));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        Eigen::Vector2d p(x + 0.5, y + 0.5);
        double w0 = ((b - p).x() * (c - p).y() - (b - p).y() * (c - p).x()) / area;
        double w1 = ((c - p).x() * (a - p).y() - (c - p).y() * (a - p).x()) / area;
        double w2 = 1.0 - w0 - w1;
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        geometry::Ray ray = geometry::pixel_ray(pose, x + 0.5, y + 0.5);
        const Vec3& v0 = mesh.vertices[tri[0]];
        Vec3 n = (mesh.vertices[tri[1]] - v0).cross(mesh.vertices[tri[2]] - v0);
        double denom = ray.direction.dot(n);
        if (std::abs(denom) < 1e-14) continue;
        double depth = (v0 - ray.origin).dot(n) / denom;
        if (depth <= 0.0) continue;
        std::size_t px = std::size_t(y) * pose.width + x;
        if (depth < zbuf[px]) {
          zbuf[px] = depth;
          out.tri_id[px] = int(t);
          out.barycentric[px] = Vec3(w0, w1, w2);
          out.point[px] = ray.origin + depth * ray.direction;
          out.depth.at(y, x, 0) = depth;
        }
      }
  }

  for (int y = 0; y < pose.height; ++y)
    for (int x = 0; x < pose.width; ++x) {
      std::size_t px = std::size_t(y) * pose.width + x;
      if (out.tri_id[px] < 0) continue;
      out.mask.at(y, x, 0) = 1.0;
      Vec3 rgb = field.color(out.point[px]);
      for (int ch = 0; ch < 3; ++ch) out.rgb.at(y, x, ch) = rgb[ch];
    }
  return out;
}

double loss_geo(const RasterOutput& raster, const render::Observation& target,
                const GeoWeights& weights, const Image& alpha_from_volume) {
  if (raster.rgb.width != target.rgb.width || raster.rgb.height != target.rgb.height)
    throw ShapeMismatch("loss_geo: shape mismatch");
  Image tgt_rgb = target.rgb;
  for (int y = 0; y < tgt_rgb.height; ++y)
    for (int x = 0; x < tgt_rgb.width; ++x) {
      double m = target.mask.at(y, x, 0) > 0.5 ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) tgt_rgb.at(y, x, c) *= m;
    }
  double loss = image_mse(raster.rgb, tgt_rgb);
  loss += weights.lambda_p * render::perceptual_proxy(raster.rgb, tgt_rgb);

  if (!target.depth.data.empty()) {
    double depth_acc = 0.0;
    int n_int = 0;
    for (int y = 0; y < raster.mask.height; ++y)
      for (int x = 0; x < raster.mask.width; ++x)
        if (raster.mask.at(y, x, 0) > 0.5 && target.mask.at(y, x, 0) > 0.5) {
          double d = raster.depth.at(y, x, 0) - target.depth.at(y, x, 0);
          depth_acc += d * d;
          ++n_int;
        }
    if (n_int > 0) loss += weights.lambda_d * depth_acc / n_int;
  }

  loss += weights.lambda_m * image_mse(raster.mask, target.mask);

  if (!alpha_from_volume.data.empty()) {
    double acc = 0.0;
    for (double a : alpha_from_volume.data) acc += a * (1.0 - a);
    loss += weights.lambda_r * acc / double(alpha_from_volume.data.size());
  }
  return loss;
}

void ray_plane_t_vjp(const Vec3& origin, const Vec3& dir, const Vec3& v0, const Vec3& v1,
                     const Vec3& v2, double d_t, Vec3& dv0, Vec3& dv1, Vec3& dv2) {
  Vec3 e1 = v1 - v0, e2 = v2 - v0;
  Vec3 n = e1.cross(e2);
  double m = dir.dot(n);
  if (std::abs(m) < 1e-14) return;
  double q = (v0 - origin).dot(n);
  // t = q / m
  Vec3 d_n = (d_t / m) * (v0 - origin) - (d_t * q / (m * m)) * dir;
  Vec3 d_e1 = e2.cross(d_n);
  Vec3 d_e2 = d_n.cross(e1);
  dv0 += (d_t / m) * n - d_e1 - d_e2;
  dv1 += d_e1;
  dv2 += d_e2;
}

RefineGeoResult refine_geometry(const field::TriplaneField& field,
                                const std::vector<render::Observation>& observations,
                                const RefineGeoConfig& config) {
  RefineGeoResult result{field, {}, {}};
  field::TriplaneField& fld = result.field;
  const int G = config.grid_resolution;
  std::size_t n_nodes = std::size_t(G + 1) * (G + 1) * (G + 1);
  result.deform.assign(n_nodes, Vec3::Zero());
  double deform_cap = 1.0 / G;  // half a cell

  Adam opt_field, opt_deform;
  opt_field.reset(fld.param_count());
  opt_deform.reset(3 * n_nodes);
  std::vector<double> field_grads(fld.param_count());
  std::vector<double> deform_grads(3 * n_nodes);

  for (int step = 0; step < config.steps; ++step) {
    DensityGrid grid;
    grid.resolution = G;
    grid.iso = config.iso;
    grid.deform = result.deform;
    grid.values.resize(n_nodes);
    parallel_ranges(n_nodes, 64, [&](std::size_t lo, std::size_t hi, int) {
      int n = G + 1;
      for (std::size_t idx = lo; idx < hi; ++idx) {
        int i = int(idx % n);
        int j = int((idx / n) % n);
        int k = int(idx / (std::size_t(n) * n));
        grid.values[idx] = fld.density(grid.node_pos(i, j, k));
      }
    });
    // same boundary seal as bake_density_grid, for the same reason
    for (int k = 0; k <= G; ++k)
      for (int j = 0; j <= G; ++j)
        for (int i = 0; i <= G; ++i)
          if (i == 0 || j == 0 || k == 0 || i == G || j == G || k == G) {
            double& v = grid.values[grid.index(i, j, k)];
            v = std::min(v, config.iso - 1e-3);
          }

    TriMesh mesh = marching_cubes(grid);
    std::vector<Vec3> d_vertices(mesh.vertices.size(), Vec3::Zero());
    std::fill(field_grads.begin(), field_grads.end(), 0.0);
    std::fill(deform_grads.begin(), deform_grads.end(), 0.0);
    double step_loss = 0.0;

    const double vw = 1.0 / double(observations.size());
    for (const auto& obs : observations) {
      RasterOutput raster = rasterize(mesh, obs.pose, fld);

      Image tgt_rgb = obs.rgb;
      for (int y = 0; y < tgt_rgb.height; ++y)
        for (int x = 0; x < tgt_rgb.width; ++x) {
          double m = obs.mask.at(y, x, 0) > 0.5 ? 1.0 : 0.0;
          for (int c = 0; c < 3; ++c) tgt_rgb.at(y, x, c) *= m;
        }

      step_loss += vw * loss_geo(raster, obs, config.weights, Image());

      // rgb adjoint: MSE + perceptual proxy
      Image d_rgb(raster.rgb.width, raster.rgb.height, 3);
      double mse_scale = 2.0 * vw / double(tgt_rgb.data.size());
      for (std::size_t i = 0; i < tgt_rgb.data.size(); ++i)
        d_rgb.data[i] = mse_scale * (raster.rgb.data[i] - tgt_rgb.data[i]);
      render::perceptual_proxy_vjp(raster.rgb, tgt_rgb, vw * config.weights.lambda_p, d_rgb);

      int n_int = 0;
      if (!obs.depth.data.empty())
        for (int y = 0; y < raster.mask.height; ++y)
          for (int x = 0; x < raster.mask.width; ++x)
            if (raster.mask.at(y, x, 0) > 0.5 && obs.mask.at(y, x, 0) > 0.5) ++n_int;

      for (int y = 0; y < raster.rgb.height; ++y)
        for (int x = 0; x < raster.rgb.width; ++x) {
          std::size_t px = std::size_t(y) * raster.rgb.width + x;
          int tid = raster.tri_id[px];
          if (tid < 0) continue;
          Vec3 d_c(d_rgb.at(y, x, 0), d_rgb.at(y, x, 1), d_rgb.at(y, x, 2));
          geometry::Ray ray = geometry::pixel_ray(obs.pose, x + 0.5, y + 0.5);
          double d_t = 0.0;
          if (d_c.squaredNorm() != 0.0) {
            Vec3 d_pos = Vec3::Zero();
            fld.color_vjp(raster.point[px], d_c, field_grads, &d_pos);
            d_t += ray.direction.dot(d_pos);
          }
          if (n_int > 0 && obs.mask.at(y, x, 0) > 0.5)
            d_t += vw * config.weights.lambda_d * 2.0 *
                   (raster.depth.at(y, x, 0) - obs.depth.at(y, x, 0)) / n_int;
          if (d_t != 0.0) {
            const auto& tri = mesh.triangles[tid];
            ray_plane_t_vjp(ray.origin, ray.direction, mesh.vertices[tri[0]],
                            mesh.vertices[tri[1]], mesh.vertices[tri[2]], d_t,
                            d_vertices[tri[0]], d_vertices[tri[1]], d_vertices[tri[2]]);
          }
        }
    }

    // opacity regularizer on one (rotating) view's volume-rendered alphas
    {
      const auto& obs = observations[step % observations.size()];
      geometry::CameraPose apose = obs.pose;
      apose.width = config.alpha_size;
      apose.height = config.alpha_size;
      std::size_t n_px = std::size_t(apose.width) * apose.height;
      std::uint64_t aseed = hash_mix(config.seed, 0xa1f4ull + step);
      const int n_chunks = 16;
      std::vector<std::vector<double>> chunk_grads(n_chunks);
      std::vector<double> chunk_loss(n_chunks, 0.0);
      parallel_ranges(n_px, n_chunks, [&](std::size_t lo, std::size_t hi, int chunk) {
        auto& g = chunk_grads[chunk];
        g.assign(fld.param_count(), 0.0);
        for (std::size_t idx = lo; idx < hi; ++idx) {
          int y = int(idx / apose.width);
          int x = int(idx % apose.width);
          geometry::Ray ray = geometry::pixel_ray(apose, x + 0.5, y + 0.5);
          Rng rng(hash_mix(aseed, idx));
          render::RaySamples samples = render::stratified_samples(ray, config.alpha_samples, rng);
          render::RayShade shade = render::render_ray(fld, ray, samples);
          chunk_loss[chunk] += shade.alpha * (1.0 - shade.alpha);
          double d_alpha = config.weights.lambda_r * (1.0 - 2.0 * shade.alpha) / double(n_px);
          render::render_ray_vjp(fld, ray, samples, Vec3::Zero(), d_alpha, 0.0, g);
        }
      });
      double alpha_loss = 0.0;
      for (int c = 0; c < n_chunks; ++c) {
        alpha_loss += chunk_loss[c];
        if (!chunk_grads[c].empty())
          for (std::size_t i = 0; i < field_grads.size(); ++i) field_grads[i] += chunk_grads[c][i];
      }
      step_loss += config.weights.lambda_r * alpha_loss / double(n_px);
    }

    // vertex adjoints -> grid values and deformation
    std::vector<double> d_values;
    std::vector<Vec3> d_deform;
    diffmc_backward(mesh, grid, d_vertices, d_values, d_deform);
    for (std::size_t idx = 0; idx < n_nodes; ++idx) {
      if (d_values[idx] != 0.0) {
        int n = G + 1;
        int i = int(idx % n);
        int j = int((idx / n) % n);
        int k = int(idx / (std::size_t(n) * n));
        Vec3 d_pos = Vec3::Zero();
        fld.density_vjp(grid.node_pos(i, j, k), d_values[idx], field_grads, &d_pos);
        d_deform[idx] += d_pos;  // g also moves with the node
      }
      for (int a = 0; a < 3; ++a) deform_grads[3 * idx + a] = d_deform[idx][a];
    }

    result.loss_curve.push_back(step_loss);
    double lr = cosine_lr(config.lr, 0.1 * config.lr, step, config.steps);
    if (lr > 0.0) {
      opt_field.step(fld.values(), field_grads, lr);
      std::vector<double> deform_flat(3 * n_nodes);
      for (std::size_t idx = 0; idx < n_nodes; ++idx)
        for (int a = 0; a < 3; ++a) deform_flat[3 * idx + a] = result.deform[idx][a];
      opt_deform.step(deform_flat, deform_grads,
                      cosine_lr(config.lr_deform, 0.1 * config.lr_deform, step, config.steps));
      for (std::size_t idx = 0; idx < n_nodes; ++idx)
        for (int a = 0; a < 3; ++a)
          result.deform[idx][a] = std::clamp(deform_flat[3 * idx + a], -deform_cap, deform_cap);
    }
  }

  return result;
}

}  // namespace sv3d::meshing
