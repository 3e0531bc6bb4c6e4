#include "sv3d/metrics.hpp"

#include "sv3d/kdtree.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace sv3d::metrics {

double psnr(const Image& a, const Image& b) {
  double mse = image_mse(a, b);
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

Image to_luma(const Image& img) {
  if (img.channels == 1) return img;
  Image out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      out.at(y, x, 0) =
          0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("ssim: shape mismatch");
  Image la = to_luma(a), lb = to_luma(b);
  constexpr double C1 = 0.01 * 0.01;
  constexpr double C2 = 0.03 * 0.03;

  const int win = 11;
  const double sigma = 1.5;
  std::vector<double> kernel(win * win);
  double ksum = 0.0;
  for (int dy = 0; dy < win; ++dy)
    for (int dx = 0; dx < win; ++dx) {
      double ry = dy - (win - 1) / 2.0, rx = dx - (win - 1) / 2.0;
      kernel[dy * win + dx] = std::exp(-(rx * rx + ry * ry) / (2.0 * sigma * sigma));
      ksum += kernel[dy * win + dx];
    }
  for (double& k : kernel) k /= ksum;

  auto local_ssim = [&](auto&& stats) {
    auto [mu1, mu2, s11, s22, s12] = stats;
    return ((2.0 * mu1 * mu2 + C1) * (2.0 * s12 + C2)) /
           ((mu1 * mu1 + mu2 * mu2 + C1) * (s11 + s22 + C2));
  };

  if (la.width < win || la.height < win) {
    // image smaller than the window: single global (uniform) window
    double n = double(la.data.size());
    double mu1 = std::accumulate(la.data.begin(), la.data.end(), 0.0) / n;
    double mu2 = std::accumulate(lb.data.begin(), lb.data.end(), 0.0) / n;
    double s11 = 0, s22 = 0, s12 = 0;
    for (std::size_t i = 0; i < la.data.size(); ++i) {
      s11 += (la.data[i] - mu1) * (la.data[i] - mu1);
      s22 += (lb.data[i] - mu2) * (lb.data[i] - mu2);
      s12 += (la.data[i] - mu1) * (lb.data[i] - mu2);
    }
    return local_ssim(std::tuple{mu1, mu2, s11 / n, s22 / n, s12 / n});
  }

  double acc = 0.0;
  long count = 0;
  for (int y = 0; y + win <= la.height; ++y)
    for (int x = 0; x + win <= la.width; ++x) {
      double mu1 = 0, mu2 = 0, m11 = 0, m22 = 0, m12 = 0;
      for (int dy = 0; dy < win; ++dy)
        for (int dx = 0; dx < win; ++dx) {
          double w = kernel[dy * win + dx];
          double v1 = la.at(y + dy, x + dx, 0);
          double v2 = lb.at(y + dy, x + dx, 0);
          mu1 += w * v1;
          mu2 += w * v2;
          m11 += w * v1 * v1;
          m22 += w * v2 * v2;
          m12 += w * v1 * v2;
        }
      acc += local_ssim(
          std::tuple{mu1, mu2, m11 - mu1 * mu1, m22 - mu2 * mu2, m12 - mu1 * mu2});
      ++count;
    }
  return acc / double(count);
}

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw EmptySet();
  KdTree3 tree_a(a), tree_b(b);
  double sum_ab = 0.0, sum_ba = 0.0;
  for (const auto& p : a) sum_ab += std::sqrt(tree_b.nearest(p).second);
  for (const auto& p : b) sum_ba += std::sqrt(tree_a.nearest(p).second);
  return 0.5 * (sum_ab / double(a.size()) + sum_ba / double(b.size()));
}

bool is_watertight(const meshing::TriMesh& mesh) {
  std::map<std::pair<int, int>, int> edge_count;
  for (const auto& tri : mesh.triangles)
    for (int e = 0; e < 3; ++e) {
      int u = tri[e], v = tri[(e + 1) % 3];
      if (u > v) std::swap(u, v);
      ++edge_count[{u, v}];
    }
  for (const auto& [edge, count] : edge_count)
    if (count != 2) return false;
  return !mesh.triangles.empty();
}

namespace {

// x coordinates where the +x line through (y, z) crosses the surface
std::vector<double> line_crossings(const meshing::TriMesh& mesh, double y, double z) {
  std::vector<double> xs;
  for (const auto& tri : mesh.triangles) {
    const Vec3& a = mesh.vertices[tri[0]];
    const Vec3& b = mesh.vertices[tri[1]];
    const Vec3& c = mesh.vertices[tri[2]];
    // 2D barycentric test in the (y, z) projection
    double d00 = (b.y() - a.y()) * (c.z() - a.z()) - (b.z() - a.z()) * (c.y() - a.y());
    if (std::abs(d00) < 1e-15) continue;  // edge-on; the jitter dodges real hits
    double w0 = ((b.y() - y) * (c.z() - z) - (b.z() - z) * (c.y() - y)) / d00;
    double w1 = ((c.y() - y) * (a.z() - z) - (c.z() - z) * (a.y() - y)) / d00;
    double w2 = 1.0 - w0 - w1;
    if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
    xs.push_back(w0 * a.x() + w1 * b.x() + w2 * c.x());
  }
  std::sort(xs.begin(), xs.end());
  return xs;
}

bool inside_by_parity(const std::vector<double>& crossings, double x) {
  auto it = std::upper_bound(crossings.begin(), crossings.end(), x);
  return (it - crossings.begin()) % 2 == 1;
}

}  // namespace

double volume_iou(const meshing::TriMesh& a, const meshing::TriMesh& b, int G) {
  if (!is_watertight(a) || !is_watertight(b)) throw NotWatertight();

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto* mesh : {&a, &b})
    for (const auto& v : mesh->vertices) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
  Vec3 center = 0.5 * (lo + hi);
  double side = (hi - lo).maxCoeff() * (1.0 + 2.0 / G);
  double cell = side / G;
  Vec3 origin = center - Vec3::Constant(0.5 * side);
  const double jitter = 1e-6 * cell;

  long inter = 0, uni = 0;
  for (int k = 0; k < G; ++k)
    for (int j = 0; j < G; ++j) {
      double y = origin.y() + (j + 0.5) * cell + jitter;
      double z = origin.z() + (k + 0.5) * cell + jitter;
      auto cross_a = line_crossings(a, y, z);
      auto cross_b = line_crossings(b, y, z);
      if (cross_a.empty() && cross_b.empty()) continue;
      for (int i = 0; i < G; ++i) {
        double x = origin.x() + (i + 0.5) * cell;
        bool in_a = inside_by_parity(cross_a, x);
        bool in_b = inside_by_parity(cross_b, x);
        if (in_a && in_b) ++inter;
        if (in_a || in_b) ++uni;
      }
    }
  if (uni == 0) throw DegenerateUnion();
  return double(inter) / double(uni);
}

meshing::TriMesh normalize_mesh(const meshing::TriMesh& m) {
  if (m.vertices.empty()) throw EmptyMesh();
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& v : m.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  Vec3 center = 0.5 * (lo + hi);
  double longest = (hi - lo).maxCoeff();
  double scale = longest > 0.0 ? 1.0 / longest : 1.0;
  meshing::TriMesh out = m;
  for (auto& v : out.vertices) v = (v - center) * scale;
  return out;
}

std::vector<Vec3> sample_mesh_points(const meshing::TriMesh& m, int n_points, std::uint64_t seed) {
  std::vector<double> cum_area(m.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < m.triangles.size(); ++t) {
    const auto& tri = m.triangles[t];
    total += 0.5 * (m.vertices[tri[1]] - m.vertices[tri[0]])
                       .cross(m.vertices[tri[2]] - m.vertices[tri[0]])
                       .norm();
    cum_area[t] = total;
  }
  std::vector<Vec3> points;
  points.reserve(n_points);
  Rng rng(seed);
  for (int i = 0; i < n_points; ++i) {
    double r = rng.uniform() * total;
    std::size_t t = std::lower_bound(cum_area.begin(), cum_area.end(), r) - cum_area.begin();
    t = std::min(t, m.triangles.size() - 1);
    double u = rng.uniform(), v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const auto& tri = m.triangles[t];
    points.push_back(m.vertices[tri[0]] + u * (m.vertices[tri[1]] - m.vertices[tri[0]]) +
                     v * (m.vertices[tri[2]] - m.vertices[tri[0]]));
  }
  return points;
}

MeshAlignment icp_align(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                        const IcpConfig& config) {
  if (source.size() < 3 || target.size() < 3) throw DegenerateGeometry();
  {
    Vec3 mean = Vec3::Zero();
    for (const auto& p : source) mean += p;
    mean /= double(source.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& p : source) cov += (p - mean) * (p - mean).transpose();
    Eigen::JacobiSVD<Mat3> svd(cov);
    if (svd.singularValues()(1) < 1e-12) throw DegenerateGeometry();
  }

  KdTree3 tree(target);
  MeshAlignment align;
  double prev_rmse = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < config.max_iterations; ++iter) {
    // current transform applied to source
    std::vector<Vec3> moved(source.size());
    for (std::size_t i = 0; i < source.size(); ++i)
      moved[i] = align.rotation * source[i] + align.translation;

    std::vector<Vec3> matched(source.size());
    double sq = 0.0;
    for (std::size_t i = 0; i < source.size(); ++i) {
      auto [idx, d2] = tree.nearest(moved[i]);
      matched[i] = target[idx];
      sq += d2;
    }
    align.rmse = std::sqrt(sq / double(source.size()));
    if (prev_rmse - align.rmse < config.tolerance) break;
    prev_rmse = align.rmse;

    // closed-form Procrustes on the correspondences (from the original
    // source so the transform stays absolute)
    Vec3 mean_s = Vec3::Zero(), mean_t = Vec3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
      mean_s += source[i];
      mean_t += matched[i];
    }
    mean_s /= double(source.size());
    mean_t /= double(source.size());
    Mat3 H = Mat3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i)
      H += (source[i] - mean_s) * (matched[i] - mean_t).transpose();
    Eigen::JacobiSVD<Mat3> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 U = svd.matrixU(), V = svd.matrixV();
    Mat3 D = Mat3::Identity();
    if ((V * U.transpose()).determinant() < 0.0) D(2, 2) = -1.0;
    align.rotation = V * D * U.transpose();
    align.translation = mean_t - align.rotation * mean_s;
  }
  return align;
}

std::map<double, double> pose_accuracy(const std::vector<geometry::CameraPose>& estimates,
                                       const std::vector<geometry::CameraPose>& ground_truth,
                                       const std::vector<double>& thresholds_deg) {
  if (estimates.size() != ground_truth.size()) throw LengthMismatch();
  std::map<double, double> out;
  for (double thr : thresholds_deg) {
    long hits = 0;
    for (std::size_t i = 0; i < estimates.size(); ++i)
      if (geometry::rotation_geodesic_deg(estimates[i], ground_truth[i]) <= thr) ++hits;
    out[thr] = estimates.empty() ? 0.0 : double(hits) / double(estimates.size());
  }
  return out;
}

}  // namespace sv3d::metrics
