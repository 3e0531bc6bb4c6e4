#include "sv3d/scene.hpp"

#include <algorithm>
#include <cmath>

namespace sv3d::scene {

SdfNode SdfNode::sphere(const Vec3& c, double r) {
  SdfNode n;
  n.kind = Kind::Sphere;
  n.center = c;
  n.radius = r;
  return n;
}

SdfNode SdfNode::box(const Vec3& c, const Vec3& he) {
  SdfNode n;
  n.kind = Kind::Box;
  n.center = c;
  n.half_extents = he;
  return n;
}

SdfNode SdfNode::torus(const Vec3& c, double major, double minor) {
  SdfNode n;
  n.kind = Kind::Torus;
  n.center = c;
  n.major = major;
  n.minor = minor;
  return n;
}

SdfNode SdfNode::join(std::vector<SdfNode> children) {
  SdfNode n;
  n.kind = Kind::Union;
  n.children = std::move(children);
  return n;
}

double sdf_eval(const SdfNode& node, const Vec3& p) {
  switch (node.kind) {
    case SdfNode::Kind::Sphere:
      return (p - node.center).norm() - node.radius;
    case SdfNode::Kind::Box: {
      Vec3 q = (p - node.center).cwiseAbs() - node.half_extents;
      Vec3 qpos = q.cwiseMax(0.0);
      return qpos.norm() + std::min(q.maxCoeff(), 0.0);
    }
    case SdfNode::Kind::Torus: {
      Vec3 q = p - node.center;
      double ring = std::hypot(q.x(), q.y()) - node.major;
      return std::hypot(ring, q.z()) - node.minor;
    }
    case SdfNode::Kind::Union: {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : node.children) best = std::min(best, sdf_eval(c, p));
      return best;
    }
  }
  return 0.0;
}

Vec3 ColorFn::eval(const Vec3& p) const {
  if (kind == Kind::Checker) {
    long parity = long(std::floor(p.x() / period)) + long(std::floor(p.y() / period)) +
                  long(std::floor(p.z() / period));
    return ((parity % 2 + 2) % 2 == 0) ? color_a : color_b;
  }
  double t = std::clamp(0.5 * (p.z() + 1.0), 0.0, 1.0);
  return (1.0 - t) * color_a + t * color_b;
}

double AnalyticScene::density(const Vec3& p) const {
  return sigma_max / (1.0 + std::exp(sdf_eval(sdf, p) / width));
}

Vec3 AnalyticScene::color(const Vec3& p) const { return color_fn.eval(p); }

namespace {

bool hit_sphere(const SdfNode& n, const geometry::Ray& ray) {
  Vec3 oc = ray.origin - n.center;
  double b = oc.dot(ray.direction);
  double c = oc.squaredNorm() - n.radius * n.radius;
  double disc = b * b - c;
  if (disc < 0.0) return false;
  double s = std::sqrt(disc);
  double t0 = -b - s, t1 = -b + s;
  return t1 >= ray.t_near && t0 <= ray.t_far;
}

bool hit_box(const SdfNode& n, const geometry::Ray& ray) {
  double t0 = ray.t_near, t1 = ray.t_far;
  for (int a = 0; a < 3; ++a) {
    double inv = 1.0 / ray.direction[a];
    double lo = (n.center[a] - n.half_extents[a] - ray.origin[a]) * inv;
    double hi = (n.center[a] + n.half_extents[a] - ray.origin[a]) * inv;
    if (inv < 0.0) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
    if (t0 > t1) return false;
  }
  return true;
}

std::optional<bool> hit_node(const SdfNode& n, const geometry::Ray& ray) {
  switch (n.kind) {
    case SdfNode::Kind::Sphere:
      return hit_sphere(n, ray);
    case SdfNode::Kind::Box:
      return hit_box(n, ray);
    case SdfNode::Kind::Torus:
      return std::nullopt;
    case SdfNode::Kind::Union: {
      bool any = false;
      for (const auto& c : n.children) {
        auto h = hit_node(c, ray);
        if (!h) return std::nullopt;
        any = any || *h;
      }
      return any;
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<bool> AnalyticScene::exact_hit(const geometry::Ray& ray) const {
  return hit_node(sdf, ray);
}

AnalyticScene make_preset(const std::string& name) {
  AnalyticScene s;
  s.preset = name;
  if (name == "sphere") {
    s.sdf = SdfNode::sphere(Vec3::Zero(), 0.5);
    s.color_fn.kind = ColorFn::Kind::AxisGradient;
  } else if (name == "box") {
    s.sdf = SdfNode::box(Vec3::Zero(), Vec3(0.3, 0.3, 0.3));
    s.color_fn.kind = ColorFn::Kind::AxisGradient;
  } else if (name == "torus") {
    s.sdf = SdfNode::torus(Vec3::Zero(), 0.4, 0.1);
    s.color_fn.kind = ColorFn::Kind::AxisGradient;
  } else if (name == "composite") {
    s.sdf = SdfNode::join({SdfNode::sphere(Vec3(-0.15, 0.0, 0.0), 0.35),
                           SdfNode::box(Vec3(0.3, 0.2, -0.1), Vec3(0.2, 0.15, 0.25))});
    s.color_fn.kind = ColorFn::Kind::Checker;
    s.color_fn.period = 0.25;
  } else {
    throw std::runtime_error("unknown scene preset: " + name);
  }
  return s;
}

OracleView render_oracle(const AnalyticScene& scene, const geometry::CameraPose& pose,
                         int n_samples, std::uint64_t seed) {
  OracleView out;
  out.view = render::render_view(scene, pose, n_samples, seed);
  out.mask = Image(pose.width, pose.height, 1);
  for (int y = 0; y < pose.height; ++y)
    for (int x = 0; x < pose.width; ++x) {
      geometry::Ray ray = geometry::pixel_ray(pose, x + 0.5, y + 0.5);
      auto exact = scene.exact_hit(ray);
      bool inside = exact ? *exact : (out.view.alpha.at(y, x, 0) > 0.5);
      out.mask.at(y, x, 0) = inside ? 1.0 : 0.0;
    }
  return out;
}

Image augment_noise(const Image& img, double sigma, Rng& rng) {
  Image out = img;
  for (double& v : out.data) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
  return out;
}

Image augment_resize(const Image& img, double scale) {
  int w = std::max(1, int(std::lround(img.width * scale)));
  int h = std::max(1, int(std::lround(img.height * scale)));
  return resize_bilinear(resize_bilinear(img, w, h), img.width, img.height);
}

meshing::TriMesh oracle_mesh(const AnalyticScene& scene, int G) {
  meshing::DensityGrid grid;
  grid.resolution = G;
  grid.iso = 0.0;
  std::size_t n = std::size_t(G + 1) * (G + 1) * (G + 1);
  grid.values.resize(n);
  grid.deform.assign(n, Vec3::Zero());
  // inside where sdf < 0, i.e. -sdf exceeds the iso level 0
  for (int k = 0; k <= G; ++k)
    for (int j = 0; j <= G; ++j)
      for (int i = 0; i <= G; ++i)
        grid.values[grid.index(i, j, k)] = -sdf_eval(scene.sdf, grid.node_base(i, j, k));
  return meshing::marching_cubes(grid);
}

ObservationSet make_observations(const AnalyticScene& scene,
                                 const std::vector<geometry::CameraPose>& poses, int n_samples,
                                 const AugmentConfig& augment, std::uint64_t seed) {
  ObservationSet set;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    OracleView ov = render_oracle(scene, poses[i], n_samples, hash_mix(seed, i));
    render::Observation obs;
    obs.pose = poses[i];
    obs.rgb = ov.view.rgb;
    obs.mask = ov.mask;
    obs.depth = ov.view.depth;
    if (augment.enabled) {
      Rng rng(hash_mix(seed, 0xa06u + i));
      obs.rgb = augment_resize(augment_noise(obs.rgb, augment.noise_sigma, rng),
                               augment.resize_scale);
    }
    set.observations.push_back(std::move(obs));
    set.ground_truth_poses.push_back(poses[i]);
  }
  return set;
}

}  // namespace sv3d::scene
