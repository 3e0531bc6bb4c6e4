#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sv3d/inverse.hpp"
#include "sv3d/scene.hpp"

#include <cmath>
#include <set>

using namespace sv3d;
using namespace sv3d::inverse;

namespace {

render::Observation observe(const scene::AnalyticScene& sc, const geometry::CameraPose& pose,
                            int n_samples, std::uint64_t seed) {
  auto set = scene::make_observations(sc, {pose}, n_samples, {}, seed);
  return set.observations[0];
}

double angle_diff_deg(double a, double b) {
  double d = std::fmod(std::abs(a - b), 360.0);
  return std::min(d, 360.0 - d);
}

}  // namespace

TEST_CASE("default_starts: 24-pose grid with 45-degree azimuth coverage") {
  geometry::CameraPose like;
  like.fov_deg = 35.0;
  like.width = 48;
  like.height = 48;
  auto starts = default_starts(like);
  REQUIRE(starts.size() == 24);

  std::set<double> elevations, azimuths;
  for (const auto& p : starts) {
    elevations.insert(p.elevation_deg);
    azimuths.insert(std::fmod(p.azimuth_deg + 360.0, 360.0));
    CHECK(p.roll_deg == 0.0);
    CHECK(p.radius == 1.5);
    CHECK(p.fov_deg == 35.0);
    CHECK(p.width == 48);
    CHECK(p.height == 48);
  }
  CHECK(elevations == std::set<double>{-30.0, 0.0, 30.0});
  REQUIRE(azimuths.size() == 8);
  // max azimuth gap is 45 degrees
  std::vector<double> az(azimuths.begin(), azimuths.end());
  for (std::size_t i = 0; i < az.size(); ++i) {
    double next = az[(i + 1) % az.size()] + (i + 1 == az.size() ? 360.0 : 0.0);
    CHECK(next - az[i] == doctest::Approx(45.0).epsilon(1e-12));
  }
}

TEST_CASE("photometric objective: loss at the true pose beats far poses") {
  scene::AnalyticScene sc = scene::make_preset("composite");
  geometry::CameraPose truth;
  truth.azimuth_deg = 30.0;
  truth.elevation_deg = 15.0;
  truth.width = truth.height = 32;
  render::Observation target = observe(sc, truth, 64, 7);

  geometry::CameraPose far1 = truth, far2 = truth;
  far1.azimuth_deg += 140.0;
  far2.elevation_deg -= 40.0;

  InvertPoseConfig cfg;
  cfg.starts = {truth, far1, far2};
  cfg.max_steps = 0;  // evaluate the starts as-is
  cfg.bake_resolution = 0;
  std::vector<double> losses;
  PoseEstimate est = invert_pose(sc, target, cfg, losses);
  REQUIRE(losses.size() == 3);
  CHECK(est.start_index == 0);
  CHECK(est.final_loss == losses[0]);
  CHECK(losses[0] < losses[1]);
  CHECK(losses[0] < losses[2]);
  // argmin contract
  for (double l : losses) CHECK(est.final_loss <= l);
}

TEST_CASE("single start near the truth descends onto it") {
  scene::AnalyticScene sc = scene::make_preset("composite");
  geometry::CameraPose truth;
  truth.azimuth_deg = 30.0;
  truth.elevation_deg = 15.0;
  truth.width = truth.height = 32;
  render::Observation target = observe(sc, truth, 64, 7);

  geometry::CameraPose start = truth;
  start.azimuth_deg += 6.0;
  start.elevation_deg -= 4.0;

  InvertPoseConfig cfg;
  cfg.starts = {start};
  cfg.max_steps = 150;
  // opt_size matches the target so the surrogate sees no resampling blur
  // (a downsampled edge profile differs from a natively rendered one and
  // biases the recovered radius)
  cfg.opt_size = 32;
  cfg.n_samples = 32;
  cfg.bake_resolution = 0;
  PoseEstimate est = invert_pose(sc, target, cfg);
  CHECK(angle_diff_deg(est.pose.azimuth_deg, truth.azimuth_deg) < 2.0);
  CHECK(angle_diff_deg(est.pose.elevation_deg, truth.elevation_deg) < 2.0);
  CHECK(std::abs(est.pose.radius - truth.radius) / truth.radius < 0.02);
  CHECK(est.iterations > 0);
}

TEST_CASE("azimuth-symmetric scene: all azimuth starts tie") {
  scene::AnalyticScene sc = scene::make_preset("sphere");
  geometry::CameraPose truth;
  truth.width = truth.height = 24;
  render::Observation target = observe(sc, truth, 48, 3);

  InvertPoseConfig cfg;
  for (int a = 0; a < 8; ++a) {
    geometry::CameraPose p = truth;
    p.azimuth_deg = 45.0 * a;
    cfg.starts.push_back(p);
  }
  cfg.max_steps = 10;
  cfg.opt_size = 24;
  cfg.n_samples = 16;
  cfg.bake_resolution = 0;
  std::vector<double> losses;
  invert_pose(sc, target, cfg, losses);
  REQUIRE(losses.size() == 8);
  for (double l : losses) CHECK(l == doctest::Approx(losses[0]).epsilon(1e-6));
}

TEST_CASE("invert_pose never mutates the field; non-finite renders throw") {
  field::TriplaneField field(16, 2, 16, 1);
  std::vector<double> before = field.values();

  geometry::CameraPose pose;
  pose.width = pose.height = 16;
  render::RenderedView rv = render::render_view(field, pose, 8, 5);
  render::Observation target;
  target.pose = pose;
  target.rgb = rv.rgb;
  target.mask = rv.alpha;

  InvertPoseConfig cfg;
  cfg.starts = {pose};
  cfg.max_steps = 3;
  cfg.opt_size = 16;
  cfg.n_samples = 8;
  cfg.bake_resolution = 24;
  invert_pose(field, target, cfg);
  CHECK(field.values() == before);

  struct Broken : RadianceField {
    double density(const Vec3&) const override { return std::nan(""); }
    Vec3 color(const Vec3&) const override { return Vec3(0.5, 0.5, 0.5); }
  } broken;
  cfg.bake_resolution = 0;
  CHECK_THROWS_AS(invert_pose(broken, target, cfg), NonFiniteLoss);
}

TEST_CASE("refine_appearance with zero steps is a no-op") {
  field::TriplaneField field(16, 2, 16, 2);
  geometry::CameraPose pose;
  pose.width = pose.height = 16;
  render::RenderedView rv = render::render_view(field, pose, 16, 9);
  render::Observation obs;
  obs.pose = pose;
  obs.rgb = rv.rgb;
  obs.mask = rv.alpha;
  PoseEstimate est;
  est.pose = pose;

  RefineAppearanceConfig cfg;
  cfg.steps = 0;
  cfg.n_samples = 16;
  auto [refined, report] = refine_appearance(field, {{est, obs}}, cfg);
  CHECK(refined.values() == field.values());
  CHECK(report.mse_before == report.mse_after);
  CHECK(!report.planes_changed);
  CHECK(!report.color_head_changed);
  CHECK(!report.density_head_changed);
}

TEST_CASE("refine_appearance: self-consistent targets cause negligible drift") {
  field::TriplaneField field(16, 2, 16, 4);
  geometry::CameraPose pose;
  pose.width = pose.height = 16;
  // masks of all ones make the composited target equal the render
  render::Observation obs;
  obs.pose = pose;
  obs.mask = Image(16, 16, 1);
  std::fill(obs.mask.data.begin(), obs.mask.data.end(), 1.0);
  obs.rgb = render::render_view(field, pose, 64, 11).rgb;
  PoseEstimate est;
  est.pose = pose;

  RefineAppearanceConfig cfg;
  cfg.steps = 4;
  cfg.n_samples = 64;
  cfg.lr = 1e-4;
  auto [refined, report] = refine_appearance(field, {{est, obs}}, cfg);
  // residual is quadrature jitter only; the running-min keeps the error flat
  CHECK(report.mse_after[0] <= report.mse_before[0] + 1e-6);
  double drift = 0.0;
  for (std::size_t i = 0; i < field.values().size(); ++i)
    drift = std::max(drift, std::abs(refined.values()[i] - field.values()[i]));
  CHECK(drift <= cfg.lr * cfg.steps + 1e-12);  // Adam caps per-step movement near lr
}

TEST_CASE("refine_appearance repairs a color-corrupted field, density head frozen") {
  field::TriplaneField clean(16, 2, 16, 6);
  geometry::CameraPose pose;
  pose.width = pose.height = 16;
  std::vector<std::pair<PoseEstimate, render::Observation>> views;
  for (double az : {0.0, 90.0, 180.0}) {
    geometry::CameraPose p = pose;
    p.azimuth_deg = az;
    render::RenderedView rv = render::render_view(clean, p, 32, 21);
    render::Observation obs;
    obs.pose = p;
    obs.rgb = rv.rgb;
    obs.mask = rv.alpha;
    PoseEstimate est;
    est.pose = p;
    views.push_back({est, obs});
  }

  field::TriplaneField corrupted = clean;
  // shift the color head's output biases: a pure-appearance defect
  for (std::size_t i = corrupted.color_head_end() - 3; i < corrupted.color_head_end(); ++i)
    corrupted.values()[i] += 2.0;
  std::vector<double> density_before(
      corrupted.values().begin() + corrupted.density_head_begin(),
      corrupted.values().begin() + corrupted.density_head_end());

  RefineAppearanceConfig cfg;
  cfg.steps = 120;
  cfg.n_samples = 16;
  cfg.seed = 13;
  auto [refined, report] = refine_appearance(corrupted, views, cfg);

  double before = 0.0, after = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    before += report.mse_before[v];
    after += report.mse_after[v];
  }
  CHECK(after < 0.5 * before);
  CHECK(report.color_head_changed);
  CHECK(!report.density_head_changed);
  std::vector<double> density_after(refined.values().begin() + refined.density_head_begin(),
                                    refined.values().begin() + refined.density_head_end());
  CHECK(density_after == density_before);
}
