// sv3d: sparse-view reconstruction pipeline driver.
//
// Subcommands: scene gen, render, fit, mesh, invert-pose, refine,
// diffuse-demo, eval. Every command is a pure function of its inputs,
// flags and --seed; --threads only changes wall time, never results.

#include "sv3d/io.hpp"
#include "sv3d/kdtree.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sv3d;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string config_path;
  std::string out;
  json config = json::object();
};

// flags > config file > built-in default
template <typename T>
T cfg_get(const GlobalOpts& g, const std::string& section, const std::string& key, T def,
          const CLI::Option* flag, T flag_value) {
  if (flag && flag->count() > 0) return flag_value;
  if (g.config.contains(section) && g.config[section].contains(key))
    return g.config[section][key].get<T>();
  return def;
}

std::string view_path(const std::string& dir, const char* stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03d.%s", stem, i, ext);
  return (fs::path(dir) / buf).string();
}

std::vector<render::Observation> load_observations(const std::string& dir) {
  auto poses = io::read_poses((fs::path(dir) / "poses.json").string());
  std::vector<render::Observation> obs;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    render::Observation o;
    o.pose = poses[i];
    o.rgb = io::read_png(view_path(dir, "view", int(i), "png"));
    o.mask = io::read_png(view_path(dir, "mask", int(i), "png"), /*gamma=*/false);
    std::string depth = view_path(dir, "depth", int(i), "pfm");
    if (fs::exists(depth)) o.depth = io::read_pfm(depth);
    obs.push_back(std::move(o));
  }
  return obs;
}

Image gray_channel(const Image& img) {
  if (img.channels == 1) return img;
  Image out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(y, x, 0) = img.at(y, x, 0);
  return out;
}

int cmd_scene_gen(const GlobalOpts& g, const std::string& preset) {
  scene::AnalyticScene sc = scene::make_preset(preset);
  io::write_scene(g.out, sc, g.seed);
  io::write_manifest(g.out + ".manifest.json", "scene gen", g.seed, g.threads,
                     json{{"preset", preset}}, {}, {g.out});
  return 0;
}

int cmd_render(const GlobalOpts& g, const std::string& scene_path, const std::string& rig,
               int size, int n_views, int n_samples) {
  scene::AnalyticScene sc = io::read_scene(scene_path);
  std::vector<geometry::CameraPose> poses;
  if (rig == "canonical") {
    poses = geometry::build_canonical_rig(0.0, 50.0, size, size).poses;
  } else if (rig == "random") {
    Rng rng(hash_mix(g.seed, 0x71e5u));
    for (int i = 0; i < n_views; ++i) {
      geometry::CameraPose p;
      p.azimuth_deg = rng.uniform(-180.0, 180.0);
      p.elevation_deg = rng.uniform(-45.0, 45.0);
      p.radius = 1.5;
      p.width = p.height = size;
      poses.push_back(p);
    }
  } else {
    throw CLI::ValidationError("--rig must be canonical or random");
  }
  fs::create_directories(g.out);
  auto set = scene::make_observations(sc, poses, n_samples, {}, g.seed);
  std::vector<std::string> outputs;
  for (std::size_t i = 0; i < set.observations.size(); ++i) {
    const auto& o = set.observations[i];
    io::write_png(view_path(g.out, "view", int(i), "png"), o.rgb);
    io::write_png(view_path(g.out, "mask", int(i), "png"), o.mask, /*gamma=*/false);
    io::write_pfm(view_path(g.out, "depth", int(i), "pfm"), gray_channel(o.depth));
    outputs.push_back(view_path(g.out, "view", int(i), "png"));
  }
  io::write_poses((fs::path(g.out) / "poses.json").string(), set.ground_truth_poses);
  io::write_manifest((fs::path(g.out) / "manifest.json").string(), "render", g.seed, g.threads,
                     json{{"rig", rig}, {"size", size}, {"n_samples", n_samples}}, {scene_path},
                     outputs);
  return 0;
}

int cmd_fit(const GlobalOpts& g, const std::string& obs_dir, const render::FitConfig& cfg) {
  auto observations = load_observations(obs_dir);
  render::FitResult result = render::fit_field(observations, cfg);
  fs::create_directories(g.out);
  std::string ckpt = (fs::path(g.out) / "field.prgm").string();
  io::write_checkpoint(ckpt, result.field);
  io::write_loss_csv((fs::path(g.out) / "loss.csv").string(), result.loss_curve);
  io::write_manifest((fs::path(g.out) / "manifest.json").string(), "fit", g.seed, g.threads,
                     json{{"steps", cfg.steps},
                          {"batch_rays", cfg.batch_rays},
                          {"n_samples", cfg.n_samples},
                          {"field_resolution", cfg.field_resolution}},
                     {obs_dir}, {ckpt});
  return 0;
}

int cmd_mesh(const GlobalOpts& g, const std::string& ckpt, int grid, double iso) {
  field::TriplaneField f = io::read_checkpoint(ckpt);
  meshing::DensityGrid dg = meshing::bake_density_grid(f, grid, iso);
  meshing::TriMesh mesh = meshing::marching_cubes(dg);
  io::write_obj(g.out, mesh);
  io::write_manifest(g.out + ".manifest.json", "mesh", g.seed, g.threads,
                     json{{"grid", grid}, {"iso", iso}}, {ckpt}, {g.out});
  return 0;
}

int cmd_invert_pose(const GlobalOpts& g, const std::string& ckpt, const std::string& obs_dir,
                    inverse::InvertPoseConfig cfg) {
  field::TriplaneField f = io::read_checkpoint(ckpt);
  auto observations = load_observations(obs_dir);
  json arr = json::array();
  for (std::size_t i = 0; i < observations.size(); ++i) {
    cfg.seed = hash_mix(g.seed, i);
    inverse::PoseEstimate est = inverse::invert_pose(f, observations[i], cfg);
    arr.push_back(json{{"azimuth_deg", est.pose.azimuth_deg},
                       {"elevation_deg", est.pose.elevation_deg},
                       {"roll_deg", est.pose.roll_deg},
                       {"radius", est.pose.radius},
                       {"final_loss", est.final_loss},
                       {"start_index", est.start_index},
                       {"iterations", est.iterations}});
  }
  io::write_text(g.out, json{{"estimates", arr}}.dump(2) + "\n");
  io::write_manifest(g.out + ".manifest.json", "invert-pose", g.seed, g.threads,
                     json{{"max_steps", cfg.max_steps}, {"opt_size", cfg.opt_size}},
                     {ckpt, obs_dir}, {g.out});
  return 0;
}

std::vector<inverse::PoseEstimate> read_estimates(const std::string& path) {
  json j = json::parse(io::read_text(path));
  std::vector<inverse::PoseEstimate> out;
  for (const auto& e : j.at("estimates")) {
    inverse::PoseEstimate est;
    est.pose.azimuth_deg = e.at("azimuth_deg");
    est.pose.elevation_deg = e.at("elevation_deg");
    est.pose.roll_deg = e.at("roll_deg");
    est.pose.radius = e.at("radius");
    est.final_loss = e.at("final_loss");
    est.start_index = e.at("start_index");
    est.iterations = e.at("iterations");
    out.push_back(est);
  }
  return out;
}

int cmd_refine(const GlobalOpts& g, const std::string& ckpt, const std::string& obs_dir,
               const std::string& estimates_path, inverse::RefineAppearanceConfig cfg) {
  field::TriplaneField f = io::read_checkpoint(ckpt);
  auto observations = load_observations(obs_dir);
  auto estimates = read_estimates(estimates_path);
  if (estimates.size() != observations.size())
    throw io::IoError("refine: estimate/observation count mismatch");
  std::vector<std::pair<inverse::PoseEstimate, render::Observation>> registered;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    estimates[i].pose.width = observations[i].pose.width;
    estimates[i].pose.height = observations[i].pose.height;
    estimates[i].pose.fov_deg = observations[i].pose.fov_deg;
    registered.emplace_back(estimates[i], observations[i]);
  }
  cfg.seed = g.seed;
  auto [refined, report] = inverse::refine_appearance(f, registered, cfg);
  fs::create_directories(g.out);
  std::string out_ckpt = (fs::path(g.out) / "field_refined.prgm").string();
  io::write_checkpoint(out_ckpt, refined);
  io::write_text((fs::path(g.out) / "refine_report.json").string(),
                 json{{"mse_before", report.mse_before},
                      {"mse_after", report.mse_after},
                      {"steps", report.steps},
                      {"planes_changed", report.planes_changed},
                      {"color_head_changed", report.color_head_changed},
                      {"density_head_changed", report.density_head_changed}}
                         .dump(2) +
                     "\n");
  io::write_manifest((fs::path(g.out) / "manifest.json").string(), "refine", g.seed, g.threads,
                     json{{"steps", cfg.steps}}, {ckpt, obs_dir, estimates_path}, {out_ckpt});
  return 0;
}

int cmd_diffuse_demo(const GlobalOpts& g, int T, int n_views, int dim) {
  diffusion::DiffusionSchedule schedule = diffusion::make_schedule(T);
  fs::create_directories(g.out);
  io::write_schedule_csv((fs::path(g.out) / "schedule.csv").string(), schedule);
  diffusion::GaussianPosteriorDenoiser denoiser(0.7, 0.04, schedule);
  diffusion::MultiviewState result =
      diffusion::sample_multiview(denoiser, n_views, std::size_t(dim), schedule, {}, g.seed);
  io::write_text((fs::path(g.out) / "samples.json").string(),
                 json{{"T", T}, {"views", result.views}}.dump(2) + "\n");
  io::write_manifest((fs::path(g.out) / "manifest.json").string(), "diffuse-demo", g.seed,
                     g.threads, json{{"T", T}, {"n_views", n_views}, {"dim", dim}}, {},
                     {(fs::path(g.out) / "samples.json").string()});
  return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& scene_path, const std::string& ckpt,
             const std::string& mesh_path, const std::string& obs_dir,
             const std::string& estimates_path, int grid, int n_points, int n_samples) {
  scene::AnalyticScene sc = io::read_scene(scene_path);
  field::TriplaneField f = io::read_checkpoint(ckpt);
  auto gt_poses = io::read_poses((fs::path(obs_dir) / "poses.json").string());

  metrics::MetricsReport report;
  for (std::size_t i = 0; i < gt_poses.size(); ++i) {
    scene::OracleView gt = scene::render_oracle(sc, gt_poses[i], n_samples, hash_mix(g.seed, i));
    render::RenderedView pred = render::render_view(f, gt_poses[i], n_samples, hash_mix(g.seed, i));
    report.psnr_db.push_back(metrics::psnr(pred.rgb, gt.view.rgb));
    report.ssim.push_back(metrics::ssim(pred.rgb, gt.view.rgb));
    report.perceptual_proxy.push_back(render::perceptual_proxy(pred.rgb, gt.view.rgb));
  }

  meshing::TriMesh recon = metrics::normalize_mesh(io::read_obj(mesh_path));
  meshing::TriMesh gt_mesh = metrics::normalize_mesh(scene::oracle_mesh(sc, grid));
  auto recon_pts = metrics::sample_mesh_points(recon, n_points, hash_mix(g.seed, 0xcd1u));
  auto gt_pts = metrics::sample_mesh_points(gt_mesh, n_points, hash_mix(g.seed, 0xcd2u));
  metrics::MeshAlignment align = metrics::icp_align(recon_pts, gt_pts);
  for (auto& p : recon_pts) p = align.rotation * p + align.translation;
  for (auto& v : recon.vertices) v = align.rotation * v + align.translation;
  report.chamfer = metrics::chamfer(recon_pts, gt_pts);
  report.icp_rmse = align.rmse;
  report.volume_iou = metrics::volume_iou(recon, gt_mesh, 64);

  if (!estimates_path.empty()) {
    auto estimates = read_estimates(estimates_path);
    std::vector<geometry::CameraPose> est_poses;
    for (const auto& e : estimates) est_poses.push_back(e.pose);
    report.pose_accuracy = metrics::pose_accuracy(est_poses, gt_poses);
  }

  io::write_metrics(g.out, report);
  io::write_manifest(g.out + ".manifest.json", "eval", g.seed, g.threads,
                     json{{"grid", grid}, {"n_points", n_points}, {"n_samples", n_samples}},
                     {scene_path, ckpt, mesh_path, obs_dir}, {g.out});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse-view 3D reconstruction toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may appear after the subcommand

  GlobalOpts g;
  app.add_option("--seed", g.seed, "base RNG seed")->capture_default_str();
  app.add_option("--threads", g.threads, "worker thread cap")->capture_default_str();
  app.add_option("--config", g.config_path, "JSON config file");
  app.add_option("--out", g.out, "output file or directory");

  // scene gen
  auto* scene_cmd = app.add_subcommand("scene", "scene tools");
  auto* gen = scene_cmd->add_subcommand("gen", "write a preset scene description");
  std::string preset = "composite";
  gen->add_option("--preset", preset, "sphere|box|torus|composite");

  // render
  auto* render_cmd = app.add_subcommand("render", "render oracle observations");
  std::string scene_path, rig = "canonical";
  int size = 64, n_views = 8, render_samples = 48;
  render_cmd->add_option("--scene", scene_path)->required();
  render_cmd->add_option("--rig", rig, "canonical|random");
  auto* size_opt = render_cmd->add_option("--size", size);
  render_cmd->add_option("--n-views", n_views, "view count for --rig random");
  auto* rsamp_opt = render_cmd->add_option("--samples", render_samples);

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit a triplane field to observations");
  std::string obs_dir;
  int fit_steps = 2000, fit_batch = 1024, fit_samples = 48;
  fit_cmd->add_option("--obs", obs_dir)->required();
  auto* steps_opt = fit_cmd->add_option("--steps", fit_steps);
  auto* batch_opt = fit_cmd->add_option("--batch", fit_batch);
  auto* fsamp_opt = fit_cmd->add_option("--samples", fit_samples);

  // mesh
  auto* mesh_cmd = app.add_subcommand("mesh", "extract a mesh from a checkpoint");
  std::string ckpt_path;
  int mesh_grid = 64;
  double mesh_iso = 2.0;
  mesh_cmd->add_option("--ckpt", ckpt_path)->required();
  auto* grid_opt = mesh_cmd->add_option("--grid", mesh_grid);
  mesh_cmd->add_option("--iso", mesh_iso);

  // invert-pose
  auto* inv_cmd = app.add_subcommand("invert-pose", "photometric multi-start pose inversion");
  std::string inv_ckpt, inv_obs;
  inverse::InvertPoseConfig inv_cfg;
  inv_cmd->add_option("--ckpt", inv_ckpt)->required();
  inv_cmd->add_option("--obs", inv_obs)->required();
  auto* inv_steps_opt = inv_cmd->add_option("--max-steps", inv_cfg.max_steps);
  auto* inv_size_opt = inv_cmd->add_option("--opt-size", inv_cfg.opt_size);
  auto* inv_bake_opt = inv_cmd->add_option("--bake", inv_cfg.bake_resolution);

  // refine
  auto* ref_cmd = app.add_subcommand("refine", "view-guided appearance refinement");
  std::string ref_ckpt, ref_obs, ref_est;
  inverse::RefineAppearanceConfig ref_cfg;
  ref_cmd->add_option("--ckpt", ref_ckpt)->required();
  ref_cmd->add_option("--obs", ref_obs)->required();
  ref_cmd->add_option("--estimates", ref_est)->required();
  auto* ref_steps_opt = ref_cmd->add_option("--steps", ref_cfg.steps);
  auto* ref_samp_opt = ref_cmd->add_option("--samples", ref_cfg.n_samples);

  // diffuse-demo
  auto* dif_cmd = app.add_subcommand("diffuse-demo", "DDPM schedule and sampler demo");
  int dif_T = 100, dif_views = 4, dif_dim = 16;
  dif_cmd->add_option("--T", dif_T);
  dif_cmd->add_option("--n-views", dif_views);
  dif_cmd->add_option("--dim", dif_dim);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "NVS + mesh evaluation protocol");
  std::string ev_scene, ev_ckpt, ev_mesh, ev_obs, ev_est;
  int ev_grid = 64, ev_points = 2000, ev_samples = 48;
  eval_cmd->add_option("--scene", ev_scene)->required();
  eval_cmd->add_option("--ckpt", ev_ckpt)->required();
  eval_cmd->add_option("--mesh", ev_mesh)->required();
  eval_cmd->add_option("--obs", ev_obs)->required();
  eval_cmd->add_option("--estimates", ev_est);
  auto* ev_grid_opt = eval_cmd->add_option("--grid", ev_grid);
  auto* ev_pts_opt = eval_cmd->add_option("--points", ev_points);
  auto* ev_samp_opt = eval_cmd->add_option("--samples", ev_samples);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!g.config_path.empty()) g.config = json::parse(io::read_text(g.config_path));
    thread_count() = std::max(1, g.threads);
    if (g.out.empty()) throw CLI::ValidationError("--out is required");

    if (gen->parsed()) return cmd_scene_gen(g, preset);
    if (render_cmd->parsed()) {
      size = cfg_get(g, "render", "size", 64, size_opt, size);
      render_samples = cfg_get(g, "render", "n_samples", 48, rsamp_opt, render_samples);
      return cmd_render(g, scene_path, rig, size, n_views, render_samples);
    }
    if (fit_cmd->parsed()) {
      render::FitConfig cfg;
      cfg.steps = cfg_get(g, "fit", "steps", cfg.steps, steps_opt, fit_steps);
      cfg.batch_rays = cfg_get(g, "fit", "batch_rays", cfg.batch_rays, batch_opt, fit_batch);
      cfg.n_samples = cfg_get(g, "fit", "n_samples", cfg.n_samples, fsamp_opt, fit_samples);
      cfg.field_resolution = cfg_get<int>(g, "fit", "field_resolution", cfg.field_resolution,
                                          nullptr, cfg.field_resolution);
      cfg.seed = g.seed;
      return cmd_fit(g, obs_dir, cfg);
    }
    if (mesh_cmd->parsed()) {
      mesh_grid = cfg_get(g, "mesh", "grid", 64, grid_opt, mesh_grid);
      return cmd_mesh(g, ckpt_path, mesh_grid, mesh_iso);
    }
    if (inv_cmd->parsed()) {
      inv_cfg.max_steps = cfg_get(g, "invert", "max_steps", inv_cfg.max_steps, inv_steps_opt,
                                  inv_cfg.max_steps);
      inv_cfg.opt_size =
          cfg_get(g, "invert", "opt_size", inv_cfg.opt_size, inv_size_opt, inv_cfg.opt_size);
      inv_cfg.bake_resolution = cfg_get(g, "invert", "bake_resolution", inv_cfg.bake_resolution,
                                        inv_bake_opt, inv_cfg.bake_resolution);
      return cmd_invert_pose(g, inv_ckpt, inv_obs, inv_cfg);
    }
    if (ref_cmd->parsed()) {
      ref_cfg.steps = cfg_get(g, "refine", "steps", ref_cfg.steps, ref_steps_opt, ref_cfg.steps);
      ref_cfg.n_samples =
          cfg_get(g, "refine", "n_samples", ref_cfg.n_samples, ref_samp_opt, ref_cfg.n_samples);
      return cmd_refine(g, ref_ckpt, ref_obs, ref_est, ref_cfg);
    }
    if (dif_cmd->parsed()) return cmd_diffuse_demo(g, dif_T, dif_views, dif_dim);
    if (eval_cmd->parsed()) {
      ev_grid = cfg_get(g, "eval", "grid", 64, ev_grid_opt, ev_grid);
      ev_points = cfg_get(g, "eval", "n_points", 2000, ev_pts_opt, ev_points);
      ev_samples = cfg_get(g, "eval", "n_samples", 48, ev_samp_opt, ev_samples);
      return cmd_eval(g, ev_scene, ev_ckpt, ev_mesh, ev_obs, ev_est, ev_grid, ev_points,
                      ev_samples);
    }
    return 1;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
