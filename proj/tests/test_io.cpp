#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sv3d/io.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace sv3d;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "sv3d_io_tests";
    fs::create_directories(d);
    return d;
  }();
  return (dir / name).string();
}

Image test_pattern(int w, int h, int c) {
  Image img(w, h, c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        img.at(y, x, ch) = 0.5 + 0.5 * std::sin(0.37 * x + 0.71 * y + 1.3 * ch);
  return img;
}

}  // namespace

TEST_CASE("raw bytes and text round-trip; missing files throw IoError") {
  std::vector<std::uint8_t> bytes{0, 1, 2, 255, 128, 7};
  io::write_file(tmp_path("blob.bin"), bytes);
  CHECK(io::read_file(tmp_path("blob.bin")) == bytes);

  io::write_text(tmp_path("note.txt"), "hello\nworld\n");
  CHECK(io::read_text(tmp_path("note.txt")) == "hello\nworld\n");

  CHECK_THROWS_AS(io::read_file(tmp_path("no_such_file")), io::IoError);
  CHECK_THROWS_AS(io::read_text(tmp_path("no_such_file")), io::IoError);
}

TEST_CASE("png round-trips within quantization, both gamma modes") {
  Image rgb = test_pattern(23, 17, 3);
  io::write_png(tmp_path("a.png"), rgb, true);
  Image back = io::read_png(tmp_path("a.png"), true);
  REQUIRE(back.width == 23);
  REQUIRE(back.height == 17);
  REQUIRE(back.channels == 3);
  // 8-bit quantization in gamma space: worst-case linear step ~ 2.2/255
  for (std::size_t i = 0; i < rgb.data.size(); ++i)
    CHECK(std::abs(back.data[i] - rgb.data[i]) < 0.006);

  // linear (mask) mode: half a level
  Image gray = test_pattern(9, 11, 1);
  io::write_png(tmp_path("m.png"), gray, false);
  Image gback = io::read_png(tmp_path("m.png"), false);
  REQUIRE(gback.channels == 1);
  for (std::size_t i = 0; i < gray.data.size(); ++i)
    CHECK(std::abs(gback.data[i] - gray.data[i]) <= 0.5 / 255.0 + 1e-12);

  // 0/1 masks survive exactly
  Image hard(8, 8, 1);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) hard.at(y, x, 0) = (x + y) % 2;
  io::write_png(tmp_path("h.png"), hard, false);
  CHECK(io::read_png(tmp_path("h.png"), false).data == hard.data);

  // deterministic bytes
  io::write_png(tmp_path("a2.png"), rgb, true);
  CHECK(io::read_file(tmp_path("a.png")) == io::read_file(tmp_path("a2.png")));
}

TEST_CASE("pfm round-trips float32 exactly") {
  Image depth = test_pattern(13, 7, 1);
  depth.at(0, 0, 0) = 1.25;  // exact in binary
  io::write_pfm(tmp_path("d.pfm"), depth);
  Image back = io::read_pfm(tmp_path("d.pfm"));
  REQUIRE(back.width == 13);
  REQUIRE(back.height == 7);
  for (std::size_t i = 0; i < depth.data.size(); ++i)
    CHECK(back.data[i] == double(float(depth.data[i])));
}

TEST_CASE("obj round-trips vertices and 1-based faces") {
  meshing::TriMesh mesh;
  mesh.vertices = {Vec3(0.123456789, -1, 0.5), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  mesh.triangles = {{0, 1, 2}, {0, 2, 3}, {1, 3, 2}};
  io::write_obj(tmp_path("m.obj"), mesh);
  meshing::TriMesh back = io::read_obj(tmp_path("m.obj"));
  REQUIRE(back.vertices.size() == 4);
  REQUIRE(back.triangles == mesh.triangles);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
    CHECK((back.vertices[i] - mesh.vertices[i]).norm() < 1e-7);
  // 1-based indices on disk
  std::string text = io::read_text(tmp_path("m.obj"));
  CHECK(text.find("f 1 2 3") != std::string::npos);
}

TEST_CASE("checkpoint file round-trip preserves the serialized form") {
  field::TriplaneField f(8, 2, 16, 42);
  io::write_checkpoint(tmp_path("f.prgm"), f);
  field::TriplaneField back = io::read_checkpoint(tmp_path("f.prgm"));
  CHECK(back.resolution() == 8);
  CHECK(back.feature_dim() == 2);
  // params already float32-quantized after one trip
  CHECK(back.serialize() == f.serialize());
}

TEST_CASE("poses json round-trip is exact") {
  std::vector<geometry::CameraPose> poses;
  for (int i = 0; i < 3; ++i) {
    geometry::CameraPose p;
    p.azimuth_deg = 10.123456789 * i;
    p.elevation_deg = -5.5 + i;
    p.roll_deg = 0.25 * i;
    p.radius = 1.5 + 0.01 * i;
    p.fov_deg = 50.0 - i;
    p.width = 64 + i;
    p.height = 32 + i;
    poses.push_back(p);
  }
  io::write_poses(tmp_path("poses.json"), poses);
  auto back = io::read_poses(tmp_path("poses.json"));
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].azimuth_deg == poses[i].azimuth_deg);
    CHECK(back[i].elevation_deg == poses[i].elevation_deg);
    CHECK(back[i].roll_deg == poses[i].roll_deg);
    CHECK(back[i].radius == poses[i].radius);
    CHECK(back[i].fov_deg == poses[i].fov_deg);
    CHECK(back[i].width == poses[i].width);
    CHECK(back[i].height == poses[i].height);
  }
}

TEST_CASE("scene json round-trip reproduces the density and color fields") {
  scene::AnalyticScene sc = scene::make_preset("composite");
  io::write_scene(tmp_path("scene.json"), sc, 7);
  scene::AnalyticScene back = io::read_scene(tmp_path("scene.json"));
  CHECK(back.preset == "composite");
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    CHECK(back.density(p) == sc.density(p));
    CHECK(back.color(p) == sc.color(p));
  }
  // seed echoed into the file
  auto j = nlohmann::json::parse(io::read_text(tmp_path("scene.json")));
  CHECK(j.at("seed") == 7);
}

TEST_CASE("pose estimate json round-trip") {
  inverse::PoseEstimate est;
  est.pose.azimuth_deg = 123.456;
  est.pose.elevation_deg = -12.5;
  est.pose.roll_deg = 1.75;
  est.pose.radius = 1.48;
  est.final_loss = 0.00123456789;
  est.start_index = 17;
  est.iterations = 88;
  io::write_pose_estimate(tmp_path("est.json"), est);
  inverse::PoseEstimate back = io::read_pose_estimate(tmp_path("est.json"));
  CHECK(back.pose.azimuth_deg == est.pose.azimuth_deg);
  CHECK(back.pose.elevation_deg == est.pose.elevation_deg);
  CHECK(back.pose.roll_deg == est.pose.roll_deg);
  CHECK(back.pose.radius == est.pose.radius);
  CHECK(back.final_loss == est.final_loss);
  CHECK(back.start_index == est.start_index);
  CHECK(back.iterations == est.iterations);
}

TEST_CASE("metrics json carries per-view arrays, means, and accuracy map") {
  metrics::MetricsReport report;
  report.psnr_db = {20.0, 30.0};
  report.ssim = {0.9, 0.8};
  report.perceptual_proxy = {0.01, 0.03};
  report.chamfer = 0.005;
  report.volume_iou = 0.85;
  report.icp_rmse = 0.002;
  report.pose_accuracy = {{15.0, 0.5}, {30.0, 1.0}};
  io::write_metrics(tmp_path("metrics.json"), report);
  auto j = nlohmann::json::parse(io::read_text(tmp_path("metrics.json")));
  CHECK(j.at("psnr_db").get<std::vector<double>>() == report.psnr_db);
  CHECK(j.at("psnr_db_mean").get<double>() == doctest::Approx(25.0).epsilon(1e-15));
  CHECK(j.at("ssim_mean").get<double>() == doctest::Approx(0.85).epsilon(1e-15));
  CHECK(j.at("perceptual_proxy").get<std::vector<double>>() == report.perceptual_proxy);
  CHECK(j.at("chamfer").get<double>() == 0.005);
  CHECK(j.at("volume_iou").get<double>() == 0.85);
  CHECK(j.at("icp_rmse").get<double>() == 0.002);
  CHECK(j.at("pose_accuracy").at("15").get<double>() == 0.5);
  CHECK(j.at("pose_accuracy").at("30").get<double>() == 1.0);
}

TEST_CASE("csv dumps: loss curve and diffusion schedule") {
  io::write_loss_csv(tmp_path("loss.csv"), {0.5, 0.25, 0.125});
  std::istringstream loss(io::read_text(tmp_path("loss.csv")));
  std::string line;
  std::getline(loss, line);
  CHECK(line == "step,loss");
  std::getline(loss, line);
  CHECK(line == "0,0.5");
  std::getline(loss, line);
  CHECK(line == "1,0.25");
  std::getline(loss, line);
  CHECK(line == "2,0.125");
  CHECK(!std::getline(loss, line));

  auto schedule = diffusion::make_schedule(std::vector<double>{0.1, 0.2});
  io::write_schedule_csv(tmp_path("schedule.csv"), schedule);
  std::istringstream sched(io::read_text(tmp_path("schedule.csv")));
  std::getline(sched, line);
  CHECK(line == "t,beta,alpha,alpha_bar,sigma");
  int rows = 0;
  while (std::getline(sched, line)) {
    ++rows;
    std::istringstream ls(line);
    int t;
    char comma;
    double beta, alpha, abar, sigma;
    ls >> t >> comma >> beta >> comma >> alpha >> comma >> abar >> comma >> sigma;
    CHECK(t == rows);
    CHECK(beta == doctest::Approx(schedule.beta[t]).epsilon(1e-11));
    CHECK(abar == doctest::Approx(schedule.alpha_bar[t]).epsilon(1e-11));
  }
  CHECK(rows == 2);
}

TEST_CASE("manifest records the run provenance") {
  io::write_manifest(tmp_path("manifest.json"), "fit", 9, 4, {{"steps", 2000}},
                     {"obs/poses.json"}, {"out/field.prgm"});
  auto j = nlohmann::json::parse(io::read_text(tmp_path("manifest.json")));
  CHECK(j.at("command") == "fit");
  CHECK(j.at("seed") == 9);
  CHECK(j.at("threads") == 4);
  CHECK(j.at("config").at("steps") == 2000);
  CHECK(j.at("inputs").get<std::vector<std::string>>() ==
        std::vector<std::string>{"obs/poses.json"});
  CHECK(j.at("outputs").get<std::vector<std::string>>() ==
        std::vector<std::string>{"out/field.prgm"});
  CHECK(j.contains("timestamp_unix_ms"));
}
