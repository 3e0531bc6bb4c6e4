#pragma once

#include "sv3d/common.hpp"
#include "sv3d/diffusion.hpp"
#include "sv3d/field.hpp"
#include "sv3d/geometry.hpp"
#include "sv3d/inverse.hpp"
#include "sv3d/meshing.hpp"
#include "sv3d/metrics.hpp"
#include "sv3d/scene.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace sv3d::io {

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

// 8-bit PNG, grayscale or RGB. Pixel values are sRGB-encoded with gamma
// 2.2 on write and decoded back to linear on read; `gamma = false`
// round-trips raw 0..1 levels (masks).
void write_png(const std::string& path, const Image& img, bool gamma = true);
Image read_png(const std::string& path, bool gamma = true);

// Grayscale PFM, little-endian float32, bottom-up scanlines.
void write_pfm(const std::string& path, const Image& img);
Image read_pfm(const std::string& path);

// ASCII OBJ, triangles only.
void write_obj(const std::string& path, const meshing::TriMesh& mesh);
meshing::TriMesh read_obj(const std::string& path);

void write_checkpoint(const std::string& path, const field::TriplaneField& field);
field::TriplaneField read_checkpoint(const std::string& path);

void write_loss_csv(const std::string& path, const std::vector<double>& curve);
void write_schedule_csv(const std::string& path, const diffusion::DiffusionSchedule& schedule);

nlohmann::json pose_to_json(const geometry::CameraPose& pose);
geometry::CameraPose pose_from_json(const nlohmann::json& j);
void write_poses(const std::string& path, const std::vector<geometry::CameraPose>& poses);
std::vector<geometry::CameraPose> read_poses(const std::string& path);

void write_scene(const std::string& path, const scene::AnalyticScene& sc, std::uint64_t seed);
scene::AnalyticScene read_scene(const std::string& path);

void write_pose_estimate(const std::string& path, const inverse::PoseEstimate& estimate);
inverse::PoseEstimate read_pose_estimate(const std::string& path);

void write_metrics(const std::string& path, const metrics::MetricsReport& report);

// Per-command provenance record; `timestamp` is the only field allowed
// to differ between identical runs.
void write_manifest(const std::string& path, const std::string& command, std::uint64_t seed,
                    int threads, const nlohmann::json& effective_config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs);

}  // namespace sv3d::io
