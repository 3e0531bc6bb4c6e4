#include "sv3d/io.hpp"

#include <zlib.h>

#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

namespace sv3d::io {

using nlohmann::json;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << text;
}

std::string read_text(const std::string& path) {
  auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

// ---------------------------------------------------------------- PNG

namespace {

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

std::uint32_t get_u32_be(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& data) {
  put_u32_be(out, std::uint32_t(data.size()));
  std::size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  std::uint32_t crc = ::crc32(0, out.data() + type_at, uInt(4 + data.size()));
  put_u32_be(out, crc);
}

std::uint8_t encode_level(double v, bool gamma) {
  v = std::clamp(v, 0.0, 1.0);
  if (gamma) v = std::pow(v, 1.0 / 2.2);
  return std::uint8_t(std::lround(v * 255.0));
}

double decode_level(std::uint8_t b, bool gamma) {
  double v = double(b) / 255.0;
  return gamma ? std::pow(v, 2.2) : v;
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const Image& img, bool gamma) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("write_png: only 1- or 3-channel images");
  const int bpp = img.channels;

  std::vector<std::uint8_t> raw;
  raw.reserve(std::size_t(img.height) * (1 + std::size_t(img.width) * bpp));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < bpp; ++c) raw.push_back(encode_level(img.at(y, x, c), gamma));
  }

  uLongf comp_len = ::compressBound(uLong(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (::compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 9) != Z_OK)
    throw IoError("write_png: deflate failed");
  comp.resize(comp_len);

  std::vector<std::uint8_t> out = {137, 'P', 'N', 'G', 13, 10, 26, 10};
  std::vector<std::uint8_t> ihdr;
  put_u32_be(ihdr, std::uint32_t(img.width));
  put_u32_be(ihdr, std::uint32_t(img.height));
  ihdr.push_back(8);                         // bit depth
  ihdr.push_back(bpp == 1 ? 0 : 2);          // gray / truecolor
  ihdr.insert(ihdr.end(), {0, 0, 0});        // compression, filter, interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});
  write_file(path, out);
}

Image read_png(const std::string& path, bool gamma) {
  std::vector<std::uint8_t> bytes = read_file(path);
  static const std::uint8_t sig[8] = {137, 'P', 'N', 'G', 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw IoError("read_png: bad signature in " + path);

  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    std::uint32_t len = get_u32_be(&bytes[pos]);
    std::string type(bytes.begin() + pos + 4, bytes.begin() + pos + 8);
    if (pos + 12 + len > bytes.size()) throw IoError("read_png: truncated chunk");
    const std::uint8_t* data = &bytes[pos + 8];
    if (type == "IHDR") {
      width = int(get_u32_be(data));
      height = int(get_u32_be(data + 4));
      if (data[8] != 8) throw IoError("read_png: only 8-bit depth supported");
      if (data[9] == 0)
        channels = 1;
      else if (data[9] == 2)
        channels = 3;
      else
        throw IoError("read_png: only grayscale/truecolor supported");
      if (data[12] != 0) throw IoError("read_png: interlaced PNG unsupported");
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0) throw IoError("read_png: missing IHDR");

  const std::size_t stride = std::size_t(width) * channels;
  std::vector<std::uint8_t> raw(std::size_t(height) * (stride + 1));
  uLongf raw_len = uLongf(raw.size());
  if (::uncompress(raw.data(), &raw_len, idat.data(), uLong(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw IoError("read_png: inflate failed");

  Image img(width, height, channels);
  std::vector<std::uint8_t> prev(stride, 0), cur(stride);
  for (int y = 0; y < height; ++y) {
    const std::uint8_t* row = &raw[std::size_t(y) * (stride + 1)];
    std::uint8_t filter = row[0];
    for (std::size_t i = 0; i < stride; ++i) {
      int a = i >= std::size_t(channels) ? cur[i - channels] : 0;
      int b = prev[i];
      int c = i >= std::size_t(channels) ? prev[i - channels] : 0;
      int x = row[1 + i];
      switch (filter) {
        case 0: break;
        case 1: x += a; break;
        case 2: x += b; break;
        case 3: x += (a + b) / 2; break;
        case 4: x += paeth(a, b, c); break;
        default: throw IoError("read_png: bad filter type");
      }
      cur[i] = std::uint8_t(x);
    }
    for (int px = 0; px < width; ++px)
      for (int ch = 0; ch < channels; ++ch)
        img.at(y, px, ch) = decode_level(cur[std::size_t(px) * channels + ch], gamma);
    std::swap(prev, cur);
  }
  return img;
}

// ---------------------------------------------------------------- PFM

void write_pfm(const std::string& path, const Image& img) {
  if (img.channels != 1) throw IoError("write_pfm: grayscale only");
  std::ostringstream header;
  header << "Pf\n" << img.width << " " << img.height << "\n-1.0\n";
  std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  for (int y = img.height - 1; y >= 0; --y)  // bottom-up
    for (int x = 0; x < img.width; ++x) {
      float v = float(img.at(y, x, 0));
      const std::uint8_t* p = reinterpret_cast<const std::uint8_t*>(&v);
      out.insert(out.end(), p, p + 4);
    }
  write_file(path, out);
}

Image read_pfm(const std::string& path) {
  std::vector<std::uint8_t> bytes = read_file(path);
  std::string text(bytes.begin(), bytes.end());
  std::istringstream header(text);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  header >> magic >> w >> h >> scale;
  if (magic != "Pf" || w <= 0 || h <= 0 || scale >= 0.0)
    throw IoError("read_pfm: unsupported header in " + path);
  std::size_t data_at = std::size_t(header.tellg()) + 1;  // single whitespace after scale
  if (data_at + std::size_t(w) * h * 4 > bytes.size()) throw IoError("read_pfm: truncated");
  Image img(w, h, 1);
  const std::uint8_t* p = bytes.data() + data_at;
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x) {
      float v;
      std::memcpy(&v, p, 4);
      p += 4;
      img.at(y, x, 0) = double(v);
    }
  return img;
}

// ---------------------------------------------------------------- OBJ

void write_obj(const std::string& path, const meshing::TriMesh& mesh) {
  std::ostringstream out;
  out.precision(9);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 << " " << t[1] + 1 << " " << t[2] + 1 << "\n";
  write_text(path, out.str());
}

meshing::TriMesh read_obj(const std::string& path) {
  std::istringstream in(read_text(path));
  meshing::TriMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      ls >> v.x() >> v.y() >> v.z();
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::array<int, 3> t;
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        ls >> tok;
        t[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      mesh.triangles.push_back(t);
    }
  }
  return mesh;
}

// -------------------------------------------------------------- misc

void write_checkpoint(const std::string& path, const field::TriplaneField& field) {
  write_file(path, field.serialize());
}

field::TriplaneField read_checkpoint(const std::string& path) {
  return field::TriplaneField::deserialize(read_file(path));
}

void write_loss_csv(const std::string& path, const std::vector<double>& curve) {
  std::ostringstream out;
  out.precision(12);
  out << "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) out << i << "," << curve[i] << "\n";
  write_text(path, out.str());
}

void write_schedule_csv(const std::string& path, const diffusion::DiffusionSchedule& schedule) {
  std::ostringstream out;
  out.precision(12);
  out << "t,beta,alpha,alpha_bar,sigma\n";
  for (int t = 1; t <= schedule.T; ++t)
    out << t << "," << schedule.beta[t] << "," << schedule.alpha[t] << ","
        << schedule.alpha_bar[t] << "," << schedule.sigma[t] << "\n";
  write_text(path, out.str());
}

json pose_to_json(const geometry::CameraPose& pose) {
  return json{{"azimuth_deg", pose.azimuth_deg},     {"elevation_deg", pose.elevation_deg},
              {"roll_deg", pose.roll_deg},           {"radius", pose.radius},
              {"fov_deg", pose.fov_deg},             {"width", pose.width},
              {"height", pose.height}};
}

geometry::CameraPose pose_from_json(const json& j) {
  geometry::CameraPose p;
  p.azimuth_deg = j.at("azimuth_deg").get<double>();
  p.elevation_deg = j.at("elevation_deg").get<double>();
  p.roll_deg = j.value("roll_deg", 0.0);
  p.radius = j.value("radius", 1.5);
  p.fov_deg = j.value("fov_deg", 50.0);
  p.width = j.value("width", 64);
  p.height = j.value("height", 64);
  return p;
}

void write_poses(const std::string& path, const std::vector<geometry::CameraPose>& poses) {
  json arr = json::array();
  for (const auto& p : poses) arr.push_back(pose_to_json(p));
  write_text(path, json{{"poses", arr}}.dump(2) + "\n");
}

std::vector<geometry::CameraPose> read_poses(const std::string& path) {
  json j = json::parse(read_text(path));
  std::vector<geometry::CameraPose> poses;
  for (const auto& e : j.at("poses")) poses.push_back(pose_from_json(e));
  return poses;
}

namespace {

json sdf_to_json(const scene::SdfNode& node) {
  using Kind = scene::SdfNode::Kind;
  json j;
  switch (node.kind) {
    case Kind::Sphere:
      j = {{"kind", "sphere"},
           {"center", {node.center.x(), node.center.y(), node.center.z()}},
           {"radius", node.radius}};
      break;
    case Kind::Box:
      j = {{"kind", "box"},
           {"center", {node.center.x(), node.center.y(), node.center.z()}},
           {"half_extents", {node.half_extents.x(), node.half_extents.y(), node.half_extents.z()}}};
      break;
    case Kind::Torus:
      j = {{"kind", "torus"},
           {"center", {node.center.x(), node.center.y(), node.center.z()}},
           {"major", node.major},
           {"minor", node.minor}};
      break;
    case Kind::Union: {
      json children = json::array();
      for (const auto& c : node.children) children.push_back(sdf_to_json(c));
      j = {{"kind", "union"}, {"children", children}};
      break;
    }
  }
  return j;
}

Vec3 vec_from_json(const json& j) { return Vec3(j.at(0), j.at(1), j.at(2)); }

scene::SdfNode sdf_from_json(const json& j) {
  std::string kind = j.at("kind");
  if (kind == "sphere") return scene::SdfNode::sphere(vec_from_json(j.at("center")), j.at("radius"));
  if (kind == "box")
    return scene::SdfNode::box(vec_from_json(j.at("center")), vec_from_json(j.at("half_extents")));
  if (kind == "torus")
    return scene::SdfNode::torus(vec_from_json(j.at("center")), j.at("major"), j.at("minor"));
  if (kind == "union") {
    std::vector<scene::SdfNode> children;
    for (const auto& c : j.at("children")) children.push_back(sdf_from_json(c));
    return scene::SdfNode::join(std::move(children));
  }
  throw IoError("scene.json: unknown sdf node kind " + kind);
}

}  // namespace

void write_scene(const std::string& path, const scene::AnalyticScene& sc, std::uint64_t seed) {
  json j = {{"preset", sc.preset},
            {"params", sdf_to_json(sc.sdf)},
            {"density", {{"sigma_max", sc.sigma_max}, {"width", sc.width}}},
            {"color",
             {{"kind", sc.color_fn.kind == scene::ColorFn::Kind::Checker ? "checker" : "axis_gradient"},
              {"period", sc.color_fn.period},
              {"color_a", {sc.color_fn.color_a.x(), sc.color_fn.color_a.y(), sc.color_fn.color_a.z()}},
              {"color_b", {sc.color_fn.color_b.x(), sc.color_fn.color_b.y(), sc.color_fn.color_b.z()}}}},
            {"seed", seed}};
  write_text(path, j.dump(2) + "\n");
}

scene::AnalyticScene read_scene(const std::string& path) {
  json j = json::parse(read_text(path));
  scene::AnalyticScene sc;
  sc.preset = j.value("preset", "custom");
  sc.sdf = sdf_from_json(j.at("params"));
  sc.sigma_max = j.at("density").at("sigma_max");
  sc.width = j.at("density").at("width");
  const json& c = j.at("color");
  sc.color_fn.kind = c.at("kind") == "checker" ? scene::ColorFn::Kind::Checker
                                               : scene::ColorFn::Kind::AxisGradient;
  sc.color_fn.period = c.at("period");
  sc.color_fn.color_a = vec_from_json(c.at("color_a"));
  sc.color_fn.color_b = vec_from_json(c.at("color_b"));
  return sc;
}

void write_pose_estimate(const std::string& path, const inverse::PoseEstimate& estimate) {
  json j = {{"azimuth_deg", estimate.pose.azimuth_deg},
            {"elevation_deg", estimate.pose.elevation_deg},
            {"roll_deg", estimate.pose.roll_deg},
            {"radius", estimate.pose.radius},
            {"final_loss", estimate.final_loss},
            {"start_index", estimate.start_index},
            {"iterations", estimate.iterations}};
  write_text(path, j.dump(2) + "\n");
}

inverse::PoseEstimate read_pose_estimate(const std::string& path) {
  json j = json::parse(read_text(path));
  inverse::PoseEstimate e;
  e.pose.azimuth_deg = j.at("azimuth_deg");
  e.pose.elevation_deg = j.at("elevation_deg");
  e.pose.roll_deg = j.at("roll_deg");
  e.pose.radius = j.at("radius");
  e.final_loss = j.at("final_loss");
  e.start_index = j.at("start_index");
  e.iterations = j.at("iterations");
  return e;
}

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

void write_metrics(const std::string& path, const metrics::MetricsReport& report) {
  json acc = json::object();
  for (const auto& [thr, frac] : report.pose_accuracy) {
    std::ostringstream key;
    key << thr;
    acc[key.str()] = frac;
  }
  json j = {{"psnr_db", report.psnr_db},
            {"psnr_db_mean", mean_of(report.psnr_db)},
            {"ssim", report.ssim},
            {"ssim_mean", mean_of(report.ssim)},
            {"perceptual_proxy", report.perceptual_proxy},
            {"perceptual_proxy_mean", mean_of(report.perceptual_proxy)},
            {"chamfer", report.chamfer},
            {"volume_iou", report.volume_iou},
            {"icp_rmse", report.icp_rmse},
            {"pose_accuracy", acc}};
  write_text(path, j.dump(2) + "\n");
}

void write_manifest(const std::string& path, const std::string& command, std::uint64_t seed,
                    int threads, const json& effective_config,
                    const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  auto now = std::chrono::system_clock::now().time_since_epoch();
  json j = {{"command", command},
            {"seed", seed},
            {"threads", threads},
            {"config", effective_config},
            {"inputs", inputs},
            {"outputs", outputs},
            {"format_version", 1},
            {"timestamp_unix_ms",
             std::chrono::duration_cast<std::chrono::milliseconds>(now).count()}};
  write_text(path, j.dump(2) + "\n");
}

}  // namespace sv3d::io
