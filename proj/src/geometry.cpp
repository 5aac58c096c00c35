// SPDX-License-Identifier: Apache-2.0
#include "cvfnet/geometry.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cvf {

std::optional<Projection> project_point(const Point& p, const SphericalConfig& cfg) {
  const double r = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
  if (r == 0.0) throw DomainError("project_point: degenerate zero-range point");
  const double elevation = std::asin(p.z / r);
  if (elevation < cfg.fov_down || elevation > cfg.fov_up) return std::nullopt;
  Projection proj;
  proj.u_f = 0.5 * (1.0 - std::atan2(p.y, p.x) / kPi) * cfg.w;
  // Elevation measured upward from fov_down so that v = 0 is the top beam.
  proj.v_f = (1.0 - (elevation - cfg.fov_down) / cfg.fov()) * cfg.h;
  proj.r = r;
  return proj;
}

namespace detail {

std::size_t project_cloud(const PointCloud& pc, const SphericalConfig& cfg,
                          IndexTable& table, std::vector<PixelChoice>& owners) {
  cfg.validate();
  if (pc.empty()) throw DataError("build_range_image: empty point cloud");

  table.h = cfg.h;
  table.w = cfg.w;
  table.point_to_pixel.assign(pc.size(), std::nullopt);
  table.pixel_to_point.assign(static_cast<std::size_t>(cfg.h) * cfg.w, -1);
  owners.assign(static_cast<std::size_t>(cfg.h) * cfg.w, PixelChoice{});

  std::size_t valid = 0;
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const auto proj = project_point(pc.points[i], cfg);
    if (!proj) continue;
    int u = static_cast<int>(std::floor(proj->u_f));
    int v = static_cast<int>(std::floor(proj->v_f));
    u = std::clamp(u, 0, cfg.w - 1);
    v = std::clamp(v, 0, cfg.h - 1);
    table.point_to_pixel[i] = IndexTable::Entry{u, v, proj->u_f, proj->v_f};
    ++valid;
    PixelChoice& slot = owners[static_cast<std::size_t>(v) * cfg.w + u];
    if (slot.point < 0 || proj->r < slot.range) {
      slot.point = static_cast<std::int32_t>(i);
      slot.range = proj->r;
    }
  }
  if (valid == 0)
    throw DataError("build_range_image: no point falls inside the vertical FOV");

  for (std::size_t pix = 0; pix < owners.size(); ++pix)
    table.pixel_to_point[pix] = owners[pix].point;
  return valid;
}

}  // namespace detail

PointCloud read_point_cloud_bin(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw DataError("cannot open point cloud: " + path);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes % 16 != 0)
    throw ParseError("point cloud " + path + " has size " + std::to_string(bytes) +
                     " not divisible by 16");
  is.seekg(0);
  std::vector<float> raw(bytes / sizeof(float));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  if (!is) throw DataError("short read on point cloud: " + path);
  PointCloud pc;
  pc.points.resize(raw.size() / 4);
  for (std::size_t i = 0; i < pc.points.size(); ++i)
    pc.points[i] = {raw[4 * i], raw[4 * i + 1], raw[4 * i + 2], raw[4 * i + 3]};
  return pc;
}

PointCloud read_point_cloud_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open point cloud: " + path);
  PointCloud pc;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Point p;
    if (!(ls >> p.x >> p.y >> p.z >> p.intensity))
      throw ParseError("point cloud " + path + ": malformed line " +
                       std::to_string(lineno));
    pc.points.push_back(p);
  }
  return pc;
}

void write_point_cloud_bin(const std::string& path, const PointCloud& pc) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open point cloud for writing: " + path);
  std::vector<float> raw(pc.size() * 4);
  for (std::size_t i = 0; i < pc.size(); ++i) {
    raw[4 * i] = static_cast<float>(pc.points[i].x);
    raw[4 * i + 1] = static_cast<float>(pc.points[i].y);
    raw[4 * i + 2] = static_cast<float>(pc.points[i].z);
    raw[4 * i + 3] = static_cast<float>(pc.points[i].intensity);
  }
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!os) throw DataError("point cloud write failed: " + path);
}

}  // namespace cvf
