// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cvfnet/error.hpp"
#include "cvfnet/ops.hpp"
#include "cvfnet/tensor.hpp"

namespace cvf {

inline constexpr double kPi = 3.14159265358979323846;

struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;
};

struct PointCloud {
  std::vector<Point> points;
  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

// Spherical range-image geometry. fov_up is positive above the horizon,
// fov_down negative below it; row 0 holds the highest beam.
struct SphericalConfig {
  int h = 48;
  int w = 512;
  double fov_up = 3.0 * kPi / 180.0;
  double fov_down = -25.0 * kPi / 180.0;

  double fov() const { return fov_up - fov_down; }

  void validate() const {
    if (h < 1 || w < 1)
      throw ConfigError("spherical: image size must be >= 1, got " + std::to_string(h) +
                        "x" + std::to_string(w));
    if (!(fov_up > fov_down))
      throw ConfigError("spherical: fov_up must exceed fov_down");
  }
};

struct Projection {
  double u_f = 0.0;
  double v_f = 0.0;
  double r = 0.0;
};

// Spherical projection of a single point; returns nullopt when the elevation
// falls outside [fov_down, fov_up]. Throws DomainError for a zero-range point.
std::optional<Projection> project_point(const Point& p, const SphericalConfig& cfg);

// Bidirectional point<->pixel correspondence built by the projection.
struct IndexTable {
  struct Entry {
    int u = 0;
    int v = 0;
    double u_f = 0.0;
    double v_f = 0.0;
  };
  int h = 0;
  int w = 0;
  std::vector<std::optional<Entry>> point_to_pixel;
  std::vector<std::int32_t> pixel_to_point;  // h*w, -1 when unowned

  std::size_t num_points() const { return point_to_pixel.size(); }
  std::int32_t owner(int v, int u) const { return pixel_to_point[v * w + u]; }
};

// Channel order of the projected image.
enum RangeChannel { kChanRange = 0, kChanX, kChanY, kChanZ, kChanIntensity };
inline constexpr int kRangeChannels = 5;

template <typename T>
struct RangeImage {
  SphericalConfig config;
  Tensor<T> channels;                 // [5, h, w]
  std::vector<std::uint8_t> occupancy;  // h*w

  bool occupied(int v, int u) const { return occupancy[v * config.w + u] != 0; }
};

namespace detail {

struct PixelChoice {
  std::int32_t point = -1;
  double range = 0.0;
};

// Shared projection pass: fills the index table and per-pixel nearest owner.
// Returns the number of valid points. Empty cloud or all-invalid points throw.
std::size_t project_cloud(const PointCloud& pc, const SphericalConfig& cfg,
                          IndexTable& table, std::vector<PixelChoice>& owners);

}  // namespace detail

// Projects the cloud into the 5-channel range image. On pixel collisions the
// nearest point owns the pixel and supplies all channels.
template <typename T>
std::pair<RangeImage<T>, IndexTable> build_range_image(const PointCloud& pc,
                                                       const SphericalConfig& cfg) {
  IndexTable table;
  std::vector<detail::PixelChoice> owners;
  detail::project_cloud(pc, cfg, table, owners);

  RangeImage<T> img;
  img.config = cfg;
  img.channels = Tensor<T>::zeros({kRangeChannels, static_cast<std::size_t>(cfg.h),
                                   static_cast<std::size_t>(cfg.w)});
  img.occupancy.assign(static_cast<std::size_t>(cfg.h) * cfg.w, 0);

  auto ch = img.channels.value();
  const std::size_t plane = static_cast<std::size_t>(cfg.h) * cfg.w;
  for (std::size_t pix = 0; pix < owners.size(); ++pix) {
    if (owners[pix].point < 0) continue;
    const Point& p = pc.points[owners[pix].point];
    ch[kChanRange * plane + pix] = static_cast<T>(owners[pix].range);
    ch[kChanX * plane + pix] = static_cast<T>(p.x);
    ch[kChanY * plane + pix] = static_cast<T>(p.y);
    ch[kChanZ * plane + pix] = static_cast<T>(p.z);
    ch[kChanIntensity * plane + pix] = static_cast<T>(p.intensity);
    img.occupancy[pix] = 1;
  }
  return {std::move(img), std::move(table)};
}

// Samples per-point features from a (possibly downscaled) range feature map
// via the index table. Invalid points receive zero rows. scale must equal
// h'/h and w'/w simultaneously.
template <typename T>
Tensor<T> point_features_from_range(Tape<T>& tape, const Tensor<T>& range_feats,
                                    const IndexTable& table, double scale) {
  if (range_feats.rank() != 3)
    throw ShapeError("point_features_from_range: expected rank 3 map, got " +
                     shape_str(range_feats.shape()));
  const auto hp = static_cast<std::int64_t>(range_feats.dim(1));
  const auto wp = static_cast<std::int64_t>(range_feats.dim(2));
  const auto want_h = static_cast<std::int64_t>(std::llround(table.h * scale));
  const auto want_w = static_cast<std::int64_t>(std::llround(table.w * scale));
  if (hp != want_h || wp != want_w)
    throw ConfigError("point_features_from_range: scale " + std::to_string(scale) +
                      " is inconsistent with map " + std::to_string(hp) + "x" +
                      std::to_string(wp) + " over base " + std::to_string(table.h) +
                      "x" + std::to_string(table.w));

  const std::size_t n = table.num_points();
  const std::size_t c = range_feats.dim(0);
  std::vector<ops::Sample2d> coords;
  std::vector<int> valid_idx;
  coords.reserve(n);
  valid_idx.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = table.point_to_pixel[i];
    if (!e) continue;
    coords.push_back({e->u_f * scale, e->v_f * scale});
    valid_idx.push_back(static_cast<int>(i));
  }
  if (valid_idx.empty()) return Tensor<T>::zeros({n, c});
  auto sampled = ops::bilinear_sample(tape, range_feats, coords);
  return ops::scatter_rows(tape, sampled, valid_idx, n);
}

// Writes per-point feature rows onto the full-resolution range view at their
// owning pixels; unowned pixels pass prev through unchanged.
template <typename T>
Tensor<T> range_features_from_points(Tape<T>& tape, const Tensor<T>& point_feats,
                                     const IndexTable& table, const Tensor<T>& prev) {
  if (point_feats.rank() != 2)
    throw ShapeError("range_features_from_points: expected rank 2 features, got " +
                     shape_str(point_feats.shape()));
  if (prev.rank() != 3)
    throw ShapeError("range_features_from_points: expected rank 3 map, got " +
                     shape_str(prev.shape()));
  if (point_feats.dim(0) != table.num_points())
    throw ContractError("range_features_from_points: feature rows " +
                        std::to_string(point_feats.dim(0)) + " != table points " +
                        std::to_string(table.num_points()));
  const std::size_t c = prev.dim(0);
  if (point_feats.dim(1) != c)
    throw ShapeError("range_features_from_points: channel axis mismatch (" +
                     std::to_string(point_feats.dim(1)) + " vs " + std::to_string(c) +
                     ")");
  if (static_cast<int>(prev.dim(1)) != table.h || static_cast<int>(prev.dim(2)) != table.w)
    throw ShapeError("range_features_from_points: map must be full resolution " +
                     std::to_string(table.h) + "x" + std::to_string(table.w));

  const std::size_t plane = static_cast<std::size_t>(table.h) * table.w;
  auto out = Tensor<T>::zeros(prev.shape());
  std::copy(prev.value().begin(), prev.value().end(), out.value().begin());
  auto ov = out.value();
  const T* pf = point_feats.value().data();
  for (std::size_t pix = 0; pix < plane; ++pix) {
    const std::int32_t owner = table.pixel_to_point[pix];
    if (owner < 0) continue;
    for (std::size_t cc = 0; cc < c; ++cc)
      ov[cc * plane + pix] = pf[static_cast<std::size_t>(owner) * c + cc];
  }

  if (tape.recording() && (point_feats.requires_grad() || prev.requires_grad())) {
    out.set_requires_grad(true);
    tape.record([ps = point_feats.storage(), vs = prev.storage(), os = out.storage(),
                 owners = table.pixel_to_point, plane, c] {
      if (os->grad.empty()) return;
      const T* go = os->grad.data();
      if (ps->requires_grad) {
        auto gp = ensure_grad(ps);
        for (std::size_t pix = 0; pix < plane; ++pix) {
          const std::int32_t owner = owners[pix];
          if (owner < 0) continue;
          for (std::size_t cc = 0; cc < c; ++cc)
            gp[static_cast<std::size_t>(owner) * c + cc] += go[cc * plane + pix];
        }
      }
      if (vs->requires_grad) {
        auto gv = ensure_grad(vs);
        for (std::size_t pix = 0; pix < plane; ++pix) {
          if (owners[pix] >= 0) continue;
          for (std::size_t cc = 0; cc < c; ++cc)
            gv[cc * plane + pix] += go[cc * plane + pix];
        }
      }
    });
  }
  return out;
}

// KITTI-style readers: little-endian float32 (x, y, z, intensity) quadruplets,
// or whitespace-separated text with one point per line.
PointCloud read_point_cloud_bin(const std::string& path);
PointCloud read_point_cloud_text(const std::string& path);
void write_point_cloud_bin(const std::string& path, const PointCloud& pc);

}  // namespace cvf
