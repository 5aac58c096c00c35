// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cvfnet/geometry.hpp"
#include "cvfnet/nn.hpp"
#include "cvfnet/ops.hpp"
#include "cvfnet/tensor.hpp"

namespace cvf {

// BEV voxel grid. W cells along x, H along y, D along z; every range must be
// an exact multiple of its voxel size. Intervals are half-open: a point at
// the max boundary is out of range.
struct VoxelGridConfig {
  double x_min = 0.0, x_max = 69.12;
  double y_min = -39.68, y_max = 39.68;
  double z_min = -3.0, z_max = 1.0;
  double vx = 0.16, vy = 0.16, vz = 0.2;
  int H = 0, W = 0, D = 0;

  static VoxelGridConfig create(double x_min, double x_max, double y_min, double y_max,
                                double z_min, double z_max, double vx, double vy,
                                double vz) {
    VoxelGridConfig c{x_min, x_max, y_min, y_max, z_min, z_max, vx, vy, vz};
    c.derive();
    return c;
  }

  static VoxelGridConfig kitti() { return create(0.0, 69.12, -39.68, 39.68, -3.0, 1.0, 0.16, 0.16, 0.2); }

  void derive() {
    auto dim = [](double lo, double hi, double v, const char* axis) {
      if (!(hi > lo) || v <= 0)
        throw ConfigError(std::string("voxel grid: bad range on ") + axis);
      const double q = (hi - lo) / v;
      const long n = std::lround(q);
      if (n < 1 || std::abs(q - static_cast<double>(n)) > 1e-6)
        throw ConfigError(std::string("voxel grid: extent of ") + axis +
                          " is not an integer multiple of the voxel size");
      return static_cast<int>(n);
    };
    W = dim(x_min, x_max, vx, "x");
    H = dim(y_min, y_max, vy, "y");
    D = dim(z_min, z_max, vz, "z");
  }
};

struct VoxelIndex {
  int ix = 0, iy = 0, iz = 0;
};

// Floor quantisation of a point; nullopt when any axis leaves [0, dim).
inline std::optional<VoxelIndex> compute_voxel_index(const Point& p,
                                                     const VoxelGridConfig& cfg) {
  const double fx = std::floor((p.x - cfg.x_min) / cfg.vx);
  const double fy = std::floor((p.y - cfg.y_min) / cfg.vy);
  const double fz = std::floor((p.z - cfg.z_min) / cfg.vz);
  if (fx < 0 || fx >= cfg.W || fy < 0 || fy >= cfg.H || fz < 0 || fz >= cfg.D)
    return std::nullopt;
  return VoxelIndex{static_cast<int>(fx), static_cast<int>(fy), static_cast<int>(fz)};
}

// Scattered point features in the collapsed sliced-pillar layout: one row per
// BEV cell holding the D*C concatenation of its vertical slices. The 4D
// (H, W, D, C) volume is never materialised.
template <typename T>
struct PillarVolume {
  int H = 0, W = 0, D = 0, C = 0;
  Tensor<T> features;                   // [H*W, D*C]
  std::vector<std::uint8_t> occupancy;  // per BEV cell
  std::unordered_map<std::int64_t, std::int32_t> winners;  // flat voxel -> point

  std::int64_t voxel_flat(int iy, int ix, int iz) const {
    return (static_cast<std::int64_t>(iy) * W + ix) * D + iz;
  }
};

// Deterministic scatter: every in-range point writes its feature row into its
// voxel slice; on collision the largest point index wins and receives the
// whole gradient. Out-of-range points contribute nothing.
template <typename T>
PillarVolume<T> scatter_to_pillars(Tape<T>& tape, const Tensor<T>& point_feats,
                                   const PointCloud& pc, const VoxelGridConfig& cfg) {
  if (point_feats.rank() != 2)
    throw ShapeError("scatter_to_pillars: expected rank 2 features, got " +
                     shape_str(point_feats.shape()));
  if (point_feats.dim(0) != pc.size())
    throw ContractError("scatter_to_pillars: feature rows " +
                        std::to_string(point_feats.dim(0)) + " != point count " +
                        std::to_string(pc.size()));
  const int c = static_cast<int>(point_feats.dim(1));

  PillarVolume<T> vol;
  vol.H = cfg.H;
  vol.W = cfg.W;
  vol.D = cfg.D;
  vol.C = c;
  const std::size_t cells = static_cast<std::size_t>(cfg.H) * cfg.W;
  vol.features = Tensor<T>::zeros({cells, static_cast<std::size_t>(cfg.D) * c});
  vol.occupancy.assign(cells, 0);

  for (std::size_t i = 0; i < pc.size(); ++i) {
    const auto vi = compute_voxel_index(pc.points[i], cfg);
    if (!vi) continue;
    vol.winners[vol.voxel_flat(vi->iy, vi->ix, vi->iz)] = static_cast<std::int32_t>(i);
  }

  const T* pf = point_feats.value().data();
  T* fv = vol.features.value().data();
  const std::size_t row_len = static_cast<std::size_t>(cfg.D) * c;
  for (const auto& [voxel, point] : vol.winners) {
    const std::size_t cell = static_cast<std::size_t>(voxel / cfg.D);
    const std::size_t iz = static_cast<std::size_t>(voxel % cfg.D);
    T* dst = fv + cell * row_len + iz * c;
    const T* src = pf + static_cast<std::size_t>(point) * c;
    for (int q = 0; q < c; ++q) dst[q] = src[q];
    vol.occupancy[cell] = 1;
  }

  if (tape.recording() && point_feats.requires_grad()) {
    vol.features.set_requires_grad(true);
    tape.record([ps = point_feats.storage(), fs = vol.features.storage(),
                 winners = vol.winners, d = cfg.D, c, row_len] {
      if (fs->grad.empty()) return;
      auto gp = ensure_grad(ps);
      const T* gf = fs->grad.data();
      for (const auto& [voxel, point] : winners) {
        const std::size_t cell = static_cast<std::size_t>(voxel / d);
        const std::size_t iz = static_cast<std::size_t>(voxel % d);
        const T* src = gf + cell * row_len + iz * static_cast<std::size_t>(c);
        T* dst = gp.data() + static_cast<std::size_t>(point) * c;
        for (int q = 0; q < c; ++q) dst[q] += src[q];
      }
    });
  }
  return vol;
}

// Per-cell MLP over the D*C slice vector, reshaped to a [Cb, H, W] BEV map.
// Empty cells see the zero vector and produce bias-only activations.
template <typename T>
Tensor<T> pillar_channel_mlp(Tape<T>& tape, const PillarVolume<T>& vol,
                             const nn::Mlp<T>& mlp) {
  auto rows = mlp.forward(tape, vol.features);  // [H*W, Cb]
  auto planes = ops::transpose(tape, rows);     // [Cb, H*W]
  return ops::reshape(tape, planes,
                      {planes.dim(0), static_cast<std::size_t>(vol.H),
                       static_cast<std::size_t>(vol.W)});
}

// Three stride-2 conv blocks; each output is resized to half the input
// resolution and the three maps are concatenated channel-wise.
template <typename T>
struct BevBackbone {
  std::vector<nn::Conv2d<T>> blocks;

  BevBackbone() = default;
  BevBackbone(std::size_t c_in, const std::vector<int>& widths, Rng& rng) {
    if (widths.size() != 3)
      throw ConfigError("bev backbone: exactly three block widths required");
    std::size_t c = c_in;
    for (int w : widths) {
      blocks.emplace_back(c, static_cast<std::size_t>(w), 3, 2, rng);
      c = static_cast<std::size_t>(w);
    }
  }

  std::size_t out_channels() const {
    std::size_t total = 0;
    for (const auto& b : blocks) total += b.out_channels();
    return total;
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    const std::size_t h = x.dim(1), w = x.dim(2);
    if (h % 8 != 0 || w % 8 != 0)
      throw ConfigError("bev backbone: spatial size " + std::to_string(h) + "x" +
                        std::to_string(w) + " must be divisible by 8");
    const int th = static_cast<int>(h / 2), tw = static_cast<int>(w / 2);
    std::vector<Tensor<T>> scaled;
    Tensor<T> y = x;
    for (const auto& b : blocks) {
      y = ops::relu(tape, b.forward(tape, y));
      scaled.push_back(ops::bilinear_resize(tape, y, th, tw));
    }
    return ops::concat(tape, std::span<const Tensor<T>>(scaled), 0);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  }
};

// BEV-cell occupancy max-pooled to the head stride.
inline std::vector<int> valid_cells_at_stride(const std::vector<std::uint8_t>& occupancy,
                                              int H, int W, int stride) {
  const int hh = H / stride, ww = W / stride;
  std::vector<int> cells;
  for (int r = 0; r < hh; ++r)
    for (int c = 0; c < ww; ++c) {
      bool any = false;
      for (int dy = 0; dy < stride && !any; ++dy)
        for (int dx = 0; dx < stride && !any; ++dx)
          any = occupancy[(r * stride + dy) * W + (c * stride + dx)] != 0;
      if (any) cells.push_back(r * ww + c);
    }
  return cells;
}

}  // namespace cvf
