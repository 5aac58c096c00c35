// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cvfnet/geometry.hpp"
#include "cvfnet/nn.hpp"
#include "cvfnet/ops.hpp"
#include "cvfnet/tensor.hpp"

namespace cvf {

struct RangeStreamConfig {
  int base_channels = 16;
  int growth = 8;
  std::vector<int> encoder_strides{1, 1, 2, 2, 2, 2};
  std::vector<int> encoder_layers{3, 3, 5, 5, 5, 5};
  int decoder_blocks = 4;
  int decoder_layers = 3;

  void validate() const {
    if (base_channels < 1 || growth < 1)
      throw ConfigError("range stream: base_channels and growth must be >= 1");
    if (encoder_strides.size() != encoder_layers.size() || encoder_strides.empty())
      throw ConfigError("range stream: encoder_strides and encoder_layers must have equal, non-zero length");
    if (encoder_strides.size() < 2 || encoder_strides[0] != 1 || encoder_strides[1] != 1)
      throw ConfigError("range stream: the first two encoder blocks must have stride 1");
    int s2 = 0;
    for (std::size_t i = 0; i < encoder_strides.size(); ++i) {
      if (encoder_strides[i] != 1 && encoder_strides[i] != 2)
        throw ConfigError("range stream: encoder stride must be 1 or 2");
      if (i >= 2 && encoder_strides[i] != 2)
        throw ConfigError("range stream: blocks after the second must have stride 2");
      if (encoder_strides[i] == 2) ++s2;
      if (encoder_layers[i] < 1)
        throw ConfigError("range stream: every encoder block needs >= 1 layer");
    }
    if (decoder_blocks != s2)
      throw ConfigError("range stream: decoder_blocks must equal the stride-2 count (" +
                        std::to_string(s2) + ")");
    if (decoder_blocks < 3)
      throw ConfigError("range stream: at least three decoder blocks required to place the quarter-scale fusion tap");
    if (decoder_layers < 1)
      throw ConfigError("range stream: decoder_layers must be >= 1");
  }

  int downscale_factor() const {
    int f = 1;
    for (int s : encoder_strides) f *= s;
    return f;
  }
};

struct PointStreamConfig {
  std::vector<int> mlp_widths{32, 64};

  void validate() const {
    if (mlp_widths.empty() || mlp_widths.size() > 3)
      throw ConfigError("point stream: between one and three stage widths required");
    for (int w : mlp_widths)
      if (w < 1) throw ConfigError("point stream: stage widths must be >= 1");
  }
};

enum class FusionStage { kEarly, kMiddle, kLate };

// One fusion tap: which block output feeds it and at which downscale.
struct FusionStageSpec {
  FusionStage stage = FusionStage::kEarly;
  int range_tap = 0;   // encoder index for early, decoder index otherwise
  double scale = 1.0;
  std::vector<int> mlp_widths;
};

struct PrFusionConfig {
  std::array<std::vector<int>, 3> stage_widths{{{32}, {32}, {64}}};

  void validate() const {
    for (const auto& ws : stage_widths) {
      if (ws.empty()) throw ConfigError("fusion: every stage needs MLP widths");
      for (int w : ws)
        if (w < 1) throw ConfigError("fusion: MLP widths must be >= 1");
    }
  }
};

// 2D denseblock: every layer convolves the concatenation of the block input
// and all previous layer outputs into `growth` new channels; stride 2 is a
// stride-2 3x3 conv on the block input before the dense layers.
template <typename T>
struct DenseBlock {
  std::optional<nn::Conv2d<T>> down;
  std::vector<nn::Conv2d<T>> layers;
  std::size_t in_ch = 0;
  std::size_t out_ch = 0;

  DenseBlock() = default;
  DenseBlock(std::size_t c_in, int n_layers, int growth, int stride, Rng& rng)
      : in_ch(c_in) {
    if (n_layers < 1) throw ConfigError("denseblock: layers must be >= 1");
    if (stride == 2)
      down.emplace(c_in, c_in, 3, 2, rng);
    else if (stride != 1)
      throw ConfigError("denseblock: stride must be 1 or 2");
    std::size_t c = c_in;
    for (int i = 0; i < n_layers; ++i) {
      layers.emplace_back(c, static_cast<std::size_t>(growth), 3, 1, rng);
      c += static_cast<std::size_t>(growth);
    }
    out_ch = c;
  }

  Tensor<T> forward(Tape<T>& tape, const Tensor<T>& x) const {
    Tensor<T> x0 = down ? ops::relu(tape, down->forward(tape, x)) : x;
    std::vector<Tensor<T>> feats{x0};
    for (const auto& l : layers) {
      Tensor<T> in = feats.size() == 1
                         ? feats[0]
                         : ops::concat(tape, std::span<const Tensor<T>>(feats), 0);
      feats.push_back(ops::relu(tape, l.forward(tape, in)));
    }
    return ops::concat(tape, std::span<const Tensor<T>>(feats), 0);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    if (down) down->collect(prefix + ".down", out);
    for (std::size_t i = 0; i < layers.size(); ++i)
      layers[i].collect(prefix + ".l" + std::to_string(i), out);
  }
};

// Bilateral fusion block: samples range features at the point locations,
// fuses them with the point features through an MLP, and writes the result
// back to both views. Unowned range pixels pass through a learned 1x1
// projection of the incoming map so channel counts line up.
template <typename T>
struct PrFusionBlock {
  nn::Mlp<T> mlp;
  nn::Conv2d<T> proj;

  PrFusionBlock() = default;
  PrFusionBlock(std::size_t point_ch, std::size_t range_ch,
                const std::vector<int>& widths, Rng& rng)
      : mlp(point_ch + range_ch, widths, rng),
        proj(range_ch, mlp.out_channels(), 1, 1, rng) {}

  std::size_t out_channels() const { return mlp.out_channels(); }

  std::pair<Tensor<T>, Tensor<T>> forward(Tape<T>& tape, const Tensor<T>& point_feats,
                                          const Tensor<T>& range_feats,
                                          const IndexTable& table, double scale) const {
    if (point_feats.dim(0) != table.num_points())
      throw ContractError("pr_fusion: feature rows " +
                          std::to_string(point_feats.dim(0)) + " != table points " +
                          std::to_string(table.num_points()));
    auto sampled = point_features_from_range(tape, range_feats, table, scale);
    auto fused =
        mlp.forward(tape, ops::concat(tape, {point_feats, sampled}, 1));

    const int hp = static_cast<int>(range_feats.dim(1));
    const int wp = static_cast<int>(range_feats.dim(2));
    const std::size_t cm = mlp.out_channels();
    auto proj_map = proj.forward(tape, range_feats);

    // Owner rows ordered by full-resolution pixel index; the downscaled
    // last-write collision rule then depends on pixel geometry only, keeping
    // the module equivariant under point permutations.
    std::vector<int> owner_rows, dest;
    const std::size_t full_pixels = static_cast<std::size_t>(table.h) * table.w;
    for (std::size_t pix = 0; pix < full_pixels; ++pix) {
      const std::int32_t owner = table.pixel_to_point[pix];
      if (owner < 0) continue;
      const auto& e = *table.point_to_pixel[owner];
      const int du = std::min(static_cast<int>(std::floor(e.u_f * scale)), wp - 1);
      const int dv = std::min(static_cast<int>(std::floor(e.v_f * scale)), hp - 1);
      owner_rows.push_back(owner);
      dest.push_back(dv * wp + du);
    }
    if (owner_rows.empty()) return {fused, proj_map};

    auto rows = ops::gather_rows(tape, fused, owner_rows);
    auto scat = ops::scatter_rows(tape, rows, dest,
                                  static_cast<std::size_t>(hp) * wp);
    auto written_img = ops::reshape(tape, ops::transpose(tape, scat),
                                    {cm, static_cast<std::size_t>(hp),
                                     static_cast<std::size_t>(wp)});

    std::vector<std::uint8_t> written(static_cast<std::size_t>(hp) * wp, 0);
    for (int d : dest) written[d] = 1;
    auto mask = Tensor<T>::zeros({cm, static_cast<std::size_t>(hp),
                                  static_cast<std::size_t>(wp)});
    auto mv = mask.value();
    for (std::size_t cc = 0; cc < cm; ++cc)
      for (std::size_t pix = 0; pix < written.size(); ++pix)
        if (!written[pix]) mv[cc * written.size() + pix] = T(1);

    auto range_out =
        ops::add(tape, written_img, ops::mul(tape, proj_map, mask));
    return {fused, range_out};
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    mlp.collect(prefix + ".mlp", out);
    proj.collect(prefix + ".proj", out);
  }
};

// Point-Range fusion network: a denseblock encoder-decoder over the range
// image and a PointNet-style MLP stack over the raw points, exchanging
// features through three fusion blocks (early in the encoder, middle at the
// quarter-scale decoder level, late at the full-resolution decoder output).
template <typename T>
class PointRangeNet {
 public:
  PointRangeNet() = default;

  PointRangeNet(const RangeStreamConfig& rs, const PointStreamConfig& ps,
                const PrFusionConfig& fu, Rng& rng)
      : rs_(rs) {
    rs.validate();
    ps.validate();
    fu.validate();
    const int n_enc = static_cast<int>(rs.encoder_strides.size());
    middle_tap_ = rs.decoder_blocks - 3;
    late_tap_ = rs.decoder_blocks - 1;

    stem_ = nn::Conv2d<T>(kRangeChannels, static_cast<std::size_t>(rs.base_channels),
                          3, 1, rng);
    point_stages_.emplace_back(4, std::vector<int>{ps.mlp_widths[0]}, rng);
    std::size_t point_ch = point_stages_[0].out_channels();

    std::size_t c = static_cast<std::size_t>(rs.base_channels);
    enc_ch_.resize(n_enc);
    for (int i = 0; i < n_enc; ++i) {
      enc_.emplace_back(c, rs.encoder_layers[i], rs.growth, rs.encoder_strides[i], rng);
      c = enc_[i].out_ch;
      if (i == kEarlyTap) {
        fusion_[0] = PrFusionBlock<T>(point_ch, c, fu.stage_widths[0], rng);
        c = fusion_[0].out_channels();
        point_ch = fusion_[0].out_channels();
        if (ps.mlp_widths.size() > 1) {
          point_stages_.emplace_back(point_ch, std::vector<int>{ps.mlp_widths[1]}, rng);
          point_ch = point_stages_[1].out_channels();
        }
      }
      enc_ch_[i] = c;
    }

    std::size_t d = enc_ch_[n_enc - 1];
    for (int j = 0; j < rs.decoder_blocks; ++j) {
      const std::size_t skip = enc_ch_[n_enc - 2 - j];
      dec_.emplace_back(d + skip, rs.decoder_layers, rs.growth, 1, rng);
      d = dec_[j].out_ch;
      if (j == middle_tap_) {
        fusion_[1] = PrFusionBlock<T>(point_ch, d, fu.stage_widths[1], rng);
        d = fusion_[1].out_channels();
        point_ch = fusion_[1].out_channels();
        if (ps.mlp_widths.size() > 2) {
          point_stages_.emplace_back(point_ch, std::vector<int>{ps.mlp_widths[2]}, rng);
          point_ch = point_stages_[2].out_channels();
        }
      }
      if (j == late_tap_) {
        fusion_[2] = PrFusionBlock<T>(point_ch, d, fu.stage_widths[2], rng);
        d = fusion_[2].out_channels();
        point_ch = fusion_[2].out_channels();
      }
    }
  }

  std::size_t out_channels() const { return fusion_[2].out_channels(); }

  // Final per-point features [N, out_channels].
  Tensor<T> forward(Tape<T>& tape, const PointCloud& pc, const RangeImage<T>& img,
                    const IndexTable& table) const {
    auto raw = Tensor<T>::zeros({pc.size(), 4});
    auto rv = raw.value();
    for (std::size_t i = 0; i < pc.size(); ++i) {
      rv[4 * i] = static_cast<T>(pc.points[i].x);
      rv[4 * i + 1] = static_cast<T>(pc.points[i].y);
      rv[4 * i + 2] = static_cast<T>(pc.points[i].z);
      rv[4 * i + 3] = static_cast<T>(pc.points[i].intensity);
    }
    Tensor<T> pf = point_stages_[0].forward(tape, raw);

    const int n_enc = static_cast<int>(enc_.size());
    Tensor<T> x = ops::relu(tape, stem_.forward(tape, img.channels));
    std::vector<Tensor<T>> enc_outs;
    for (int i = 0; i < n_enc; ++i) {
      x = enc_[i].forward(tape, x);
      if (i == kEarlyTap) {
        auto [pf2, x2] = fusion_[0].forward(tape, pf, x, table, 1.0);
        pf = point_stages_.size() > 1 ? point_stages_[1].forward(tape, pf2) : pf2;
        x = x2;
      }
      enc_outs.push_back(x);
    }

    Tensor<T> d = enc_outs.back();
    for (int j = 0; j < static_cast<int>(dec_.size()); ++j) {
      const Tensor<T>& skip = enc_outs[n_enc - 2 - j];
      d = ops::bilinear_resize(tape, d, static_cast<int>(skip.dim(1)),
                               static_cast<int>(skip.dim(2)));
      d = ops::concat(tape, {d, skip}, 0);
      d = dec_[j].forward(tape, d);
      if (j == middle_tap_) {
        const double scale = static_cast<double>(d.dim(1)) / table.h;
        auto [pf2, d2] = fusion_[1].forward(tape, pf, d, table, scale);
        pf = point_stages_.size() > 2 ? point_stages_[2].forward(tape, pf2) : pf2;
        d = d2;
      }
      if (j == late_tap_) {
        auto [pf2, d2] = fusion_[2].forward(tape, pf, d, table, 1.0);
        pf = pf2;
        d = d2;
      }
    }
    return pf;
  }

  // Stem plus the first `upto_blocks` encoder blocks, no fusion taps; used to
  // probe receptive-field locality.
  Tensor<T> encoder_probe(Tape<T>& tape, const RangeImage<T>& img,
                          int upto_blocks) const {
    Tensor<T> x = ops::relu(tape, stem_.forward(tape, img.channels));
    for (int i = 0; i < upto_blocks; ++i) x = enc_[i].forward(tape, x);
    return x;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    stem_.collect(prefix + ".stem", out);
    for (std::size_t i = 0; i < enc_.size(); ++i)
      enc_[i].collect(prefix + ".enc" + std::to_string(i), out);
    for (std::size_t j = 0; j < dec_.size(); ++j)
      dec_[j].collect(prefix + ".dec" + std::to_string(j), out);
    for (std::size_t s = 0; s < 3; ++s)
      fusion_[s].collect(prefix + ".fusion" + std::to_string(s), out);
    for (std::size_t s = 0; s < point_stages_.size(); ++s)
      point_stages_[s].collect(prefix + ".point" + std::to_string(s), out);
  }

  // Tap placement as resolved specs (for introspection and tests).
  std::array<FusionStageSpec, 3> fusion_specs() const {
    return {FusionStageSpec{FusionStage::kEarly, kEarlyTap, 1.0,
                            {/* widths held by blocks */}},
            FusionStageSpec{FusionStage::kMiddle, middle_tap_, 0.25, {}},
            FusionStageSpec{FusionStage::kLate, late_tap_, 1.0, {}}};
  }

  static constexpr int kEarlyTap = 1;  // encoder block index

 private:
  RangeStreamConfig rs_;
  nn::Conv2d<T> stem_;
  std::vector<DenseBlock<T>> enc_;
  std::vector<DenseBlock<T>> dec_;
  std::vector<std::size_t> enc_ch_;
  std::array<PrFusionBlock<T>, 3> fusion_;
  std::vector<nn::Mlp<T>> point_stages_;
  int middle_tap_ = 1;
  int late_tap_ = 3;
};

}  // namespace cvf
