// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cvfnet/boxes.hpp"
#include "cvfnet/nn.hpp"
#include "cvfnet/ops.hpp"
#include "cvfnet/tensor.hpp"

namespace cvf {

struct ClassSpec {
  std::string name = "Car";
  double w = 1.6, l = 3.9, h = 1.56;  // anchor size
  double z_center = -1.0;
  double iou_pos = 0.6;
  double iou_neg = 0.45;
};

struct AnchorConfig {
  std::vector<ClassSpec> classes;
  std::array<double, 2> yaws{0.0, 0.5 * 3.14159265358979323846};

  int num_classes() const { return static_cast<int>(classes.size()); }
  int anchors_per_cell() const { return 2 * num_classes(); }

  void validate() const {
    if (classes.empty()) throw ConfigError("anchors: at least one class required");
    for (const auto& c : classes) {
      if (c.w <= 0 || c.l <= 0 || c.h <= 0)
        throw ConfigError("anchors: non-positive size for class " + c.name);
      if (!(c.iou_neg < c.iou_pos))
        throw ConfigError("anchors: match_iou_neg must be below match_iou_pos for " +
                          c.name);
    }
  }
};

// Metric geometry of the head grid (BEV grid pooled by the head stride).
struct HeadGrid {
  int hh = 0;  // rows (y)
  int ww = 0;  // cols (x)
  double x_min = 0.0, y_min = 0.0;
  double cell_x = 0.0, cell_y = 0.0;  // metric cell size at head stride

  double center_x(int col) const { return x_min + (col + 0.5) * cell_x; }
  double center_y(int row) const { return y_min + (row + 0.5) * cell_y; }
};

// Anchor boxes for one cell, ordered class-major then yaw.
inline std::vector<Box3D> anchors_for_cell(const AnchorConfig& cfg, const HeadGrid& grid,
                                           int row, int col) {
  std::vector<Box3D> out;
  out.reserve(cfg.anchors_per_cell());
  for (int k = 0; k < cfg.num_classes(); ++k) {
    const auto& cs = cfg.classes[k];
    for (double yaw : cfg.yaws) {
      Box3D a;
      a.x = grid.center_x(col);
      a.y = grid.center_y(row);
      a.z = cs.z_center;
      a.w = cs.w;
      a.l = cs.l;
      a.h = cs.h;
      a.yaw = yaw;
      a.class_id = k;
      out.push_back(a);
    }
  }
  return out;
}

// All anchors of the grid, cell-major (row-major cells, then per-cell order).
inline std::vector<Box3D> generate_anchors(const AnchorConfig& cfg,
                                           const HeadGrid& grid) {
  std::vector<Box3D> out;
  out.reserve(static_cast<std::size_t>(grid.hh) * grid.ww * cfg.anchors_per_cell());
  for (int r = 0; r < grid.hh; ++r)
    for (int c = 0; c < grid.ww; ++c) {
      auto cell = anchors_for_cell(cfg, grid, r, c);
      out.insert(out.end(), cell.begin(), cell.end());
    }
  return out;
}

// Residual encoding relative to an anchor: offsets normalised by the anchor
// diagonal, log size ratios, sin of the yaw difference. The heading sign is
// carried separately by the direction bit.
inline std::array<double, 7> encode_box(const Box3D& gt, const Box3D& anchor) {
  if (gt.w <= 0 || gt.l <= 0 || gt.h <= 0 || anchor.w <= 0 || anchor.l <= 0 ||
      anchor.h <= 0)
    throw DomainError("encode_box: non-positive box size");
  const double d = std::sqrt(anchor.w * anchor.w + anchor.l * anchor.l);
  return {(gt.x - anchor.x) / d,          (gt.y - anchor.y) / d,
          (gt.z - anchor.z) / anchor.h,   std::log(gt.w / anchor.w),
          std::log(gt.l / anchor.l),      std::log(gt.h / anchor.h),
          std::sin(gt.yaw - anchor.yaw)};
}

// 1 when the wrapped yaw difference to the anchor is >= 0.
inline int encode_dir_bit(const Box3D& gt, const Box3D& anchor) {
  return wrap_angle(gt.yaw - anchor.yaw) >= 0.0 ? 1 : 0;
}

// Inverse of encode_box. Exact for |yaw - anchor.yaw| < pi/2; otherwise the
// direction bit flips the decoded heading by pi (footprint-preserving).
inline Box3D decode_box(const std::array<double, 7>& res, const Box3D& anchor,
                        int dir_bit) {
  if (anchor.w <= 0 || anchor.l <= 0 || anchor.h <= 0)
    throw DomainError("decode_box: non-positive anchor size");
  const double d = std::sqrt(anchor.w * anchor.w + anchor.l * anchor.l);
  Box3D b;
  b.x = res[0] * d + anchor.x;
  b.y = res[1] * d + anchor.y;
  b.z = res[2] * anchor.h + anchor.z;
  b.w = std::exp(res[3]) * anchor.w;
  b.l = std::exp(res[4]) * anchor.l;
  b.h = std::exp(res[5]) * anchor.h;
  double delta = std::asin(std::clamp(res[6], -1.0, 1.0));
  if ((delta >= 0.0) != (dir_bit == 1)) delta += 3.14159265358979323846;
  b.yaw = wrap_angle(anchor.yaw + delta);
  b.class_id = anchor.class_id;
  return b;
}

enum class AnchorRole : std::uint8_t { kNegative, kPositive, kIgnored };

struct AnchorAssignment {
  AnchorRole role = AnchorRole::kNegative;
  int gt = -1;
  double iou = 0.0;
};

// BEV-IoU matching: positive at/above the class pos threshold (assigned to
// the argmax gt), negative below the neg threshold, ignored in between. Each
// gt with any overlap force-assigns its best anchor of the same class.
inline std::vector<AnchorAssignment> assign_targets(const std::vector<Box3D>& anchors,
                                                    const std::vector<Box3D>& gts,
                                                    const AnchorConfig& cfg) {
  std::vector<AnchorAssignment> out(anchors.size());
  std::vector<int> best_anchor(gts.size(), -1);
  std::vector<double> best_anchor_iou(gts.size(), 0.0);

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const auto& anchor = anchors[a];
    const auto& cls = cfg.classes[anchor.class_id];
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gts[g].class_id != anchor.class_id) continue;
      const double iou = rotated_iou_bev(anchor, gts[g]);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<int>(g);
      }
      if (iou > best_anchor_iou[g]) {
        best_anchor_iou[g] = iou;
        best_anchor[g] = static_cast<int>(a);
      }
    }
    out[a].iou = best;
    out[a].gt = best_gt;
    if (best_gt >= 0 && best >= cls.iou_pos)
      out[a].role = AnchorRole::kPositive;
    else if (best < cls.iou_neg)
      out[a].role = AnchorRole::kNegative;
    else
      out[a].role = AnchorRole::kIgnored;
  }

  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (best_anchor[g] < 0 || best_anchor_iou[g] <= 0.0) continue;
    auto& slot = out[best_anchor[g]];
    if (slot.role == AnchorRole::kPositive && slot.iou >= best_anchor_iou[g]) continue;
    slot.role = AnchorRole::kPositive;
    slot.gt = static_cast<int>(g);
    slot.iou = best_anchor_iou[g];
  }
  return out;
}

struct LossConfig {
  double alpha = 2.0;        // regression weight
  double beta = 0.2;         // direction weight
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  void validate() const {
    if (alpha <= 0 || beta <= 0 || focal_alpha <= 0 || focal_gamma <= 0)
      throw ConfigError("loss: all weights must be positive");
  }
};

// Sigmoid focal loss over [M, K] logits. labels[i] in {-1 = background,
// 0..K-1 = positive class}; ignored anchors must be filtered out by the
// caller. Sum over elements, normalised by max(1, #positives).
template <typename T>
Tensor<T> focal_loss(Tape<T>& tape, const Tensor<T>& logits,
                     const std::vector<int>& labels, double alpha, double gamma) {
  if (logits.rank() != 2)
    throw ShapeError("focal_loss: expected rank 2 logits, got " +
                     shape_str(logits.shape()));
  const std::size_t m = logits.dim(0), k = logits.dim(1);
  if (labels.size() != m)
    throw ContractError("focal_loss: label count " + std::to_string(labels.size()) +
                        " != logit rows " + std::to_string(m));
  std::size_t n_pos = 0;
  for (int lb : labels) {
    if (lb >= static_cast<int>(k))
      throw ContractError("focal_loss: label " + std::to_string(lb) +
                          " out of range for " + std::to_string(k) + " classes");
    if (lb >= 0) ++n_pos;
  }
  const T norm = T(1) / static_cast<T>(std::max<std::size_t>(1, n_pos));

  const T a = static_cast<T>(alpha);
  const T g = static_cast<T>(gamma);
  const T* zv = logits.value().data();
  T acc = T(0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const T z = zv[i * k + j];
      const T p = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                            : std::exp(z) / (T(1) + std::exp(z));
      const bool pos = labels[i] == static_cast<int>(j);
      const T pt = pos ? p : T(1) - p;
      const T at = pos ? a : T(1) - a;
      const T pt_safe = std::max(pt, static_cast<T>(1e-12));
      acc += -at * std::pow(T(1) - pt, g) * std::log(pt_safe);
    }
  auto out = Tensor<T>::scalar(acc * norm);

  if (tape.recording() && logits.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([zs = logits.storage(), os = out.storage(), labels, m, k, a, g, norm] {
      if (os->grad.empty()) return;
      auto gz = ensure_grad(zs);
      const T go = os->grad[0] * norm;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const T z = zs->value[i * k + j];
          const T p = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                                : std::exp(z) / (T(1) + std::exp(z));
          const bool pos = labels[i] == static_cast<int>(j);
          const T pt = pos ? p : T(1) - p;
          const T at = pos ? a : T(1) - a;
          const T pt_safe = std::max(pt, static_cast<T>(1e-12));
          // d/dpt of -at (1-pt)^g log(pt), then dpt/dz = +-p(1-p).
          const T dldpt = at * (g * std::pow(T(1) - pt, g - T(1)) * std::log(pt_safe) -
                                std::pow(T(1) - pt, g) / pt_safe);
          const T dptdz = pos ? p * (T(1) - p) : -(p * (T(1) - p));
          gz[i * k + j] += go * dldpt * dptdz;
        }
    });
  }
  return out;
}

// Smooth-L1 (Huber) against a constant target: per element 0.5 x^2 for
// |x| < 1 else |x| - 0.5; summed over components, normalised by
// max(1, normalizer).
template <typename T>
Tensor<T> smooth_l1(Tape<T>& tape, const Tensor<T>& pred, const Tensor<T>& target,
                    std::size_t normalizer) {
  ops::detail::check_same_shape(pred, target, "smooth_l1");
  const T norm = T(1) / static_cast<T>(std::max<std::size_t>(1, normalizer));
  const T* pv = pred.value().data();
  const T* tv = target.value().data();
  T acc = T(0);
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const T x = pv[i] - tv[i];
    const T ax = std::abs(x);
    acc += ax < T(1) ? T(0.5) * x * x : ax - T(0.5);
  }
  auto out = Tensor<T>::scalar(acc * norm);

  if (tape.recording() && pred.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([ps = pred.storage(), ts = target.storage(), os = out.storage(), norm] {
      if (os->grad.empty()) return;
      auto gp = ensure_grad(ps);
      const T go = os->grad[0] * norm;
      for (std::size_t i = 0; i < gp.size(); ++i) {
        const T x = ps->value[i] - ts->value[i];
        gp[i] += go * std::clamp(x, T(-1), T(1));
      }
    });
  }
  return out;
}

template <typename T>
struct LossBreakdown {
  Tensor<T> total;
  double cls = 0.0;
  double reg = 0.0;
  double dir = 0.0;
};

// Loss = L_cls + alpha * L_reg + beta * L_dir.
template <typename T>
LossBreakdown<T> loss_total(Tape<T>& tape, const Tensor<T>& cls, const Tensor<T>& reg,
                            const Tensor<T>& dir, const LossConfig& cfg) {
  LossBreakdown<T> out;
  out.cls = static_cast<double>(cls.item());
  out.reg = static_cast<double>(reg.item());
  out.dir = static_cast<double>(dir.item());
  if (!std::isfinite(out.cls) || !std::isfinite(out.reg) || !std::isfinite(out.dir))
    throw DivergenceError("loss_total: non-finite component (cls=" +
                          std::to_string(out.cls) + ", reg=" + std::to_string(out.reg) +
                          ", dir=" + std::to_string(out.dir) + ")");
  auto weighted = ops::add(tape, cls, ops::mul_scalar(tape, reg, static_cast<T>(cfg.alpha)));
  out.total = ops::add(tape, weighted, ops::mul_scalar(tape, dir, static_cast<T>(cfg.beta)));
  return out;
}

template <typename T>
struct SparseHeadOutput {
  std::vector<int> valid_cells;  // flat indices into the head grid
  Tensor<T> cls;                 // [V, A*K]
  Tensor<T> reg;                 // [V, A*7]
  Tensor<T> dir;                 // [V, A*2]
};

// Sparse anchor head: one shared 3x3 conv over the dense BEV map, gather of
// the valid cells, then per-branch linear projections.
template <typename T>
struct SparseHead {
  nn::Conv2d<T> shared;
  nn::Linear<T> cls_branch;
  nn::Linear<T> reg_branch;
  nn::Linear<T> dir_branch;
  int anchors_per_cell = 0;
  int num_classes = 0;

  SparseHead() = default;
  SparseHead(std::size_t c_in, std::size_t c_shared, int anchors, int classes, Rng& rng)
      : shared(c_in, c_shared, 3, 1, rng),
        cls_branch(c_shared, static_cast<std::size_t>(anchors * classes), rng),
        reg_branch(c_shared, static_cast<std::size_t>(anchors * 7), rng),
        dir_branch(c_shared, static_cast<std::size_t>(anchors * 2), rng),
        anchors_per_cell(anchors),
        num_classes(classes) {
    // Focal-loss prior: start every anchor near P(object) = 0.01.
    const T prior_bias = static_cast<T>(-std::log((1.0 - 0.01) / 0.01));
    for (auto& b : cls_branch.bias.value()) b = prior_bias;
  }

  SparseHeadOutput<T> forward(Tape<T>& tape, const Tensor<T>& bev,
                              const std::vector<int>& valid_cells) const {
    const std::size_t hw = bev.dim(1) * bev.dim(2);
    auto feat = ops::relu(tape, shared.forward(tape, bev));
    auto flat = ops::transpose(
        tape, ops::reshape(tape, feat, {feat.dim(0), hw}));  // [H*W, Cs]
    auto rows = ops::gather_rows(tape, flat, valid_cells);
    SparseHeadOutput<T> out;
    out.valid_cells = valid_cells;
    out.cls = cls_branch.forward(tape, rows);
    out.reg = reg_branch.forward(tape, rows);
    out.dir = dir_branch.forward(tape, rows);
    return out;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    shared.collect(prefix + ".shared", out);
    cls_branch.collect(prefix + ".cls", out);
    reg_branch.collect(prefix + ".reg", out);
    dir_branch.collect(prefix + ".dir", out);
  }
};

// Decodes head outputs into scored boxes and applies greedy rotated NMS.
template <typename T>
DetectionSet decode_and_nms(const SparseHeadOutput<T>& out, const AnchorConfig& cfg,
                            const HeadGrid& grid, double score_thresh,
                            double iou_thresh, int max_keep) {
  if (score_thresh < 0 || score_thresh > 1 || iou_thresh < 0 || iou_thresh > 1)
    throw ConfigError("decode_and_nms: thresholds must lie in [0,1]");
  const int a_per_cell = cfg.anchors_per_cell();
  const int k = cfg.num_classes();
  std::vector<Box3D> candidates;
  const T* cls = out.cls.value().data();
  const T* reg = out.reg.value().data();
  const T* dir = out.dir.value().data();
  for (std::size_t v = 0; v < out.valid_cells.size(); ++v) {
    const int cell = out.valid_cells[v];
    const int row = cell / grid.ww;
    const int col = cell % grid.ww;
    const auto anchors = anchors_for_cell(cfg, grid, row, col);
    for (int a = 0; a < a_per_cell; ++a) {
      double best_score = 0.0;
      int best_class = 0;
      for (int j = 0; j < k; ++j) {
        const double z = static_cast<double>(cls[(v * a_per_cell + a) * k + j]);
        const double p = 1.0 / (1.0 + std::exp(-z));
        if (p > best_score) {
          best_score = p;
          best_class = j;
        }
      }
      if (best_score < score_thresh) continue;
      std::array<double, 7> res;
      for (int j = 0; j < 7; ++j)
        res[j] = static_cast<double>(reg[(v * a_per_cell + a) * 7 + j]);
      const T* d = dir + (v * a_per_cell + a) * 2;
      const int dir_bit = d[1] > d[0] ? 1 : 0;
      Box3D box = decode_box(res, anchors[a], dir_bit);
      box.class_id = best_class;
      box.score = best_score;
      candidates.push_back(box);
    }
  }
  const auto kept = nms_bev(candidates, iou_thresh, max_keep);
  DetectionSet result;
  result.reserve(kept.size());
  for (int i : kept) result.push_back(candidates[i]);
  return result;
}

}  // namespace cvf
