// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cvfnet/boxes.hpp"
#include "cvfnet/error.hpp"

namespace cvf {

enum class IouKind { kBev, k3d };

struct EvalConfig {
  std::map<int, double> iou_threshold;  // per class id
  int recall_positions = 40;            // 11 or 40
  IouKind iou_kind = IouKind::kBev;
  // Optional KITTI-style difficulty filter on label fields; ground truths
  // outside the window are dropped before matching.
  double max_truncation = 1.0;
  int max_occlusion = 3;

  double threshold_for(int class_id) const {
    auto it = iou_threshold.find(class_id);
    if (it == iou_threshold.end())
      throw ConfigError("eval: no IoU threshold for class " + std::to_string(class_id));
    return it->second;
  }

  void validate() const {
    if (recall_positions != 11 && recall_positions != 40)
      throw ConfigError("eval: recall_positions must be 11 or 40");
    for (const auto& [cls, thr] : iou_threshold)
      if (thr <= 0.0 || thr > 1.0)
        throw ConfigError("eval: IoU threshold for class " + std::to_string(cls) +
                          " must lie in (0,1]");
  }
};

struct SceneMatches {
  std::vector<std::uint8_t> det_is_tp;  // per detection, in descending-score order
  std::vector<int> det_order;           // indices into the input detections
  std::vector<std::uint8_t> gt_matched;
};

// Greedy per-scene matching: detections in descending score order each take
// the highest-IoU unmatched ground truth of their class when the IoU clears
// the class threshold; everything else is a false positive.
SceneMatches match_scene(const DetectionSet& dets, const std::vector<Box3D>& gts,
                         const EvalConfig& cfg);

// Interpolated average precision over equally spaced recall positions
// (11-point: {0, 0.1, ..., 1}; 40-point: {1/40, ..., 1}).
// `scored` holds (score, is_tp) for all detections pooled across scenes.
double average_precision(std::vector<std::pair<double, bool>> scored, int n_gt,
                         int recall_positions);

struct ClassReport {
  std::string name;
  int n_gt = 0;
  int n_det = 0;
  double ap = 0.0;
};

struct EvalReport {
  std::vector<ClassReport> classes;
  double mean_ap = 0.0;
};

// Pools matches over scenes and computes per-class AP. Scene lists must be
// index-aligned. Classes with zero ground truths are skipped.
EvalReport evaluate_scenes(const std::vector<DetectionSet>& dets,
                           const std::vector<std::vector<Box3D>>& gts,
                           const std::vector<std::string>& class_names,
                           const EvalConfig& cfg);

std::string report_text(const EvalReport& report, const EvalConfig& cfg);
// Machine-readable key-value lines: "metric_name value".
std::string report_kv(const EvalReport& report, const EvalConfig& cfg);

}  // namespace cvf
