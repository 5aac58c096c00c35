// SPDX-License-Identifier: Apache-2.0
#include "cvfnet/eval_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cvf {

SceneMatches match_scene(const DetectionSet& dets, const std::vector<Box3D>& gts,
                         const EvalConfig& cfg) {
  SceneMatches out;
  out.det_order.resize(dets.size());
  std::iota(out.det_order.begin(), out.det_order.end(), 0);
  std::stable_sort(out.det_order.begin(), out.det_order.end(),
                   [&](int i, int j) { return dets[i].score > dets[j].score; });
  out.det_is_tp.assign(dets.size(), 0);
  out.gt_matched.assign(gts.size(), 0);

  for (std::size_t rank = 0; rank < out.det_order.size(); ++rank) {
    const Box3D& det = dets[out.det_order[rank]];
    const double thr = cfg.threshold_for(det.class_id);
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (out.gt_matched[g] || gts[g].class_id != det.class_id) continue;
      const double iou = cfg.iou_kind == IouKind::kBev ? rotated_iou_bev(det, gts[g])
                                                       : iou_3d(det, gts[g]);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best >= thr) {
      out.det_is_tp[rank] = 1;
      out.gt_matched[best_gt] = 1;
    }
  }
  return out;
}

double average_precision(std::vector<std::pair<double, bool>> scored, int n_gt,
                         int recall_positions) {
  if (n_gt < 1) throw MetricError("average_precision: undefined for zero ground truths");
  if (recall_positions != 11 && recall_positions != 40)
    throw ConfigError("average_precision: recall_positions must be 11 or 40");
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  // Precision/recall after each detection along the sweep.
  std::vector<double> precision(scored.size()), recall(scored.size());
  int tp = 0;
  for (std::size_t i = 0; i < scored.size(); ++i) {
    if (scored[i].second) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }

  double acc = 0.0;
  for (int k = 0; k < recall_positions; ++k) {
    const double r = recall_positions == 11
                         ? static_cast<double>(k) / 10.0
                         : static_cast<double>(k + 1) / 40.0;
    double best = 0.0;
    for (std::size_t i = 0; i < scored.size(); ++i)
      if (recall[i] >= r - 1e-12) best = std::max(best, precision[i]);
    acc += best;
  }
  return acc / static_cast<double>(recall_positions);
}

EvalReport evaluate_scenes(const std::vector<DetectionSet>& dets,
                           const std::vector<std::vector<Box3D>>& gts,
                           const std::vector<std::string>& class_names,
                           const EvalConfig& cfg) {
  cfg.validate();
  if (dets.size() != gts.size())
    throw ContractError("evaluate_scenes: scene count mismatch (" +
                        std::to_string(dets.size()) + " vs " +
                        std::to_string(gts.size()) + ")");
  EvalReport report;
  double ap_sum = 0.0;
  int ap_count = 0;
  for (std::size_t cls = 0; cls < class_names.size(); ++cls) {
    ClassReport cr;
    cr.name = class_names[cls];
    std::vector<std::pair<double, bool>> scored;
    for (std::size_t s = 0; s < dets.size(); ++s) {
      const auto matches = match_scene(dets[s], gts[s], cfg);
      for (std::size_t rank = 0; rank < matches.det_order.size(); ++rank) {
        const Box3D& det = dets[s][matches.det_order[rank]];
        if (det.class_id != static_cast<int>(cls)) continue;
        scored.emplace_back(det.score, matches.det_is_tp[rank] != 0);
        ++cr.n_det;
      }
      for (const auto& gt : gts[s])
        if (gt.class_id == static_cast<int>(cls)) ++cr.n_gt;
    }
    if (cr.n_gt == 0) continue;
    cr.ap = average_precision(std::move(scored), cr.n_gt, cfg.recall_positions);
    ap_sum += cr.ap;
    ++ap_count;
    report.classes.push_back(std::move(cr));
  }
  report.mean_ap = ap_count > 0 ? ap_sum / ap_count : 0.0;
  return report;
}

namespace {

std::string kind_name(IouKind k) { return k == IouKind::kBev ? "bev" : "3d"; }

}  // namespace

std::string report_text(const EvalReport& report, const EvalConfig& cfg) {
  std::ostringstream os;
  os << "AP (" << kind_name(cfg.iou_kind) << " IoU, R" << cfg.recall_positions
     << ")\n";
  for (const auto& c : report.classes)
    os << "  " << c.name << ": AP=" << c.ap << " (gt=" << c.n_gt << ", det=" << c.n_det
       << ")\n";
  os << "  mAP: " << report.mean_ap << "\n";
  return os.str();
}

std::string report_kv(const EvalReport& report, const EvalConfig& cfg) {
  std::ostringstream os;
  const std::string suffix = "_" + kind_name(cfg.iou_kind) + "_r" +
                             std::to_string(cfg.recall_positions);
  for (const auto& c : report.classes) {
    os << "ap_" << c.name << suffix << " " << c.ap << "\n";
    os << "n_gt_" << c.name << " " << c.n_gt << "\n";
    os << "n_det_" << c.name << " " << c.n_det << "\n";
  }
  os << "map" << suffix << " " << report.mean_ap << "\n";
  return os.str();
}

}  // namespace cvf
