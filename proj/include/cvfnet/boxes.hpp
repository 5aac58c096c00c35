// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <vector>

#include "cvfnet/error.hpp"

namespace cvf {

// Oriented 3D box. (x, y, z) is the geometric centre, l extends along the
// heading (local x at yaw 0), w across it, h vertically. yaw is about +z,
// normalised to [-pi, pi).
struct Box3D {
  double x = 0.0, y = 0.0, z = 0.0;
  double w = 1.0, l = 1.0, h = 1.0;
  double yaw = 0.0;
  int class_id = 0;
  double score = 0.0;
};

using DetectionSet = std::vector<Box3D>;

// Wraps an angle to [-pi, pi).
double wrap_angle(double a);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// BEV footprint corners in counter-clockwise order.
std::array<Vec2, 4> bev_corners(const Box3D& b);

// True when (x, y) lies inside the BEV footprint (boundary inclusive).
bool point_in_bev(const Box3D& b, double x, double y, double margin = 1e-9);

// Rotated-rectangle IoU on the BEV plane via convex polygon clipping.
// Degenerate (zero-area) boxes yield 0.
double rotated_iou_bev(const Box3D& a, const Box3D& b);

// 3D IoU: BEV intersection area times vertical overlap over union volume.
double iou_3d(const Box3D& a, const Box3D& b);

// Greedy NMS by descending score using BEV IoU; returns indices into `boxes`
// of the kept detections, at most max_keep. Ties are broken by input order.
std::vector<int> nms_bev(const std::vector<Box3D>& boxes, double iou_thresh,
                         int max_keep);

}  // namespace cvf
