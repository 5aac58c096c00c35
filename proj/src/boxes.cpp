// SPDX-License-Identifier: Apache-2.0
#include "cvfnet/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cvf {

double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;
  a = std::fmod(a + 3.14159265358979323846, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  return a - 3.14159265358979323846;
}

std::array<Vec2, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  // Local corners (+-hl, +-hw) in CCW order.
  const std::array<Vec2, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i)
    out[i] = {b.x + c * local[i].x - s * local[i].y,
              b.y + s * local[i].x + c * local[i].y};
  return out;
}

bool point_in_bev(const Box3D& b, double x, double y, double margin) {
  const double c = std::cos(-b.yaw), s = std::sin(-b.yaw);
  const double dx = x - b.x, dy = y - b.y;
  const double lx = c * dx - s * dy;
  const double ly = s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.l + margin && std::abs(ly) <= 0.5 * b.w + margin;
}

namespace {

double polygon_area(const std::vector<Vec2>& poly) {
  double acc = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    acc += a.x * b.y - b.x * a.y;
  }
  return 0.5 * std::abs(acc);
}

// Sutherland-Hodgman clip of a convex subject polygon against the half-plane
// left of edge a->b (clipper traversed CCW).
std::vector<Vec2> clip_edge(const std::vector<Vec2>& subject, const Vec2& a,
                            const Vec2& b) {
  std::vector<Vec2> out;
  const std::size_t n = subject.size();
  if (n == 0) return out;
  auto side = [&](const Vec2& p) {
    return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& cur = subject[i];
    const Vec2& nxt = subject[(i + 1) % n];
    const double sc = side(cur), sn = side(nxt);
    if (sc >= 0.0) out.push_back(cur);
    if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
      const double t = sc / (sc - sn);
      out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
    }
  }
  return out;
}

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  std::vector<Vec2> poly(ca.begin(), ca.end());
  for (int i = 0; i < 4 && !poly.empty(); ++i)
    poly = clip_edge(poly, cb[i], cb[(i + 1) % 4]);
  if (poly.size() < 3) return 0.0;
  return polygon_area(poly);
}

}  // namespace

double rotated_iou_bev(const Box3D& a, const Box3D& b) {
  const double area_a = a.w * a.l;
  const double area_b = b.w * b.l;
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  // Cheap reject when the circumscribed circles cannot touch.
  const double ra = 0.5 * std::hypot(a.w, a.l);
  const double rb = 0.5 * std::hypot(b.w, b.l);
  const double dx = a.x - b.x, dy = a.y - b.y;
  if (dx * dx + dy * dy > (ra + rb) * (ra + rb)) return 0.0;
  const double inter = bev_intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  return inter / (area_a + area_b - inter);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double vol_a = a.w * a.l * a.h;
  const double vol_b = b.w * b.l * b.h;
  if (vol_a <= 0.0 || vol_b <= 0.0) return 0.0;
  const double z_lo = std::max(a.z - 0.5 * a.h, b.z - 0.5 * b.h);
  const double z_hi = std::min(a.z + 0.5 * a.h, b.z + 0.5 * b.h);
  const double dz = z_hi - z_lo;
  if (dz <= 0.0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dz;
  if (inter <= 0.0) return 0.0;
  return inter / (vol_a + vol_b - inter);
}

std::vector<int> nms_bev(const std::vector<Box3D>& boxes, double iou_thresh,
                         int max_keep) {
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int i, int j) {
    return boxes[i].score > boxes[j].score;
  });
  std::vector<int> kept;
  std::vector<bool> suppressed(boxes.size(), false);
  for (int i : order) {
    if (suppressed[i]) continue;
    kept.push_back(i);
    if (static_cast<int>(kept.size()) >= max_keep) break;
    for (int j : order) {
      if (suppressed[j] || j == i) continue;
      if (rotated_iou_bev(boxes[i], boxes[j]) >= iou_thresh) suppressed[j] = true;
    }
  }
  return kept;
}

}  // namespace cvf
