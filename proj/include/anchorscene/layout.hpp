#pragma once

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <vector>

#include "anchorscene/geometry.hpp"

namespace ancs {

/// Ordered room corners.
struct LayoutPolyline {
  std::vector<Vec3> corners;
  bool closed = false;
};

namespace detail {

inline double yaw_diff_mod_pi(double a, double b) {
  double d = std::abs(normalize_angle(a - b));
  if (d > kPi / 2) d = kPi - d;
  return d;
}

inline double point_line_dist_bev(const Vec3& p, const WallQuad& q) {
  const Vec3 u = q.along();
  const double dx = p.x() - q.center.x(), dy = p.y() - q.center.y();
  return std::abs(dx * -u.y() + dy * u.x());
}

inline double wall_line_dist(const WallQuad& a, const WallQuad& b) {
  return std::max(point_line_dist_bev(b.center, a),
                  point_line_dist_bev(a.center, b));
}

inline WallQuad merge_group(const std::vector<WallQuad>& walls,
                            const std::vector<int>& group) {
  WallQuad m;
  double wsum = 0, cx = 0, cy = 0, cz = 0, ww = 0, wh = 0, c2 = 0, s2 = 0;
  for (int i : group) {
    const WallQuad& q = walls[i];
    const double w = std::max(q.score, 1e-9);
    wsum += w;
    cx += w * q.center.x();
    cy += w * q.center.y();
    cz += w * q.center.z();
    ww += w * q.width;
    wh += w * q.height;
    c2 += w * std::cos(2 * q.yaw);  // direction is modulo pi
    s2 += w * std::sin(2 * q.yaw);
  }
  m.center = Vec3(cx / wsum, cy / wsum, cz / wsum);
  m.width = ww / wsum;
  m.height = wh / wsum;
  m.yaw = 0.5 * std::atan2(s2, c2);
  m.score = wsum / group.size();
  return m;
}

}  // namespace detail

/// Merges near-collinear duplicate walls, orders the remainder by polar angle
/// about the wall centroid, and intersects consecutive boundary lines into
/// corners. Near-parallel consecutive walls contribute the midpoint of their
/// facing edges instead of an unstable intersection.
inline LayoutPolyline quads_to_corners(const std::vector<WallQuad>& walls,
                                       double merge_angle_deg = 15.0,
                                       double merge_dist_m = 0.3,
                                       double parallel_angle_deg = 5.0) {
  if (walls.size() < 2) throw std::invalid_argument("insufficient walls");
  const double merge_angle = merge_angle_deg * kPi / 180.0;
  const double parallel_angle = parallel_angle_deg * kPi / 180.0;

  // transitive merge groups
  std::vector<int> parent(walls.size());
  for (std::size_t i = 0; i < walls.size(); ++i) parent[i] = static_cast<int>(i);
  std::function<int(int)> find = [&](int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < walls.size(); ++i)
    for (std::size_t j = i + 1; j < walls.size(); ++j)
      if (detail::yaw_diff_mod_pi(walls[i].yaw, walls[j].yaw) < merge_angle &&
          detail::wall_line_dist(walls[i], walls[j]) < merge_dist_m)
        parent[find(static_cast<int>(j))] = find(static_cast<int>(i));
  std::vector<std::vector<int>> groups(walls.size());
  for (std::size_t i = 0; i < walls.size(); ++i)
    groups[find(static_cast<int>(i))].push_back(static_cast<int>(i));
  std::vector<WallQuad> merged;
  for (const auto& g : groups)
    if (!g.empty()) merged.push_back(detail::merge_group(walls, g));

  // canonical polar ordering about the centroid
  Vec2 centroid(0, 0);
  for (const WallQuad& w : merged)
    centroid += Vec2(w.center.x(), w.center.y());
  centroid /= static_cast<double>(merged.size());
  std::sort(merged.begin(), merged.end(), [&](const WallQuad& a, const WallQuad& b) {
    const double pa = std::atan2(a.center.y() - centroid.y(), a.center.x() - centroid.x());
    const double pb = std::atan2(b.center.y() - centroid.y(), b.center.x() - centroid.x());
    return pa < pb;
  });

  LayoutPolyline poly;
  poly.closed = merged.size() >= 3;
  const int n = static_cast<int>(merged.size());
  const int pairs = poly.closed ? n : n - 1;
  for (int i = 0; i < pairs; ++i) {
    const WallQuad& a = merged[i];
    const WallQuad& b = merged[(i + 1) % n];
    const double z =
        std::min(a.center.z() - a.height / 2, b.center.z() - b.height / 2);
    Vec3 corner;
    if (detail::yaw_diff_mod_pi(a.yaw, b.yaw) < parallel_angle) {
      // facing-edge midpoint
      const Vec3 ua = 0.5 * a.width * a.along();
      const Vec3 ub = 0.5 * b.width * b.along();
      const Vec3 ea[2] = {a.center - ua, a.center + ua};
      const Vec3 eb[2] = {b.center - ub, b.center + ub};
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& p : ea)
        for (const Vec3& q : eb) {
          const double d = (Vec2(p.x(), p.y()) - Vec2(q.x(), q.y())).squaredNorm();
          if (d < best) {
            best = d;
            corner = 0.5 * (p + q);
          }
        }
    } else {
      // BEV line intersection
      const Vec3 ua3 = a.along(), ub3 = b.along();
      const Vec2 pa(a.center.x(), a.center.y()), pb(b.center.x(), b.center.y());
      const Vec2 ua(ua3.x(), ua3.y()), ub(ub3.x(), ub3.y());
      const double det = ua.x() * -ub.y() - ua.y() * -ub.x();
      const Vec2 rhs = pb - pa;
      const double t = (rhs.x() * -ub.y() - rhs.y() * -ub.x()) / det;
      const Vec2 c = pa + t * ua;
      corner = Vec3(c.x(), c.y(), 0);
    }
    corner.z() = z;
    poly.corners.push_back(corner);
  }

  // drop consecutive duplicates
  std::vector<Vec3> dedup;
  for (const Vec3& c : poly.corners) {
    if (!dedup.empty() && (dedup.back() - c).norm() <= 1e-6) continue;
    dedup.push_back(c);
  }
  if (poly.closed && dedup.size() > 1 &&
      (dedup.front() - dedup.back()).norm() <= 1e-6)
    dedup.pop_back();
  poly.corners = std::move(dedup);
  if (poly.closed && poly.corners.size() < 3) poly.closed = false;

  // canonical cyclic start for closed loops
  if (poly.closed) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(poly.corners.size()); ++i) {
      const Vec3& a = poly.corners[i];
      const Vec3& b = poly.corners[best];
      if (a.x() != b.x() ? a.x() < b.x()
                         : (a.y() != b.y() ? a.y() < b.y() : a.z() < b.z()))
        best = i;
    }
    std::rotate(poly.corners.begin(), poly.corners.begin() + best,
                poly.corners.end());
  }
  return poly;
}

/// Wall strips (two triangles per consecutive corner pair) for OBJ export.
inline TriMesh layout_to_mesh(const LayoutPolyline& poly, double height) {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  const int n = static_cast<int>(poly.corners.size());
  if (n < 2) return {};
  const int pairs = poly.closed ? n : n - 1;
  for (int i = 0; i < pairs; ++i) {
    const Vec3& a = poly.corners[i];
    const Vec3& b = poly.corners[(i + 1) % n];
    const int base = static_cast<int>(verts.size());
    verts.push_back(a);
    verts.push_back(b);
    verts.push_back(b + Vec3(0, 0, height));
    verts.push_back(a + Vec3(0, 0, height));
    tris.push_back({base, base + 1, base + 2});
    tris.push_back({base, base + 2, base + 3});
  }
  return make_trimesh(std::move(verts), tris);
}

}  // namespace ancs
