#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "anchorscene/rng.hpp"

namespace ancs {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

constexpr double kPi = 3.14159265358979323846;

/// Normalize an angle to [-pi, pi).
inline double normalize_angle(double a) {
  double y = std::fmod(a + kPi, 2.0 * kPi);
  if (y < 0) y += 2.0 * kPi;
  return y - kPi;
}

/// A point set with optional per-point feature rows.
struct PointCloud {
  std::vector<Vec3> points;
  Eigen::MatrixXd features;  // rows == points.size() when present, else 0x0

  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> pts) : points(std::move(pts)) {}

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_features() const { return features.rows() > 0; }

  void validate() const {
    if (has_features() &&
        static_cast<std::size_t>(features.rows()) != points.size())
      throw std::invalid_argument("feature row count mismatch");
    for (const Vec3& p : points)
      if (!p.allFinite()) throw std::invalid_argument("non-finite coordinate");
  }
};

struct OrientedBox3 {
  Vec3 center{0, 0, 0};
  Vec3 size{1, 1, 1};  // l, w, h; strictly positive
  double yaw = 0;      // radians in [-pi, pi)

  OrientedBox3() = default;
  OrientedBox3(const Vec3& c, const Vec3& s, double y)
      : center(c), size(s), yaw(normalize_angle(y)) {
    if (!(size.x() > 0 && size.y() > 0 && size.z() > 0))
      throw std::invalid_argument("box size must be strictly positive");
  }

  double volume() const { return size.prod(); }
};

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  bool empty() const { return triangles.empty(); }
};

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

/// Builds a mesh, dropping zero-area triangles and validating indices.
inline TriMesh make_trimesh(std::vector<Vec3> vertices,
                            const std::vector<std::array<int, 3>>& triangles) {
  TriMesh m;
  m.vertices = std::move(vertices);
  const int n = static_cast<int>(m.vertices.size());
  m.triangles.reserve(triangles.size());
  for (const auto& t : triangles) {
    for (int k : t)
      if (k < 0 || k >= n) throw std::invalid_argument("triangle index out of range");
    if (triangle_area(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]) <=
        1e-14)
      continue;
    m.triangles.push_back(t);
  }
  return m;
}

inline double mesh_area(const TriMesh& m) {
  double a = 0;
  for (const auto& t : m.triangles)
    a += triangle_area(m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]);
  return a;
}

/// A planar vertical rectangle: one wall. Spans `width` along the yaw
/// direction and `height` vertically, centered at `center`.
struct WallQuad {
  Vec3 center{0, 0, 0};
  double yaw = 0;
  double width = 1;
  double height = 1;
  double score = 1.0;  // detection confidence; 1 for ground truth

  Vec3 along() const { return Vec3(std::cos(yaw), std::sin(yaw), 0); }

  std::array<Vec3, 4> corners() const {
    const Vec3 u = 0.5 * width * along();
    const Vec3 v(0, 0, 0.5 * height);
    return {center - u - v, center + u - v, center + u + v, center - u + v};
  }

  TriMesh mesh() const {
    const auto c = corners();
    return make_trimesh({c[0], c[1], c[2], c[3]}, {{0, 1, 2}, {0, 2, 3}});
  }
};

/// Distance from a point to the wall's plane slab, with in-rectangle check.
inline bool point_on_quad(const WallQuad& q, const Vec3& p,
                          double thickness = 0.06, double pad = 0.0) {
  const Vec3 d = p - q.center;
  const Vec3 u = q.along();
  const double a = d.dot(u);
  const double n = d.x() * -u.y() + d.y() * u.x();
  return std::abs(n) <= 0.5 * thickness && std::abs(a) <= 0.5 * q.width + pad &&
         std::abs(d.z()) <= 0.5 * q.height + pad;
}

/// Euclidean distance from a point to the wall rectangle.
inline double quad_distance(const WallQuad& q, const Vec3& p) {
  const Vec3 d = p - q.center;
  const Vec3 u = q.along();
  const double along = std::clamp(d.dot(u), -0.5 * q.width, 0.5 * q.width);
  const double z = std::clamp(d.z(), -0.5 * q.height, 0.5 * q.height);
  const Vec3 nearest = q.center + along * u + Vec3(0, 0, z);
  return (p - nearest).norm();
}

/// Projection of a point onto the wall's horizontal center axis (clamped to
/// the segment). Wall regression targets live on this axis: the along-wall
/// position of the true quad center is not locally observable.
inline Vec3 quad_axis_point(const WallQuad& q, const Vec3& p) {
  const Vec3 u = q.along();
  const double along =
      std::clamp((p - q.center).dot(u), -0.5 * q.width, 0.5 * q.width);
  return q.center + along * u;
}

/// Signed volume via the divergence theorem; meaningful for closed meshes
/// with consistent winding.
inline double mesh_volume(const TriMesh& m) {
  double v = 0;
  for (const auto& t : m.triangles)
    v += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]])) / 6.0;
  return std::abs(v);
}

// ---------------------------------------------------------------------------
// Chamfer distance (squared-L2 form): symmetric mean of squared nearest-
// neighbor distances between two point sets.
// ---------------------------------------------------------------------------

inline double chamfer_one_sided(const std::vector<Vec3>& from,
                                const std::vector<Vec3>& to) {
  double acc = 0;
  for (const Vec3& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : to) {
      const double dx = p.x() - q.x(), dy = p.y() - q.y(), dz = p.z() - q.z();
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best) best = d;
    }
    acc += best;
  }
  return acc / static_cast<double>(from.size());
}

inline double chamfer_distance(const PointCloud& p, const PointCloud& q) {
  if (p.empty() || q.empty()) throw std::invalid_argument("empty point set");
  return chamfer_one_sided(p.points, q.points) +
         chamfer_one_sided(q.points, p.points);
}

// ---------------------------------------------------------------------------
// Deterministic unit-sphere template (Fibonacci sphere).
// ---------------------------------------------------------------------------

inline PointCloud sphere_template(int n) {
  if (n < 1) throw std::invalid_argument("sphere template needs n >= 1");
  PointCloud out;
  out.points.reserve(n);
  const double golden = (1.0 + std::sqrt(5.0)) / 2.0;
  for (int i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = 2.0 * kPi * std::fmod(i / golden, 1.0);
    out.points.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Yaw-only rotated box IoU: convex polygon clipping in the ground plane
// times vertical interval overlap.
// ---------------------------------------------------------------------------

namespace detail {

inline std::array<Vec2, 4> bev_corners(const OrientedBox3& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hx = 0.5 * b.size.x(), hy = 0.5 * b.size.y();
  std::array<Vec2, 4> out;
  const double lx[4] = {hx, -hx, -hx, hx};
  const double ly[4] = {hy, hy, -hy, -hy};  // counter-clockwise
  for (int i = 0; i < 4; ++i)
    out[i] = Vec2(b.center.x() + c * lx[i] - s * ly[i],
                  b.center.y() + s * lx[i] + c * ly[i]);
  return out;
}

inline double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Sutherland-Hodgman: clip polygon `poly` against the half-plane to the left
// of directed edge (a, b).
inline std::vector<Vec2> clip_halfplane(const std::vector<Vec2>& poly,
                                        const Vec2& a, const Vec2& b) {
  std::vector<Vec2> out;
  const int n = static_cast<int>(poly.size());
  for (int i = 0; i < n; ++i) {
    const Vec2& cur = poly[i];
    const Vec2& nxt = poly[(i + 1) % n];
    const double dc = cross2(a, b, cur);
    const double dn = cross2(a, b, nxt);
    if (dc >= 0) out.push_back(cur);
    if ((dc > 0 && dn < 0) || (dc < 0 && dn > 0)) {
      const double t = dc / (dc - dn);
      out.push_back(cur + t * (nxt - cur));
    }
  }
  return out;
}

inline double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0;
  const int n = static_cast<int>(poly.size());
  for (int i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(a);
}

}  // namespace detail

inline double oriented_iou(const OrientedBox3& a, const OrientedBox3& b) {
  const auto ca = detail::bev_corners(a);
  const auto cb = detail::bev_corners(b);
  std::vector<Vec2> poly(ca.begin(), ca.end());
  for (int i = 0; i < 4 && !poly.empty(); ++i)
    poly = detail::clip_halfplane(poly, cb[i], cb[(i + 1) % 4]);
  if (poly.size() < 3) return 0.0;
  const double area = detail::polygon_area(poly);
  const double za0 = a.center.z() - 0.5 * a.size.z();
  const double za1 = a.center.z() + 0.5 * a.size.z();
  const double zb0 = b.center.z() - 0.5 * b.size.z();
  const double zb1 = b.center.z() + 0.5 * b.size.z();
  const double dz = std::min(za1, zb1) - std::max(za0, zb0);
  if (dz <= 0 || area <= 0) return 0.0;
  const double inter = area * dz;
  const double uni = a.volume() + b.volume() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Point containment test in an oriented box (boundary inclusive).
inline bool point_in_box(const OrientedBox3& b, const Vec3& p,
                         double pad = 0.0) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = p.x() - b.center.x(), dy = p.y() - b.center.y();
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  const double lz = p.z() - b.center.z();
  return std::abs(lx) <= 0.5 * b.size.x() + pad &&
         std::abs(ly) <= 0.5 * b.size.y() + pad &&
         std::abs(lz) <= 0.5 * b.size.z() + pad;
}

// ---------------------------------------------------------------------------
// Point-set subsampling and neighborhood queries.
// ---------------------------------------------------------------------------

/// Greedy farthest point sampling. Deterministic: starts at seed_index, each
/// pick maximizes the min distance to the selected set, ties to lowest index.
inline std::vector<int> farthest_point_sample(const PointCloud& pc, int k,
                                              int seed_index) {
  const int n = static_cast<int>(pc.size());
  if (k > n) throw std::invalid_argument("farthest_point_sample: k > point count");
  if (k <= 0) return {};
  if (seed_index < 0 || seed_index >= n)
    throw std::invalid_argument("farthest_point_sample: seed index out of range");
  std::vector<int> chosen;
  chosen.reserve(k);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  int cur = seed_index;
  chosen.push_back(cur);
  for (int step = 1; step < k; ++step) {
    const Vec3& c = pc.points[cur];
    int best = -1;
    double best_d2 = -1;
    for (int i = 0; i < n; ++i) {
      const double d2 = (pc.points[i] - c).squaredNorm();
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    chosen.push_back(best);
    cur = best;
  }
  return chosen;
}

/// Index of the lexicographically smallest point; canonical FPS seed that
/// makes downstream sampling invariant to input permutation.
inline int lexicographic_min_index(const PointCloud& pc) {
  if (pc.empty()) throw std::invalid_argument("empty point set");
  int best = 0;
  for (int i = 1; i < static_cast<int>(pc.size()); ++i) {
    const Vec3& a = pc.points[i];
    const Vec3& b = pc.points[best];
    if (a.x() != b.x() ? a.x() < b.x()
                       : (a.y() != b.y() ? a.y() < b.y() : a.z() < b.z()))
      best = i;
  }
  return best;
}

/// Points within `radius` of `center`, ascending by distance (ties by lowest
/// index), truncated to max_count.
inline std::vector<int> ball_query(const PointCloud& pc, const Vec3& center,
                                   double radius, int max_count) {
  if (radius <= 0) throw std::invalid_argument("ball_query: radius must be > 0");
  const double r2 = radius * radius;
  std::vector<std::pair<double, int>> hits;
  for (int i = 0; i < static_cast<int>(pc.size()); ++i) {
    const double d2 = (pc.points[i] - center).squaredNorm();
    if (d2 <= r2) hits.emplace_back(d2, i);
  }
  std::sort(hits.begin(), hits.end());
  if (static_cast<int>(hits.size()) > max_count) hits.resize(max_count);
  std::vector<int> out;
  out.reserve(hits.size());
  for (const auto& h : hits) out.push_back(h.second);
  return out;
}

// ---------------------------------------------------------------------------
// Feature interpolation: 3-NN inverse-squared-distance weights. A query that
// coincides with a source point (distance < 1e-9) returns that source row
// exactly.
// ---------------------------------------------------------------------------

struct InterpWeights {
  std::array<int, 3> index{{-1, -1, -1}};
  std::array<double, 3> weight{{0, 0, 0}};  // normalized
  int count = 0;
  bool exact = false;  // query coincides with source index[0]
};

inline InterpWeights interpolation_weights(const std::vector<Vec3>& src,
                                           const Vec3& query) {
  if (src.empty()) throw std::invalid_argument("interpolation: no source points");
  // three smallest (d2, index) pairs
  std::array<std::pair<double, int>, 3> best;
  best.fill({std::numeric_limits<double>::infinity(), -1});
  for (int i = 0; i < static_cast<int>(src.size()); ++i) {
    const double d2 = (src[i] - query).squaredNorm();
    std::pair<double, int> cand{d2, i};
    for (int k = 0; k < 3; ++k) {
      if (cand < best[k]) std::swap(cand, best[k]);
    }
  }
  InterpWeights w;
  w.count = std::min<int>(3, static_cast<int>(src.size()));
  if (best[0].first < 1e-18) {  // distance < 1e-9
    w.index[0] = best[0].second;
    w.weight[0] = 1.0;
    w.count = 1;
    w.exact = true;
    return w;
  }
  double norm = 0;
  for (int k = 0; k < w.count; ++k) {
    w.index[k] = best[k].second;
    w.weight[k] = 1.0 / best[k].first;
    norm += w.weight[k];
  }
  for (int k = 0; k < w.count; ++k) w.weight[k] /= norm;
  return w;
}

inline Eigen::MatrixXd interpolate_features(const PointCloud& src,
                                            const std::vector<Vec3>& dst) {
  if (src.empty()) throw std::invalid_argument("interpolation: no source points");
  if (!src.has_features())
    throw std::invalid_argument("interpolation: source has no features");
  Eigen::MatrixXd out(dst.size(), src.features.cols());
  for (int i = 0; i < static_cast<int>(dst.size()); ++i) {
    const InterpWeights w = interpolation_weights(src.points, dst[i]);
    out.row(i).setZero();
    for (int k = 0; k < w.count; ++k)
      out.row(i) += w.weight[k] * src.features.row(w.index[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mesh surface sampling: triangle picked area-proportionally, barycentric-
// uniform within the triangle.
// ---------------------------------------------------------------------------

struct SurfaceSample {
  PointCloud cloud;
  std::vector<int> triangle;  // generating triangle per point
};

inline SurfaceSample sample_mesh_surface_detailed(const TriMesh& mesh, int n,
                                                  std::uint64_t seed) {
  if (mesh.empty()) throw std::invalid_argument("empty mesh");
  std::vector<double> cum(mesh.triangles.size());
  double total = 0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    const auto& t = mesh.triangles[i];
    total += triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]],
                           mesh.vertices[t[2]]);
    cum[i] = total;
  }
  if (total <= 0) throw std::invalid_argument("mesh has zero surface area");
  SurfaceSample out;
  out.cloud.points.reserve(std::max(0, n));
  out.triangle.reserve(std::max(0, n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    const std::size_t t =
        std::upper_bound(cum.begin(), cum.end(), u) - cum.begin();
    const auto& tri = mesh.triangles[std::min(t, mesh.triangles.size() - 1)];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const Vec3 p = (1 - r1) * mesh.vertices[tri[0]] +
                   r1 * (1 - r2) * mesh.vertices[tri[1]] +
                   r1 * r2 * mesh.vertices[tri[2]];
    out.cloud.points.push_back(p);
    out.triangle.push_back(static_cast<int>(
        std::min(t, mesh.triangles.size() - 1)));
  }
  return out;
}

inline PointCloud sample_mesh_surface(const TriMesh& mesh, int n,
                                      std::uint64_t seed) {
  return sample_mesh_surface_detailed(mesh, n, seed).cloud;
}

// ---------------------------------------------------------------------------
// Ray-parity containment for closed meshes (occupancy labeling).
// ---------------------------------------------------------------------------

inline bool ray_hits_triangle(const Vec3& origin, const Vec3& dir,
                              const Vec3& a, const Vec3& b, const Vec3& c) {
  // Moller-Trumbore
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 pv = dir.cross(e2);
  const double det = e1.dot(pv);
  if (std::abs(det) < 1e-14) return false;
  const double inv = 1.0 / det;
  const Vec3 tv = origin - a;
  const double u = tv.dot(pv) * inv;
  if (u < 0 || u > 1) return false;
  const Vec3 qv = tv.cross(e1);
  const double v = dir.dot(qv) * inv;
  if (v < 0 || u + v > 1) return false;
  const double t = e2.dot(qv) * inv;
  return t > 1e-12;
}

inline bool point_inside_mesh(const TriMesh& mesh, const Vec3& p) {
  // Majority over three skew directions; a single ray can double-count when
  // it threads a shared triangle edge.
  static const Vec3 dirs[3] = {Vec3(0.57315, 0.33261, 0.75127).normalized(),
                               Vec3(-0.31809, 0.81733, 0.48063).normalized(),
                               Vec3(0.72011, -0.56945, 0.39705).normalized()};
  int votes = 0;
  for (const Vec3& dir : dirs) {
    int hits = 0;
    for (const auto& t : mesh.triangles)
      if (ray_hits_triangle(p, dir, mesh.vertices[t[0]], mesh.vertices[t[1]],
                            mesh.vertices[t[2]]))
        ++hits;
    votes += hits % 2;
  }
  return votes >= 2;
}

// ---------------------------------------------------------------------------
// Small transform helpers.
// ---------------------------------------------------------------------------

inline Vec3 rotate_z(const Vec3& p, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return Vec3(c * p.x() - s * p.y(), s * p.x() + c * p.y(), p.z());
}

inline PointCloud transformed(const PointCloud& pc, double yaw,
                              const Vec3& translation) {
  PointCloud out = pc;
  for (Vec3& p : out.points) p = rotate_z(p, yaw) + translation;
  return out;
}

inline TriMesh transformed(const TriMesh& m, double yaw,
                           const Vec3& translation) {
  TriMesh out = m;
  for (Vec3& v : out.vertices) v = rotate_z(v, yaw) + translation;
  return out;
}

}  // namespace ancs
