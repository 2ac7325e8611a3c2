#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anchorscene/config.hpp"
#include "anchorscene/geometry.hpp"
#include "anchorscene/io.hpp"
#include "anchorscene/rng.hpp"

namespace ancs {

enum class Category : int {
  BoxCrate = 0,
  CylinderBin,
  Table,
  Chair,
  LSofa,
  WallDisplay,
};
constexpr int kNumCategories = 6;

inline const char* category_name(Category c) {
  static const char* names[kNumCategories] = {"box_crate", "cylinder_bin",
                                              "table",     "chair",
                                              "l_sofa",    "wall_display"};
  return names[static_cast<int>(c)];
}

inline Category category_from_name(const std::string& s) {
  for (int i = 0; i < kNumCategories; ++i)
    if (s == category_name(static_cast<Category>(i)))
      return static_cast<Category>(i);
  throw std::invalid_argument("unknown category: " + s);
}

// Offsets keeping wall instance ids disjoint from object ids in scan labels.
constexpr std::int32_t kWallIdBase = 1000;
constexpr std::int32_t kBackgroundId = -1;

struct SceneSpec {
  std::uint64_t rng_seed = 1;
  double room_w_min = 4.0, room_w_max = 5.2;
  double room_d_min = 4.4, room_d_max = 6.0;
  int objects_min = 2, objects_max = 5;
  std::array<double, kNumCategories> category_mix{1, 1, 1, 1, 1, 1};
  double clearance = 0.3;
  double l_shape_prob = 0.3;
  double wall_h_min = 2.3, wall_h_max = 2.7;
  // scan parameters
  double density = 80.0;  // points per m^2
  double noise_sigma = 0.005;
  bool bottom_cull = true;
  int sectors = 2;

  static SceneSpec from_config(const Config& c) {
    SceneSpec s;
    s.rng_seed = c.get_u64("train.seed");
    s.room_w_min = c.get_d("scene.room_w_min");
    s.room_w_max = c.get_d("scene.room_w_max");
    s.room_d_min = c.get_d("scene.room_d_min");
    s.room_d_max = c.get_d("scene.room_d_max");
    s.objects_min = c.get_i("scene.objects_min");
    s.objects_max = c.get_i("scene.objects_max");
    s.clearance = c.get_d("scene.clearance");
    s.l_shape_prob = c.get_d("scene.l_shape_prob");
    s.wall_h_min = c.get_d("scene.wall_h_min");
    s.wall_h_max = c.get_d("scene.wall_h_max");
    const auto mix = c.get_list("scene.category_mix");
    if (mix.size() != kNumCategories)
      throw std::invalid_argument("scene.category_mix needs 6 weights");
    for (int i = 0; i < kNumCategories; ++i) s.category_mix[i] = mix[i];
    s.density = c.get_d("scan.density");
    s.noise_sigma = c.get_d("scan.noise_sigma");
    s.bottom_cull = c.get_b("scan.bottom_cull");
    s.sectors = c.get_i("scan.sectors");
    s.validate();
    return s;
  }

  void validate() const {
    if (room_w_min > room_w_max || room_d_min > room_d_max ||
        objects_min > objects_max || wall_h_min > wall_h_max)
      throw std::invalid_argument("scene spec: empty range");
    if (clearance < 0) throw std::invalid_argument("scene spec: clearance < 0");
    double mix_sum = 0;
    for (double m : category_mix) {
      if (m < 0) throw std::invalid_argument("scene spec: negative mix weight");
      mix_sum += m;
    }
    if (mix_sum <= 0) throw std::invalid_argument("scene spec: empty category mix");
    if (density <= 0) throw std::invalid_argument("scene spec: density <= 0");
  }
};

struct GtObject {
  Category category;
  TriMesh mesh;      // world frame
  OrientedBox3 box;  // tight, yaw-aligned
};

struct Scene {
  std::vector<GtObject> objects;
  std::vector<WallQuad> walls;
  std::vector<Vec3> layout_corners;  // ordered, z = 0
  bool layout_closed = true;
};

// ---------------------------------------------------------------------------
// Object-frame primitives. Footprint centered on the origin, base at z = 0.
// Composite shapes are unions of disjoint closed boxes so ray-parity
// containment stays valid.
// ---------------------------------------------------------------------------

namespace detail {

inline void add_box(std::vector<Vec3>& verts,
                    std::vector<std::array<int, 3>>& tris, const Vec3& lo,
                    const Vec3& hi) {
  const int b = static_cast<int>(verts.size());
  verts.emplace_back(lo.x(), lo.y(), lo.z());
  verts.emplace_back(hi.x(), lo.y(), lo.z());
  verts.emplace_back(hi.x(), hi.y(), lo.z());
  verts.emplace_back(lo.x(), hi.y(), lo.z());
  verts.emplace_back(lo.x(), lo.y(), hi.z());
  verts.emplace_back(hi.x(), lo.y(), hi.z());
  verts.emplace_back(hi.x(), hi.y(), hi.z());
  verts.emplace_back(lo.x(), hi.y(), hi.z());
  const int f[12][3] = {{0, 2, 1}, {0, 3, 2},   // bottom (normal -z)
                        {4, 5, 6}, {4, 6, 7},   // top
                        {0, 1, 5}, {0, 5, 4},   // y-
                        {2, 3, 7}, {2, 7, 6},   // y+
                        {1, 2, 6}, {1, 6, 5},   // x+
                        {3, 0, 4}, {3, 4, 7}};  // x-
  for (const auto& t : f) tris.push_back({b + t[0], b + t[1], b + t[2]});
}

inline void add_cylinder(std::vector<Vec3>& verts,
                         std::vector<std::array<int, 3>>& tris, double radius,
                         double z0, double z1, int sides = 16) {
  const int b = static_cast<int>(verts.size());
  for (int i = 0; i < sides; ++i) {
    const double a = 2.0 * kPi * i / sides;
    verts.emplace_back(radius * std::cos(a), radius * std::sin(a), z0);
    verts.emplace_back(radius * std::cos(a), radius * std::sin(a), z1);
  }
  const int cb = static_cast<int>(verts.size());
  verts.emplace_back(0, 0, z0);
  verts.emplace_back(0, 0, z1);
  for (int i = 0; i < sides; ++i) {
    const int j = (i + 1) % sides;
    const int i0 = b + 2 * i, i1 = b + 2 * i + 1;
    const int j0 = b + 2 * j, j1 = b + 2 * j + 1;
    tris.push_back({i0, j0, j1});
    tris.push_back({i0, j1, i1});
    tris.push_back({cb, j0, i0});      // bottom cap (normal -z)
    tris.push_back({cb + 1, i1, j1});  // top cap
  }
}

}  // namespace detail

/// Builds one object-frame mesh with category-specific random dimensions.
inline TriMesh make_category_mesh(Category cat, Rng& rng) {
  std::vector<Vec3> v;
  std::vector<std::array<int, 3>> t;
  using detail::add_box;
  switch (cat) {
    case Category::BoxCrate: {
      const double sx = rng.uniform(0.45, 0.8), sy = rng.uniform(0.45, 0.8);
      const double h = rng.uniform(0.4, 0.7);
      add_box(v, t, Vec3(-sx / 2, -sy / 2, 0), Vec3(sx / 2, sy / 2, h));
      break;
    }
    case Category::CylinderBin: {
      const double r = rng.uniform(0.15, 0.26);
      const double h = rng.uniform(0.4, 0.6);
      detail::add_cylinder(v, t, r, 0, h);
      break;
    }
    case Category::Table: {
      const double w = rng.uniform(0.9, 1.4), d = rng.uniform(0.6, 0.9);
      const double h = rng.uniform(0.68, 0.76), top = 0.05, leg = 0.06;
      add_box(v, t, Vec3(-w / 2, -d / 2, h - top), Vec3(w / 2, d / 2, h));
      const double lx = w / 2 - leg, ly = d / 2 - leg;
      for (int sx = -1; sx <= 1; sx += 2)
        for (int sy = -1; sy <= 1; sy += 2)
          add_box(v, t, Vec3(sx * lx - leg / 2, sy * ly - leg / 2, 0),
                  Vec3(sx * lx + leg / 2, sy * ly + leg / 2, h - top));
      break;
    }
    case Category::Chair: {
      const double s = rng.uniform(0.4, 0.46);
      const double seat_h = rng.uniform(0.42, 0.46), seat_t = 0.05;
      const double back_h = rng.uniform(0.85, 0.95), back_t = 0.05;
      const double leg = 0.045;
      add_box(v, t, Vec3(-s / 2, -s / 2, seat_h - seat_t),
              Vec3(s / 2, s / 2, seat_h));
      const double lx = s / 2 - leg, ly = s / 2 - leg;
      for (int sx = -1; sx <= 1; sx += 2)
        for (int sy = -1; sy <= 1; sy += 2)
          add_box(v, t, Vec3(sx * lx - leg / 2, sy * ly - leg / 2, 0),
                  Vec3(sx * lx + leg / 2, sy * ly + leg / 2, seat_h - seat_t));
      add_box(v, t, Vec3(-s / 2, s / 2 - back_t, seat_h),
              Vec3(s / 2, s / 2, back_h));
      break;
    }
    case Category::LSofa: {
      const double w = rng.uniform(1.2, 1.45), d = rng.uniform(0.65, 0.8);
      const double h = rng.uniform(0.4, 0.48);
      const double ext_w = rng.uniform(0.5, 0.6), ext_d = rng.uniform(0.45, 0.55);
      const double back_h = h + rng.uniform(0.25, 0.35);
      add_box(v, t, Vec3(-w / 2, -d / 2, 0), Vec3(w / 2, d / 2, h));
      // chaise flush against the +y face at the +x end
      add_box(v, t, Vec3(w / 2 - ext_w, d / 2, 0), Vec3(w / 2, d / 2 + ext_d, h));
      // backrest flush on the -y face
      add_box(v, t, Vec3(-w / 2, -d / 2 - 0.12, 0),
              Vec3(w / 2, -d / 2, back_h));
      break;
    }
    case Category::WallDisplay: {
      const double w = rng.uniform(0.8, 1.2);
      const double h = rng.uniform(0.5, 0.7), thick = 0.06;
      add_box(v, t, Vec3(-w / 2, -thick / 2, 0), Vec3(w / 2, thick / 2, h));
      break;
    }
  }
  return make_trimesh(std::move(v), t);
}

namespace detail {

// BEV footprint rectangle helpers for placement clearance.
inline std::array<Vec2, 4> footprint_corners(const Vec2& center, double yaw,
                                             double ex, double ey) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  std::array<Vec2, 4> out;
  const double lx[4] = {ex / 2, -ex / 2, -ex / 2, ex / 2};
  const double ly[4] = {ey / 2, ey / 2, -ey / 2, -ey / 2};
  for (int i = 0; i < 4; ++i)
    out[i] = Vec2(center.x() + c * lx[i] - s * ly[i],
                  center.y() + s * lx[i] + c * ly[i]);
  return out;
}

inline double point_segment_dist(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double t = std::clamp(d.dot(p - a) / d.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * d)).norm();
}

inline bool rects_overlap(const std::array<Vec2, 4>& a,
                          const std::array<Vec2, 4>& b) {
  // separating axis test over both rectangles' edge normals
  for (int pass = 0; pass < 2; ++pass) {
    const auto& r = pass == 0 ? a : b;
    const auto& o = pass == 0 ? b : a;
    for (int e = 0; e < 2; ++e) {
      const Vec2 axis(r[(e + 1) % 4].y() - r[e].y(),
                      r[e].x() - r[(e + 1) % 4].x());
      double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
      for (int i = 0; i < 4; ++i) {
        amin = std::min(amin, axis.dot(r[i]));
        amax = std::max(amax, axis.dot(r[i]));
        bmin = std::min(bmin, axis.dot(o[i]));
        bmax = std::max(bmax, axis.dot(o[i]));
      }
      if (amax < bmin || bmax < amin) return false;
    }
  }
  return true;
}

inline double rect_distance(const std::array<Vec2, 4>& a,
                            const std::array<Vec2, 4>& b) {
  if (rects_overlap(a, b)) return 0.0;
  double best = 1e300;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      best = std::min(best,
                      point_segment_dist(a[i], b[j], b[(j + 1) % 4]));
      best = std::min(best,
                      point_segment_dist(b[i], a[j], a[(j + 1) % 4]));
    }
  return best;
}

struct RoomPolygon {
  std::vector<Vec2> corners;  // counter-clockwise, may be concave (L-shape)

  bool contains(const Vec2& p) const {
    // crossing number
    bool inside = false;
    const int n = static_cast<int>(corners.size());
    for (int i = 0, j = n - 1; i < n; j = i++) {
      const Vec2& a = corners[i];
      const Vec2& b = corners[j];
      if ((a.y() > p.y()) != (b.y() > p.y()) &&
          p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x())
        inside = !inside;
    }
    return inside;
  }

  bool contains_with_margin(const Vec2& p, double margin) const {
    if (!contains(p)) return false;
    const int n = static_cast<int>(corners.size());
    for (int i = 0; i < n; ++i)
      if (point_segment_dist(p, corners[i], corners[(i + 1) % n]) < margin)
        return false;
    return true;
  }
};

inline RoomPolygon make_room_polygon(Rng& rng, const SceneSpec& spec) {
  const double w = rng.uniform(spec.room_w_min, spec.room_w_max);
  const double d = rng.uniform(spec.room_d_min, spec.room_d_max);
  const bool l_shaped = rng.uniform() < spec.l_shape_prob;
  RoomPolygon room;
  const double hw = w / 2, hd = d / 2;
  if (!l_shaped) {
    room.corners = {Vec2(-hw, -hd), Vec2(hw, -hd), Vec2(hw, hd), Vec2(-hw, hd)};
  } else {
    const double nw = rng.uniform(0.3, 0.45) * w;
    const double nd = rng.uniform(0.3, 0.45) * d;
    room.corners = {Vec2(-hw, -hd),     Vec2(hw, -hd), Vec2(hw, hd - nd),
                    Vec2(hw - nw, hd - nd), Vec2(hw - nw, hd), Vec2(-hw, hd)};
  }
  return room;
}

}  // namespace detail

/// Procedurally generates one labeled scene: meshes + boxes + wall quads +
/// ordered layout corners. Deterministic given (spec, seed).
inline Scene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(spec.rng_seed, seed, 0x5ce11e));
  Scene scene;

  const detail::RoomPolygon room = detail::make_room_polygon(rng, spec);
  const double wall_h = rng.uniform(spec.wall_h_min, spec.wall_h_max);
  const int n_corners = static_cast<int>(room.corners.size());
  for (int i = 0; i < n_corners; ++i) {
    const Vec2& a = room.corners[i];
    const Vec2& b = room.corners[(i + 1) % n_corners];
    WallQuad q;
    q.center = Vec3((a.x() + b.x()) / 2, (a.y() + b.y()) / 2, wall_h / 2);
    q.yaw = std::atan2(b.y() - a.y(), b.x() - a.x());
    q.width = (b - a).norm();
    q.height = wall_h;
    scene.walls.push_back(q);
    scene.layout_corners.emplace_back(a.x(), a.y(), 0.0);
  }
  scene.layout_closed = true;

  // category weights -> cumulative distribution
  std::array<double, kNumCategories> cum{};
  double mix_total = 0;
  for (int i = 0; i < kNumCategories; ++i) {
    mix_total += spec.category_mix[i];
    cum[i] = mix_total;
  }

  const int n_objects = rng.uniform_int(spec.objects_min, spec.objects_max);
  double bb_lo_x = 1e9, bb_hi_x = -1e9, bb_lo_y = 1e9, bb_hi_y = -1e9;
  for (const Vec2& c : room.corners) {
    bb_lo_x = std::min(bb_lo_x, c.x());
    bb_hi_x = std::max(bb_hi_x, c.x());
    bb_lo_y = std::min(bb_lo_y, c.y());
    bb_hi_y = std::max(bb_hi_y, c.y());
  }

  // draw all shapes first, then place the largest footprints first; this
  // keeps the rejection sampler away from dead ends
  struct Pending {
    TriMesh mesh;
    int category;
    Vec3 extent, center_local;
    double radius;
  };
  std::vector<Pending> pending;
  const bool sofa_only =
      mix_total <= spec.category_mix[static_cast<int>(Category::LSofa)];
  bool sofa_drawn = false;
  for (int i = 0; i < n_objects; ++i) {
    int cat = 0;
    do {
      const double pick = rng.uniform() * mix_total;
      cat = 0;
      while (cat + 1 < kNumCategories && pick > cum[cat]) ++cat;
      // at most one sofa per scene; a second rarely fits a desk-scale room
    } while (cat == static_cast<int>(Category::LSofa) && sofa_drawn &&
             !sofa_only);
    if (cat == static_cast<int>(Category::LSofa)) sofa_drawn = true;
    Pending p;
    p.category = cat;
    p.mesh = make_category_mesh(static_cast<Category>(cat), rng);
    Vec3 lo = p.mesh.vertices.front(), hi = lo;
    for (const Vec3& v : p.mesh.vertices) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    p.extent = hi - lo;
    p.center_local = 0.5 * (lo + hi);
    p.radius = 0.5 * std::hypot(p.extent.x(), p.extent.y());
    pending.push_back(std::move(p));
  }
  std::stable_sort(pending.begin(), pending.end(),
                   [](const Pending& a, const Pending& b) {
                     return a.radius > b.radius;
                   });

  std::vector<std::array<Vec2, 4>> placed;
  for (const Pending& p : pending) {
    bool ok = false;
    for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
      const Vec2 c(rng.uniform(bb_lo_x, bb_hi_x), rng.uniform(bb_lo_y, bb_hi_y));
      const double yaw = rng.uniform(-kPi, kPi);
      // the footprint rect is centered on the box (BEV) center, not the
      // sampled origin: shift by the local box center
      const Vec3 world_center = rotate_z(p.center_local, yaw) + Vec3(c.x(), c.y(), 0);
      const auto rect = detail::footprint_corners(
          Vec2(world_center.x(), world_center.y()), yaw, p.extent.x(),
          p.extent.y());
      bool bad = false;
      for (const Vec2& corner : rect)
        if (!room.contains_with_margin(corner, spec.clearance)) {
          bad = true;
          break;
        }
      if (bad) continue;
      for (const auto& q : placed)
        if (detail::rect_distance(rect, q) < spec.clearance) {
          bad = true;
          break;
        }
      if (bad) continue;

      GtObject obj;
      obj.category = static_cast<Category>(p.category);
      obj.mesh = transformed(p.mesh, yaw, Vec3(c.x(), c.y(), 0));
      obj.box = OrientedBox3(world_center, p.extent, yaw);
      scene.objects.push_back(std::move(obj));
      placed.push_back(rect);
      ok = true;
    }
    if (!ok) {
      // the clearance constraint is hard; above the minimum count a stalled
      // placement just ends the scene early
      if (static_cast<int>(scene.objects.size()) >= spec.objects_min) break;
      throw std::runtime_error("scene too dense");
    }
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Partial scan simulation: area-weighted surface sampling, bottom culling,
// angular-sector occlusion, Gaussian noise. Instance ids and face normals are
// side channels for tests and oracles only.
// ---------------------------------------------------------------------------

struct ScanResult {
  PointCloud cloud;
  std::vector<std::int32_t> instance_ids;
  std::vector<Vec3> normals;
};

inline ScanResult simulate_partial_scan(const Scene& scene,
                                        const SceneSpec& spec,
                                        std::uint64_t seed) {
  if (scene.objects.empty() && scene.walls.empty())
    throw std::invalid_argument("empty scene");
  struct PoolTri {
    Vec3 a, b, c;
    Vec3 normal;
    std::int32_t id;
    double cum_area;
  };
  std::vector<PoolTri> pool;
  double total = 0;
  auto add_mesh = [&](const TriMesh& m, std::int32_t id) {
    for (const auto& t : m.triangles) {
      PoolTri pt{m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]],
                 Vec3::Zero(), id, 0};
      const Vec3 n = (pt.b - pt.a).cross(pt.c - pt.a);
      const double area2 = n.norm();
      if (area2 <= 0) continue;
      pt.normal = n / area2;
      total += area2 / 2;
      pt.cum_area = total;
      pool.push_back(pt);
    }
  };
  for (std::size_t i = 0; i < scene.objects.size(); ++i)
    add_mesh(scene.objects[i].mesh, static_cast<std::int32_t>(i));
  for (std::size_t w = 0; w < scene.walls.size(); ++w)
    add_mesh(scene.walls[w].mesh(), kWallIdBase + static_cast<std::int32_t>(w));

  Rng rng(derive_seed(spec.rng_seed, seed, 0x5ca9));
  const long n_target = std::lround(spec.density * total);

  // occlusion sectors around a random viewpoint
  Vec3 view(0, 0, 1.4);
  std::vector<std::pair<double, double>> sectors;  // [start, width]
  if (spec.sectors > 0) {
    view = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 1.4);
    for (int s = 0; s < spec.sectors; ++s)
      sectors.emplace_back(rng.uniform(-kPi, kPi),
                           rng.uniform(kPi / 9, kPi / 3));
  }
  auto occluded = [&](const Vec3& p) {
    const double az = std::atan2(p.y() - view.y(), p.x() - view.x());
    for (const auto& [start, width] : sectors) {
      double d = az - start;
      d -= 2 * kPi * std::floor(d / (2 * kPi));  // wrap to [0, 2*pi)
      if (d < width) return true;
    }
    return false;
  };

  ScanResult out;
  for (long i = 0; i < n_target; ++i) {
    const double u = rng.uniform() * total;
    std::size_t lo = 0, hi = pool.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (pool[mid].cum_area < u)
        lo = mid + 1;
      else
        hi = mid;
    }
    const PoolTri& tri = pool[lo];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const Vec3 p = (1 - r1) * tri.a + r1 * (1 - r2) * tri.b + r1 * r2 * tri.c;
    // draw noise regardless of rejection so the consumed stream per sample
    // is fixed, keeping density scaling exact
    const Vec3 noise(rng.normal(0, spec.noise_sigma),
                     rng.normal(0, spec.noise_sigma),
                     rng.normal(0, spec.noise_sigma));
    if (spec.bottom_cull && tri.id < kWallIdBase && tri.normal.z() < -0.9)
      continue;
    if (spec.sectors > 0 && occluded(p)) continue;
    out.cloud.points.push_back(p + noise);
    out.instance_ids.push_back(tri.id);
    out.normals.push_back(tri.normal);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset directory layout:
//   <root>/corpus.json
//   <root>/scenes/<id>/scan.ply
//   <root>/scenes/<id>/gt/boxes.json
//   <root>/scenes/<id>/gt/layout.json
//   <root>/scenes/<id>/gt/meshes/obj_###.obj
//   <root>/scenes/<id>/gt/instance_ids.bin
// ---------------------------------------------------------------------------

inline std::string scene_id_string(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%04d", index);
  return buf;
}

inline nlohmann::json boxes_to_json(const Scene& scene) {
  nlohmann::json j;
  j["boxes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const GtObject& o = scene.objects[i];
    char mesh_name[64];
    std::snprintf(mesh_name, sizeof(mesh_name), "meshes/obj_%03d.obj",
                  static_cast<int>(i));
    j["boxes"].push_back(
        {{"class", category_name(o.category)},
         {"center", {o.box.center.x(), o.box.center.y(), o.box.center.z()}},
         {"size", {o.box.size.x(), o.box.size.y(), o.box.size.z()}},
         {"yaw", o.box.yaw},
         {"mesh", mesh_name}});
  }
  return j;
}

inline nlohmann::json layout_to_json(const std::vector<Vec3>& corners,
                                     bool closed,
                                     const std::vector<WallQuad>* walls) {
  nlohmann::json j;
  j["closed"] = closed;
  j["corners"] = nlohmann::json::array();
  for (const Vec3& c : corners) j["corners"].push_back({c.x(), c.y(), c.z()});
  if (walls) {
    j["walls"] = nlohmann::json::array();
    for (const WallQuad& w : *walls)
      j["walls"].push_back(
          {{"center", {w.center.x(), w.center.y(), w.center.z()}},
           {"yaw", w.yaw},
           {"width", w.width},
           {"height", w.height},
           {"score", w.score}});
  }
  return j;
}

inline void write_scene_dir(const fs::path& scene_dir, const Scene& scene,
                            const ScanResult& scan) {
  fs::create_directories(scene_dir / "gt" / "meshes");
  write_ply(scene_dir / "scan.ply", scan.cloud, /*binary=*/true);
  atomic_write_file(scene_dir / "gt" / "boxes.json",
                    boxes_to_json(scene).dump(2));
  atomic_write_file(
      scene_dir / "gt" / "layout.json",
      layout_to_json(scene.layout_corners, scene.layout_closed, &scene.walls)
          .dump(2));
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "obj_%03d.obj", static_cast<int>(i));
    write_obj(scene_dir / "gt" / "meshes" / name, scene.objects[i].mesh);
  }
  write_i32_array(scene_dir / "gt" / "instance_ids.bin", scan.instance_ids);
}

/// Generates `count` scenes under `root` plus the corpus manifest.
inline void generate_corpus(const fs::path& root, const SceneSpec& spec,
                            int count, const Config& config) {
  nlohmann::json manifest;
  manifest["spec"] = nlohmann::json::object();
  for (const auto& [k, v] : config.entries())
    if (k.rfind("scene.", 0) == 0 || k.rfind("scan.", 0) == 0)
      manifest["spec"][k] = v;
  manifest["rng_seed"] = spec.rng_seed;
  manifest["scenes"] = nlohmann::json::array();
  for (int i = 0; i < count; ++i) {
    const Scene scene = generate_scene(spec, static_cast<std::uint64_t>(i));
    const ScanResult scan =
        simulate_partial_scan(scene, spec, static_cast<std::uint64_t>(i));
    const std::string id = scene_id_string(i);
    write_scene_dir(root / "scenes" / id, scene, scan);
    manifest["scenes"].push_back({{"id", id}, {"seed", i}});
  }
  atomic_write_file(root / "corpus.json", manifest.dump(2));
}

// ---------------------------------------------------------------------------
// Loading (accepts both ground-truth scene dirs and prediction dirs, which
// share the boxes/layout/meshes schema).
// ---------------------------------------------------------------------------

struct LoadedBox {
  std::string category;
  OrientedBox3 box;
  double score = 1.0;
  fs::path mesh_path;  // may be empty
};

struct LoadedSceneGt {
  PointCloud scan;
  std::vector<std::int32_t> instance_ids;
  std::vector<LoadedBox> boxes;
  std::vector<WallQuad> walls;
  std::vector<Vec3> layout_corners;
  bool layout_closed = true;
};

inline std::vector<LoadedBox> load_boxes_json(const fs::path& path) {
  const nlohmann::json j = nlohmann::json::parse(read_file(path));
  std::vector<LoadedBox> out;
  for (const auto& b : j.at("boxes")) {
    LoadedBox lb;
    lb.category = b.at("class").get<std::string>();
    const auto c = b.at("center");
    const auto s = b.at("size");
    lb.box = OrientedBox3(Vec3(c[0], c[1], c[2]), Vec3(s[0], s[1], s[2]),
                          b.at("yaw").get<double>());
    if (b.contains("score")) lb.score = b.at("score").get<double>();
    if (b.contains("mesh"))
      lb.mesh_path = path.parent_path() / b.at("mesh").get<std::string>();
    out.push_back(std::move(lb));
  }
  return out;
}

inline void load_layout_json(const fs::path& path, std::vector<Vec3>* corners,
                             bool* closed, std::vector<WallQuad>* walls) {
  const nlohmann::json j = nlohmann::json::parse(read_file(path));
  if (closed) *closed = j.value("closed", true);
  if (corners) {
    corners->clear();
    for (const auto& c : j.at("corners"))
      corners->emplace_back(c[0], c[1], c[2]);
  }
  if (walls) {
    walls->clear();
    if (j.contains("walls"))
      for (const auto& w : j.at("walls")) {
        WallQuad q;
        const auto c = w.at("center");
        q.center = Vec3(c[0], c[1], c[2]);
        q.yaw = w.at("yaw").get<double>();
        q.width = w.at("width").get<double>();
        q.height = w.at("height").get<double>();
        q.score = w.value("score", 1.0);
        walls->push_back(q);
      }
  }
}

inline LoadedSceneGt load_scene_gt(const fs::path& scene_dir) {
  LoadedSceneGt out;
  out.scan = read_ply(scene_dir / "scan.ply");
  out.instance_ids = read_i32_array(scene_dir / "gt" / "instance_ids.bin");
  out.boxes = load_boxes_json(scene_dir / "gt" / "boxes.json");
  load_layout_json(scene_dir / "gt" / "layout.json", &out.layout_corners,
                   &out.layout_closed, &out.walls);
  return out;
}

inline std::vector<std::string> corpus_scene_ids(const fs::path& root) {
  const nlohmann::json j = nlohmann::json::parse(read_file(root / "corpus.json"));
  std::vector<std::string> ids;
  for (const auto& s : j.at("scenes")) ids.push_back(s.at("id").get<std::string>());
  return ids;
}

}  // namespace ancs
