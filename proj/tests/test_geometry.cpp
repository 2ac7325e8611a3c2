#include <catch2/catch_amalgamated.hpp>

#include "anchorscene/geometry.hpp"
#include "anchorscene/synth.hpp"
#include "test_support.hpp"

using namespace ancs;
using test_support::chamfer_oracle;
using test_support::iou_mc_oracle;
using test_support::random_cloud;

TEST_CASE("chamfer distance basics") {
  PointCloud two(std::vector<Vec3>{Vec3(0, 0, 0), Vec3(1, 1, 1)});
  REQUIRE(chamfer_distance(two, two) == 0.0);

  PointCloud p(std::vector<Vec3>{Vec3(0, 0, 0)});
  PointCloud q(std::vector<Vec3>{Vec3(1, 0, 0)});
  REQUIRE(chamfer_distance(p, q) == Catch::Approx(2.0).margin(1e-15));

  PointCloud empty;
  REQUIRE_THROWS_WITH(chamfer_distance(empty, q),
                      Catch::Matchers::ContainsSubstring("empty point set"));
}

TEST_CASE("chamfer distance equals the exhaustive oracle") {
  Rng rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud p = random_cloud(50, rng);
    PointCloud q = random_cloud(50, rng);
    REQUIRE(chamfer_distance(p, q) ==
            Catch::Approx(chamfer_oracle(p, q)).margin(1e-9));
  }
}

TEST_CASE("chamfer symmetry and rigid invariance") {
  Rng rng(55);
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud p = random_cloud(30, rng);
    PointCloud q = random_cloud(40, rng);
    REQUIRE(chamfer_distance(p, q) ==
            Catch::Approx(chamfer_distance(q, p)).margin(1e-12));
    const double yaw = rng.uniform(-kPi, kPi);
    const Vec3 t(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    REQUIRE(chamfer_distance(transformed(p, yaw, t), transformed(q, yaw, t)) ==
            Catch::Approx(chamfer_distance(p, q)).margin(1e-9));
  }
}

TEST_CASE("sphere template") {
  const PointCloud sph = sphere_template(18);
  REQUIRE(sph.size() == 18);
  for (const Vec3& p : sph.points)
    REQUIRE(std::abs(p.norm() - 1.0) < 1e-12);

  const PointCloud one = sphere_template(1);
  REQUIRE(one.size() == 1);
  REQUIRE(std::abs(one.points[0].norm() - 1.0) < 1e-12);

  REQUIRE_THROWS(sphere_template(0));

  // deterministic minimum pairwise distance; the value below was computed by
  // exhaustive enumeration over all 153 pairs of the N=18 template
  double min_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 18; ++i)
    for (int j = i + 1; j < 18; ++j)
      min_d = std::min(min_d, (sph.points[i] - sph.points[j]).norm());
  REQUIRE(min_d == Catch::Approx(0.727391676).margin(1e-6));
  REQUIRE(sphere_template(18).points == sph.points);  // deterministic
}

TEST_CASE("oriented IoU basics") {
  const OrientedBox3 a(Vec3(0.3, -0.2, 0.5), Vec3(1.2, 0.8, 0.6), 0.4);
  REQUIRE(oriented_iou(a, a) == Catch::Approx(1.0).margin(1e-12));

  const OrientedBox3 far(Vec3(10.3, -0.2, 0.5), Vec3(1, 1, 1), 0.0);
  REQUIRE(oriented_iou(a, far) == 0.0);

  // unit cube vs the same cube rotated 45 degrees: analytic octagon overlap
  const OrientedBox3 c0(Vec3(0, 0, 0), Vec3(1, 1, 1), 0);
  const OrientedBox3 c45(Vec3(0, 0, 0), Vec3(1, 1, 1), kPi / 4);
  const double inter = 2 * std::sqrt(2.0) - 2;
  REQUIRE(oriented_iou(c0, c45) ==
          Catch::Approx(inter / (2 - inter)).margin(1e-9));
  REQUIRE(std::abs(oriented_iou(c0, c45) - iou_mc_oracle(c0, c45, 100000, 7)) <
          0.01);
}

TEST_CASE("oriented IoU matches the Monte-Carlo oracle on random pairs") {
  Rng rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const OrientedBox3 a(
        Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)),
        Vec3(rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5)),
        rng.uniform(-kPi, kPi));
    const OrientedBox3 b(
        a.center + Vec3(rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                        rng.uniform(-0.4, 0.4)),
        Vec3(rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5)),
        rng.uniform(-kPi, kPi));
    const double iou = oriented_iou(a, b);
    REQUIRE(iou == Catch::Approx(oriented_iou(b, a)).margin(1e-9));
    REQUIRE(std::abs(iou - iou_mc_oracle(a, b, 100000, 100 + trial)) < 0.01);
  }
}

TEST_CASE("oriented IoU rigid invariance") {
  Rng rng(31);
  const OrientedBox3 a(Vec3(0.2, 0.1, 0.4), Vec3(1, 0.5, 0.7), 0.3);
  const OrientedBox3 b(Vec3(0.5, -0.2, 0.6), Vec3(0.8, 0.9, 0.5), -0.7);
  const double base = oriented_iou(a, b);
  for (int trial = 0; trial < 5; ++trial) {
    const double yaw = rng.uniform(-kPi, kPi);
    const Vec3 t(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-2, 2));
    const OrientedBox3 ta(rotate_z(a.center, yaw) + t, a.size, a.yaw + yaw);
    const OrientedBox3 tb(rotate_z(b.center, yaw) + t, b.size, b.yaw + yaw);
    REQUIRE(oriented_iou(ta, tb) == Catch::Approx(base).margin(1e-9));
  }
}

TEST_CASE("farthest point sampling") {
  PointCloud line(std::vector<Vec3>{Vec3(0, 0, 0), Vec3(1, 0, 0),
                                    Vec3(2, 0, 0), Vec3(3, 0, 0)});
  REQUIRE(farthest_point_sample(line, 2, 0) == std::vector<int>{0, 3});
  REQUIRE(farthest_point_sample(line, 4, 0).size() == 4);
  REQUIRE_THROWS(farthest_point_sample(line, 5, 0));

  // reference greedy oracle
  Rng rng(77);
  PointCloud pc = random_cloud(100, rng);
  const std::vector<int> got = farthest_point_sample(pc, 10, 3);
  std::vector<int> ref{3};
  std::vector<double> mind(100, std::numeric_limits<double>::infinity());
  while (static_cast<int>(ref.size()) < 10) {
    for (int i = 0; i < 100; ++i)
      mind[i] = std::min(mind[i],
                         (pc.points[i] - pc.points[ref.back()]).squaredNorm());
    int best = 0;
    for (int i = 1; i < 100; ++i)
      if (mind[i] > mind[best]) best = i;
    ref.push_back(best);
  }
  REQUIRE(got == ref);
}

TEST_CASE("ball query") {
  Rng rng(13);
  PointCloud pc = random_cloud(200, rng);
  const Vec3 center(0.1, 0.2, -0.1);

  // radius beyond the cloud diameter returns everything (up to max_count)
  REQUIRE(ball_query(pc, center, 100.0, 500).size() == 200);
  REQUIRE(ball_query(pc, center, 100.0, 7).size() == 7);

  // isolated point
  PointCloud iso = pc;
  iso.points.push_back(Vec3(50, 50, 50));
  const auto only = ball_query(iso, Vec3(50, 50, 50), 0.001, 10);
  REQUIRE(only == std::vector<int>{200});

  // linear-scan oracle: same membership, ascending distance, ties by index
  const double r = 0.5;
  const auto got = ball_query(pc, center, r, 1000);
  std::vector<std::pair<double, int>> ref;
  for (int i = 0; i < 200; ++i) {
    const double d2 = (pc.points[i] - center).squaredNorm();
    if (d2 <= r * r) ref.emplace_back(d2, i);
  }
  std::sort(ref.begin(), ref.end());
  REQUIRE(got.size() == ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(got[i] == ref[i].second);

  // truncated result is a prefix of the full scan result
  const auto trunc = ball_query(pc, center, r, 3);
  for (std::size_t i = 0; i < trunc.size(); ++i) REQUIRE(trunc[i] == got[i]);
}

TEST_CASE("feature interpolation") {
  PointCloud src(std::vector<Vec3>{Vec3(0, 0, 0), Vec3(1, 0, 0),
                                   Vec3(0, 1, 0), Vec3(1, 1, 0)});
  src.features.resize(4, 2);
  src.features << 1, 10, 2, 20, 3, 30, 4, 40;

  // exact coincidence returns the source row exactly
  const Eigen::MatrixXd at_src =
      interpolate_features(src, {Vec3(1, 0, 0)});
  REQUIRE(at_src(0, 0) == 2.0);
  REQUIRE(at_src(0, 1) == 20.0);

  // two sources only: midpoint gets the arithmetic mean
  PointCloud pair(std::vector<Vec3>{Vec3(0, 0, 0), Vec3(2, 0, 0)});
  pair.features.resize(2, 1);
  pair.features << 5, 9;
  const Eigen::MatrixXd mid = interpolate_features(pair, {Vec3(1, 0, 0)});
  REQUIRE(mid(0, 0) == Catch::Approx(7.0).margin(1e-12));

  // random case against the direct formula
  Rng rng(99);
  PointCloud cloud = random_cloud(40, rng);
  cloud.features.resize(40, 3);
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 3; ++j) cloud.features(i, j) = rng.normal();
  const Vec3 q(0.15, -0.22, 0.31);
  const Eigen::MatrixXd got = interpolate_features(cloud, {q});
  std::vector<std::pair<double, int>> d;
  for (int i = 0; i < 40; ++i)
    d.emplace_back((cloud.points[i] - q).squaredNorm(), i);
  std::sort(d.begin(), d.end());
  double wsum = 0;
  Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
  for (int k = 0; k < 3; ++k) {
    const double w = 1.0 / d[k].first;
    wsum += w;
    acc += w * cloud.features.row(d[k].second);
  }
  acc /= wsum;
  REQUIRE((got.row(0) - acc).norm() < 1e-12);

  PointCloud no_feat = random_cloud(5, rng);
  REQUIRE_THROWS(interpolate_features(no_feat, {q}));
}

TEST_CASE("mesh surface sampling") {
  // unit square as two triangles of equal area
  const TriMesh square = make_trimesh(
      {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)},
      {{0, 1, 2}, {0, 2, 3}});

  const SurfaceSample s = sample_mesh_surface_detailed(square, 10000, 42);
  int first = 0;
  for (int t : s.triangle)
    if (t == 0) ++first;
  REQUIRE(std::abs(first / 10000.0 - 0.5) < 0.02);

  REQUIRE(sample_mesh_surface(square, 0, 1).empty());

  for (const Vec3& p : s.cloud.points)
    REQUIRE(test_support::point_mesh_distance(p, square) < 1e-9);

  // deterministic given the seed
  const PointCloud again = sample_mesh_surface(square, 100, 42);
  const PointCloud ref = sample_mesh_surface(square, 100, 42);
  REQUIRE(again.points == ref.points);

  TriMesh empty;
  REQUIRE_THROWS(sample_mesh_surface(empty, 10, 1));
}

TEST_CASE("boxes, angles, quads") {
  REQUIRE(normalize_angle(kPi) == Catch::Approx(-kPi).margin(1e-12));
  REQUIRE(normalize_angle(3 * kPi + 0.1) == Catch::Approx(-kPi + 0.1).margin(1e-12));
  REQUIRE_THROWS(OrientedBox3(Vec3(0, 0, 0), Vec3(0, 1, 1), 0));

  const OrientedBox3 box(Vec3(1, 2, 0.5), Vec3(2, 1, 1), kPi / 2);
  REQUIRE(point_in_box(box, Vec3(1, 2, 0.5)));
  REQUIRE(point_in_box(box, Vec3(1.49, 2.99, 0.99)));
  REQUIRE_FALSE(point_in_box(box, Vec3(1.51, 2, 0.5)));

  WallQuad q;
  q.center = Vec3(0, 0, 1.25);
  q.yaw = 0;
  q.width = 4;
  q.height = 2.5;
  REQUIRE(point_on_quad(q, Vec3(1.9, 0.0, 2.0)));
  REQUIRE_FALSE(point_on_quad(q, Vec3(2.1, 0.0, 2.0)));
  REQUIRE(quad_distance(q, Vec3(0, 1, 1.25)) == Catch::Approx(1.0));
  REQUIRE(quad_distance(q, Vec3(3, 0, 1.25)) == Catch::Approx(1.0));
  REQUIRE(mesh_area(q.mesh()) == Catch::Approx(10.0));
}

TEST_CASE("mesh volume and ray parity") {
  std::vector<Vec3> v;
  std::vector<std::array<int, 3>> t;
  ancs::detail::add_box(v, t, Vec3(-0.5, -0.5, 0), Vec3(0.5, 0.5, 1));
  const TriMesh box = make_trimesh(v, t);
  REQUIRE(mesh_volume(box) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(point_inside_mesh(box, Vec3(0, 0, 0.5)));
  REQUIRE_FALSE(point_inside_mesh(box, Vec3(0, 0, 1.5)));
  REQUIRE_FALSE(point_inside_mesh(box, Vec3(0.7, 0, 0.5)));
}
