#include <catch2/catch_amalgamated.hpp>

#include "anchorscene/synth.hpp"
#include "test_support.hpp"

using namespace ancs;

TEST_CASE("scene generation is deterministic per (spec, seed)") {
  SceneSpec spec;
  const Scene a = generate_scene(spec, 4);
  const Scene b = generate_scene(spec, 4);
  REQUIRE(boxes_to_json(a).dump() == boxes_to_json(b).dump());
  REQUIRE(a.layout_corners.size() == b.layout_corners.size());
  const ScanResult sa = simulate_partial_scan(a, spec, 4);
  const ScanResult sb = simulate_partial_scan(b, spec, 4);
  REQUIRE(encode_ply(sa.cloud) == encode_ply(sb.cloud));
  REQUIRE(sa.instance_ids == sb.instance_ids);

  const Scene c = generate_scene(spec, 5);
  REQUIRE(boxes_to_json(a).dump() != boxes_to_json(c).dump());
}

TEST_CASE("placement honors the clearance") {
  SceneSpec spec;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene scene = generate_scene(spec, seed);
    for (std::size_t i = 0; i < scene.objects.size(); ++i)
      for (std::size_t j = i + 1; j < scene.objects.size(); ++j) {
        // min distance between footprint vertices (conservative check via
        // the actual meshes' BEV vertex distance)
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& p : scene.objects[i].mesh.vertices)
          for (const Vec3& q : scene.objects[j].mesh.vertices)
            best = std::min(best, (Vec2(p.x(), p.y()) - Vec2(q.x(), q.y())).norm());
        REQUIRE(best >= spec.clearance - 1e-9);
      }
  }
}

TEST_CASE("ground-truth boxes contain their meshes") {
  SceneSpec spec;
  const Scene scene = generate_scene(spec, 7);
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const PointCloud samples =
        sample_mesh_surface(scene.objects[i].mesh, 2048, 99 + i);
    int inside = 0;
    for (const Vec3& p : samples.points)
      if (point_in_box(scene.objects[i].box, p, 1e-9)) ++inside;
    REQUIRE(inside >= static_cast<int>(0.99 * samples.size()));
  }
}

TEST_CASE("overly dense scene specs fail loudly") {
  SceneSpec spec;
  spec.clearance = 10.0;
  spec.objects_min = spec.objects_max = 4;
  REQUIRE_THROWS_WITH(generate_scene(spec, 1),
                      Catch::Matchers::ContainsSubstring("scene too dense"));
}

TEST_CASE("noise-free scan lies exactly on the surfaces") {
  SceneSpec spec;
  spec.noise_sigma = 0;
  spec.bottom_cull = false;
  spec.sectors = 0;
  const Scene scene = generate_scene(spec, 3);
  const ScanResult scan = simulate_partial_scan(scene, spec, 3);
  REQUIRE(scan.cloud.size() > 1000);
  for (std::size_t i = 0; i < scan.cloud.size(); i += 7) {
    const std::int32_t id = scan.instance_ids[i];
    double dist;
    if (id >= kWallIdBase)
      dist = test_support::point_mesh_distance(
          scan.cloud.points[i], scene.walls[id - kWallIdBase].mesh());
    else
      dist = test_support::point_mesh_distance(scan.cloud.points[i],
                                               scene.objects[id].mesh);
    REQUIRE(dist < 1e-9);
  }
}

TEST_CASE("bottom culling removes downward object faces") {
  SceneSpec spec;
  spec.bottom_cull = true;
  spec.sectors = 0;
  const Scene scene = generate_scene(spec, 6);
  const ScanResult scan = simulate_partial_scan(scene, spec, 6);
  for (std::size_t i = 0; i < scan.cloud.size(); ++i)
    if (scan.instance_ids[i] < kWallIdBase)
      REQUIRE(scan.normals[i].z() >= -0.9);
}

TEST_CASE("density doubling doubles the point count") {
  SceneSpec spec;
  spec.noise_sigma = 0;
  spec.bottom_cull = false;
  spec.sectors = 0;
  const Scene scene = generate_scene(spec, 2);
  const ScanResult base = simulate_partial_scan(scene, spec, 2);
  SceneSpec dense = spec;
  dense.density *= 2;
  const ScanResult doubled = simulate_partial_scan(scene, dense, 2);
  const double ratio =
      static_cast<double>(doubled.cloud.size()) / base.cloud.size();
  REQUIRE(std::abs(ratio - 2.0) < 0.1);
}

TEST_CASE("instance labels agree with the ground-truth geometry") {
  SceneSpec spec;
  spec.noise_sigma = 0;
  const Scene scene = generate_scene(spec, 9);
  const ScanResult scan = simulate_partial_scan(scene, spec, 9);
  for (std::size_t i = 0; i < scan.cloud.size(); i += 3) {
    const std::int32_t id = scan.instance_ids[i];
    if (id < kWallIdBase)
      REQUIRE(point_in_box(scene.objects[id].box, scan.cloud.points[i], 1e-6));
    else
      REQUIRE(point_on_quad(scene.walls[id - kWallIdBase],
                            scan.cloud.points[i], 1e-6, 1e-6));
  }
}

TEST_CASE("sector occlusion removes an angular wedge") {
  SceneSpec spec;
  spec.sectors = 2;
  spec.noise_sigma = 0;
  const Scene scene = generate_scene(spec, 11);
  const ScanResult with = simulate_partial_scan(scene, spec, 11);
  SceneSpec no_occ = spec;
  no_occ.sectors = 0;
  const ScanResult without = simulate_partial_scan(scene, no_occ, 11);
  REQUIRE(with.cloud.size() < without.cloud.size());
}

TEST_CASE("corpus round trip through the dataset layout") {
  const fs::path root = fs::temp_directory_path() / "ancs_corpus_test";
  fs::remove_all(root);
  Config config = Config::defaults();
  config.set("scan.density", "40");
  SceneSpec spec = SceneSpec::from_config(config);
  generate_corpus(root, spec, 2, config);

  REQUIRE(fs::exists(root / "corpus.json"));
  const auto ids = corpus_scene_ids(root);
  REQUIRE(ids == std::vector<std::string>{"scene_0000", "scene_0001"});

  const LoadedSceneGt loaded = load_scene_gt(root / "scenes" / ids[0]);
  const Scene expect = generate_scene(spec, 0);
  const ScanResult scan = simulate_partial_scan(expect, spec, 0);
  REQUIRE(loaded.scan.points == scan.cloud.points);
  REQUIRE(loaded.instance_ids == scan.instance_ids);
  REQUIRE(loaded.boxes.size() == expect.objects.size());
  REQUIRE(loaded.walls.size() == expect.walls.size());
  REQUIRE(loaded.layout_corners.size() == expect.layout_corners.size());
  for (const LoadedBox& b : loaded.boxes) {
    REQUIRE(fs::exists(b.mesh_path));
    const TriMesh mesh = read_obj(b.mesh_path);
    REQUIRE_FALSE(mesh.empty());
  }
  fs::remove_all(root);
}

TEST_CASE("category meshes are closed and sane") {
  for (int c = 0; c < kNumCategories; ++c) {
    Rng rng(40 + c);
    const TriMesh mesh = make_category_mesh(static_cast<Category>(c), rng);
    REQUIRE_FALSE(mesh.empty());
    REQUIRE(mesh_volume(mesh) > 0.001);
    // every edge shared by exactly two triangles (closed surface)
    std::map<std::pair<int, int>, int> edges;
    for (const auto& t : mesh.triangles)
      for (int k = 0; k < 3; ++k)
        ++edges[{std::min(t[k], t[(k + 1) % 3]),
                 std::max(t[k], t[(k + 1) % 3])}];
    for (const auto& [e, count] : edges) REQUIRE(count == 2);
  }
}
