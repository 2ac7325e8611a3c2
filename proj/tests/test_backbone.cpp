#include <catch2/catch_amalgamated.hpp>

#include "anchorscene/backbone.hpp"
#include "test_support.hpp"

using namespace ancs;

namespace {

SaStack small_stack(int in_feat, std::uint64_t seed) {
  SaStack s;
  s.level1 = DenseNet::create({3 + in_feat, 8, 8},
                              {Activation::Relu, Activation::Relu}, seed);
  s.level2 = DenseNet::create({3 + 8, 16, 128},
                              {Activation::Relu, Activation::Relu}, seed + 1);
  return s;
}

}  // namespace

TEST_CASE("set abstraction on a single point") {
  DenseNet net = DenseNet::create({3, 4, 5}, {Activation::Relu, Activation::Relu}, 9);
  PointCloud one(std::vector<Vec3>{Vec3(0.4, -0.2, 0.7)});
  const SeedSet out = set_abstraction(one, 1, 0.3, net);
  REQUIRE(out.positions.size() == 1);
  // the only neighborhood member is the centroid itself -> relative (0,0,0)
  NetCache cache;
  const Eigen::MatrixXd expect = net.forward_batch(Vec3(0, 0, 0), cache);
  REQUIRE((out.features.row(0).transpose() - expect.col(0)).norm() == 0.0);
}

TEST_CASE("duplicate points do not change max-pooled features") {
  DenseNet net = DenseNet::create({3, 6, 4}, {Activation::Relu, Activation::Relu}, 2);
  Rng rng(4);
  PointCloud pc = test_support::random_cloud(20, rng, 0.05);
  const SeedSet single = set_abstraction(pc, 1, 1.0, net, 64);
  PointCloud doubled = pc;
  doubled.points.insert(doubled.points.end(), pc.points.begin(), pc.points.end());
  const SeedSet dup = set_abstraction(doubled, 1, 1.0, net, 64);
  REQUIRE((single.features - dup.features).norm() < 1e-12);
}

TEST_CASE("dual branch encoder contracts") {
  Rng rng(6);
  PointCloud scan = test_support::random_cloud(1400, rng, 2.0);
  BackboneConfig cfg;
  cfg.min_points = 1024;
  cfg.level1_centroids = 128;
  cfg.level2_centroids = 32;
  SaStack obj = small_stack(0, 100), wall = small_stack(0, 200);

  auto [obj_seeds, wall_seeds] = dual_branch_encode(scan, obj, wall, cfg);
  REQUIRE(obj_seeds.features.cols() == 128);
  REQUIRE(wall_seeds.features.cols() == 128);
  REQUIRE(obj_seeds.positions.size() == 32);

  // deterministic
  auto [o2, w2] = dual_branch_encode(scan, obj, wall, cfg);
  REQUIRE((obj_seeds.features - o2.features).norm() == 0.0);

  // seed positions are a subset of the scan, exactly
  for (const Vec3& p : obj_seeds.positions.points) {
    bool found = false;
    for (const Vec3& q : scan.points)
      if (p == q) {
        found = true;
        break;
      }
    REQUIRE(found);
  }

  PointCloud tiny = test_support::random_cloud(100, rng);
  REQUIRE_THROWS_WITH(dual_branch_encode(tiny, obj, wall, cfg),
                      Catch::Matchers::ContainsSubstring("insufficient points"));
}

TEST_CASE("permutation invariance of the encoder") {
  Rng rng(8);
  PointCloud scan = test_support::random_cloud(1200, rng, 2.0);
  BackboneConfig cfg;
  cfg.level1_centroids = 96;
  cfg.level2_centroids = 24;
  SaStack obj = small_stack(0, 300), wall = small_stack(0, 400);
  auto [seeds_a, wa] = dual_branch_encode(scan, obj, wall, cfg);

  // shuffle the points
  PointCloud shuffled = scan;
  Rng perm(99);
  for (std::size_t i = shuffled.points.size(); i > 1; --i)
    std::swap(shuffled.points[i - 1], shuffled.points[perm.uniform_index(i)]);
  auto [seeds_b, wb] = dual_branch_encode(shuffled, obj, wall, cfg);

  REQUIRE(seeds_a.positions.size() == seeds_b.positions.size());
  for (std::size_t i = 0; i < seeds_a.positions.size(); ++i) {
    REQUIRE((seeds_a.positions.points[i] - seeds_b.positions.points[i]).norm() <
            1e-12);
    REQUIRE((seeds_a.features.row(i) - seeds_b.features.row(i)).norm() < 1e-9);
  }
}

TEST_CASE("set abstraction backward routes through max-pool winners") {
  // finite-difference check through one level with input features
  Rng rng(21);
  PointCloud pts = test_support::random_cloud(40, rng);
  Eigen::MatrixXd feats(3, 40);
  for (int i = 0; i < feats.size(); ++i) feats(i % 3, i / 3) = rng.normal();
  SaLevelPlan plan = make_sa_plan(pts, 8, 0.8, 6);
  DenseNet net = DenseNet::create({6, 8, 5}, {Activation::Relu, Activation::Tanh}, 77);

  GradTape tape = net.zero_tape();
  Eigen::MatrixXd d_feat;
  {
    SaForward fwd = sa_forward(pts.points, &feats, plan, net);
    const Eigen::MatrixXd ones =
        Eigen::MatrixXd::Ones(fwd.features.rows(), fwd.features.cols());
    d_feat = sa_backward(ones, fwd, net, tape);
  }
  auto loss = [&]() {
    SaForward fwd = sa_forward(pts.points, &feats, plan, net);
    return fwd.features.sum();
  };
  test_support::ParamSet ps;
  ps.add_net(net, tape);
  REQUIRE(test_support::fd_max_err(ps, loss, 1e-6) < 1e-6);

  // input-feature gradient by direct perturbation
  const double eps = 1e-6;
  for (int trial = 0; trial < 5; ++trial) {
    const int r = static_cast<int>(rng.uniform_index(3));
    const int c = static_cast<int>(rng.uniform_index(40));
    const double saved = feats(r, c);
    feats(r, c) = saved + eps;
    const double up = loss();
    feats(r, c) = saved - eps;
    const double dn = loss();
    feats(r, c) = saved;
    REQUIRE(std::abs((up - dn) / (2 * eps) - d_feat(r, c)) < 1e-5);
  }
}
