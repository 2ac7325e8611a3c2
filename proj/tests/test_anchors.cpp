#include <catch2/catch_amalgamated.hpp>

#include "anchorscene/anchors.hpp"
#include "anchorscene/synth.hpp"
#include "test_support.hpp"

using namespace ancs;

namespace {

DenseNet deform_net(int fw, std::uint64_t seed, int hidden = 8) {
  return DenseNet::create({3 + fw, hidden, 3},
                          {Activation::Relu, Activation::Tanh}, seed);
}

Eigen::VectorXd random_feature(int n, Rng& rng) {
  Eigen::VectorXd f(n);
  for (int i = 0; i < n; ++i) f(i) = rng.normal();
  return f;
}

}  // namespace

TEST_CASE("zero deformation net translates the template to the center") {
  const PointCloud tmpl = sphere_template(18);
  DenseNet net = deform_net(16, 1);
  for (auto& l : net.layers()) {
    l.W.setZero();
    l.b.setZero();
  }
  const Vec3 c(5, 0, 0);
  const AnchorSet a = deform_anchors(tmpl, Eigen::VectorXd::Zero(16), c, net);
  for (int j = 0; j < 18; ++j) {
    REQUIRE(a.offsets[j].norm() == 0.0);
    REQUIRE((a.deformed.points[j] - tmpl.points[j] - c).norm() == 0.0);
  }
}

TEST_CASE("deformation structural invariants over random nets") {
  Rng rng(2);
  const PointCloud tmpl = sphere_template(18);
  for (int trial = 0; trial < 100; ++trial) {
    const int fw = 4 + static_cast<int>(rng.uniform_index(24));
    DenseNet net = deform_net(fw, 1000 + trial, 4 + trial % 13);
    // scale weights up so tanh saturates in some trials
    for (auto& l : net.layers()) l.W *= rng.uniform(0.2, 6.0);
    const Eigen::VectorXd f = random_feature(fw, rng);
    const Vec3 c(rng.normal(), rng.normal(), rng.normal());
    const AnchorSet a = deform_anchors(tmpl, f, c, net);
    for (int j = 0; j < 18; ++j) {
      // offsets strictly inside (-1, 1)
      for (int k = 0; k < 3; ++k) REQUIRE(std::abs(a.offsets[j][k]) < 1.0);
      // reconstruction identity, bit-exact in the documented op order:
      // deformed is exactly (template + offsets) + center ...
      for (int k = 0; k < 3; ++k) {
        const double recomposed = (tmpl.points[j][k] + a.offsets[j][k]) + c[k];
        REQUIRE(a.deformed.points[j][k] == recomposed);
      }
      // ... and the subtractive form recovers the template to the rounding
      // of the two additions (<= 2 ulp)
      const Vec3 back = a.deformed.points[j] - a.offsets[j] - c;
      REQUIRE((back - tmpl.points[j]).cwiseAbs().maxCoeff() < 1e-14);
      // range bound
      REQUIRE((a.deformed.points[j] - c).cwiseAbs().maxCoeff() < 2.0);
    }
  }
}

TEST_CASE("deform width validation") {
  const PointCloud tmpl = sphere_template(6);
  DenseNet wrong = DenseNet::create({8, 4, 3}, {Activation::Relu, Activation::Tanh}, 3);
  REQUIRE_THROWS(deform_anchors(tmpl, Eigen::VectorXd::Zero(16), Vec3::Zero(), wrong));
  DenseNet no_tanh = DenseNet::create({19, 4, 3}, {Activation::Relu, Activation::None}, 3);
  REQUIRE_THROWS(deform_anchors(tmpl, Eigen::VectorXd::Zero(16), Vec3::Zero(), no_tanh));
}

TEST_CASE("anchor loss is zero on coincident sets and differentiable") {
  Rng rng(5);
  const PointCloud tmpl = sphere_template(18);
  DenseNet net = deform_net(12, 7);
  const Eigen::VectorXd f = random_feature(12, rng);
  const AnchorSet a = deform_anchors(tmpl, f, Vec3(0.2, 0.3, 0.1), net);
  REQUIRE(anchor_loss(a, a.deformed) == 0.0);

  PointCloud gt = test_support::random_cloud(64, rng);
  const double err = grad_check(
      net,
      [&](DenseNet& n, GradTape* tape) {
        DeformForward fwd;
        const AnchorSet set =
            deform_anchors(tmpl, f, Vec3(0.2, 0.3, 0.1), n, &fwd);
        const double loss = anchor_loss(set, gt);
        if (tape) {
          const Eigen::MatrixXd d = chamfer_backward(set.deformed, gt, 1.0);
          deform_backward(d, fwd, n, *tape);
        }
        return loss;
      },
      1e-6);
  REQUIRE(err < 1e-4);
}

TEST_CASE("200 steps of anchor-loss descent shrink the loss tenfold") {
  Rng rng(11);
  const PointCloud tmpl = sphere_template(18);
  const int fw = 16;
  DenseNet net = deform_net(fw, 23, 32);
  const Eigen::VectorXd f = random_feature(fw, rng);

  // one fixed chair-like target surface
  Scene scene;
  SceneSpec spec;
  Rng mesh_rng(3);
  const TriMesh chair = make_category_mesh(Category::Chair, mesh_rng);
  const PointCloud gt = sample_mesh_surface(chair, 256, 5);

  double first = 0, last = 0;
  for (int step = 0; step < 200; ++step) {
    DeformForward fwd;
    const AnchorSet a = deform_anchors(tmpl, f, Vec3(0, 0, 0.4), net, &fwd);
    const double loss = anchor_loss(a, gt);
    if (step == 0) first = loss;
    last = loss;
    GradTape tape = net.zero_tape();
    const Eigen::MatrixXd d = chamfer_backward(a.deformed, gt, 1.0);
    deform_backward(d, fwd, net, tape);
    adam_step(net, tape, 5e-3);
  }
  REQUIRE(last <= first / 10.0);
}

TEST_CASE("anchor feature grouping") {
  Rng rng(13);
  SECTION("constant seed features with an identity refiner pass through") {
    SeedSet seeds;
    seeds.positions = test_support::random_cloud(30, rng);
    Eigen::VectorXd v = random_feature(5, rng);
    seeds.features = v.transpose().replicate(30, 1);
    DenseNet ident = DenseNet::create({5, 5}, {Activation::None}, 1);
    ident.layers()[0].W = Eigen::MatrixXd::Identity(5, 5);
    ident.layers()[0].b.setZero();
    AnchorSet a;
    a.deformed = test_support::random_cloud(18, rng);
    const Eigen::VectorXd f = group_anchor_features(seeds, a, ident);
    REQUIRE((f - v).norm() < 1e-12);
  }
  SECTION("anchor order does not matter") {
    SeedSet seeds;
    seeds.positions = test_support::random_cloud(30, rng);
    seeds.features = Eigen::MatrixXd::Random(30, 6);
    DenseNet fuse = DenseNet::create({6, 6}, {Activation::Relu}, 5);
    AnchorSet a;
    a.deformed = test_support::random_cloud(12, rng);
    const Eigen::VectorXd f1 = group_anchor_features(seeds, a, fuse);
    std::reverse(a.deformed.points.begin(), a.deformed.points.end());
    const Eigen::VectorXd f2 = group_anchor_features(seeds, a, fuse);
    REQUIRE((f1 - f2).norm() < 1e-12);
  }
  SECTION("random fixture equals the step-by-step composition") {
    SeedSet seeds;
    seeds.positions = test_support::random_cloud(25, rng);
    seeds.features = Eigen::MatrixXd::Random(25, 4);
    DenseNet fuse = DenseNet::create({4, 7, 4}, {Activation::Relu, Activation::None}, 9);
    AnchorSet a;
    a.deformed = test_support::random_cloud(10, rng);
    const Eigen::VectorXd got = group_anchor_features(seeds, a, fuse);

    PointCloud src = seeds.positions;
    src.features = seeds.features;
    const Eigen::MatrixXd interp =
        interpolate_features(src, a.deformed.points);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(4);
    for (int j = 0; j < 10; ++j) {
      DenseNet copy = fuse;
      mean += copy.forward(interp.row(j).transpose());
    }
    mean /= 10.0;
    REQUIRE((got - mean).norm() < 1e-12);
  }
}

TEST_CASE("anchor-guided instance point sampling") {
  Rng rng(17);
  SECTION("no scan point within the radius gives an empty prior") {
    PointCloud scan(std::vector<Vec3>{Vec3(10, 10, 10), Vec3(11, 11, 11)});
    AnchorSet a;
    a.deformed = sphere_template(18);
    const InstanceSampleResult r = sample_instance_points(scan, a, 2);
    REQUIRE(r.indices.empty());
  }
  SECTION("isolated cluster is captured exactly, stable at iteration two") {
    // 50 points hugging the anchors, the rest far beyond twice the radius
    AnchorSet a;
    a.deformed = sphere_template(18);
    PointCloud scan;
    for (int i = 0; i < 50; ++i) {
      const Vec3 dir(rng.normal(), rng.normal(), rng.normal());
      scan.points.push_back(a.deformed.points[i % 18] +
                            0.05 * dir.normalized());
    }
    for (int i = 0; i < 40; ++i)
      scan.points.push_back(Vec3(30, 0, 0) +
                            Vec3(rng.normal(), rng.normal(), rng.normal()));
    const InstanceSampleResult r1 = sample_instance_points(scan, a, 1);
    const InstanceSampleResult r2 = sample_instance_points(scan, a, 2);
    std::vector<int> expect(50);
    for (int i = 0; i < 50; ++i) expect[i] = i;
    REQUIRE(r1.indices == expect);
    REQUIRE(r2.indices == expect);
  }
  SECTION("prior is always a subset of the scan and monotone in iterations") {
    PointCloud scan = test_support::random_cloud(300, rng, 1.5);
    AnchorSet a;
    a.deformed = test_support::random_cloud(18, rng, 0.5);
    const InstanceSampleResult r1 = sample_instance_points(scan, a, 1);
    const InstanceSampleResult r2 = sample_instance_points(scan, a, 2);
    REQUIRE(std::includes(r2.indices.begin(), r2.indices.end(),
                          r1.indices.begin(), r1.indices.end()));
    for (int i : r2.indices) REQUIRE(i < 300);
  }
  SECTION("collapsed anchors trigger the radius floor") {
    AnchorSet a;
    a.deformed.points.assign(18, Vec3(0, 0, 0));
    PointCloud scan(std::vector<Vec3>{Vec3(0.005, 0, 0), Vec3(3, 3, 3)});
    const InstanceSampleResult r = sample_instance_points(scan, a, 2, 0.02);
    REQUIRE(r.degenerate_radius);
    REQUIRE(r.radius == 0.02);
    REQUIRE(r.indices == std::vector<int>{0});
  }
}

TEST_CASE("augmented cloud appends the anchors") {
  Rng rng(19);
  PointCloud scan = test_support::random_cloud(10, rng);
  AnchorSet a;
  a.deformed = test_support::random_cloud(5, rng);
  const PointCloud aug = augmented_cloud(scan, a);
  REQUIRE(aug.size() == 15);
  REQUIRE(aug.points[12] == a.deformed.points[2]);
}
