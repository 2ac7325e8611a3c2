#include <catch2/catch_amalgamated.hpp>

#include "anchorscene/proposal.hpp"
#include "test_support.hpp"

using namespace ancs;

namespace {

SeedSet make_seeds(int n, int width, Rng& rng, double extent = 1.0) {
  SeedSet seeds;
  seeds.positions = test_support::random_cloud(n, rng, extent);
  seeds.features.resize(n, width);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < width; ++j) seeds.features(i, j) = rng.normal();
  return seeds;
}

}  // namespace

TEST_CASE("vote with a zero net keeps seeds in place") {
  Rng rng(1);
  SeedSet seeds = make_seeds(12, 8, rng);
  DenseNet net = DenseNet::create({8, 4, 11}, {Activation::Relu, Activation::None}, 3);
  for (auto& l : net.layers()) {
    l.W.setZero();
    l.b.setZero();
  }
  const VoteSet votes = vote(seeds, net);
  REQUIRE(votes.positions.points == seeds.positions.points);
  REQUIRE((votes.features - seeds.features).norm() == 0.0);
}

TEST_CASE("vote displacement equals the net output") {
  Rng rng(2);
  SeedSet seeds = make_seeds(10, 6, rng);
  DenseNet net = DenseNet::create({6, 8, 9}, {Activation::Relu, Activation::None}, 5);
  const VoteSet votes = vote(seeds, net);
  for (int i = 0; i < 10; ++i) {
    DenseNet copy = net;
    const Eigen::VectorXd out = copy.forward(seeds.features.row(i).transpose());
    REQUIRE((votes.positions.points[i] - seeds.positions.points[i] -
             Vec3(out(0), out(1), out(2)))
                .norm() < 1e-12);
    REQUIRE((votes.features.row(i) - seeds.features.row(i) -
             out.tail(6).transpose())
                .norm() < 1e-12);
  }
  SeedSet bad = make_seeds(4, 5, rng);
  REQUIRE_THROWS(vote(bad, net));
}

TEST_CASE("clustering identical votes shares one center") {
  Rng rng(3);
  VoteSet votes;
  for (int i = 0; i < 8; ++i) {
    votes.positions.points.emplace_back(0.5, -0.25, 1.0);
    votes.source_seed.push_back(i);
  }
  votes.features = Eigen::MatrixXd::Random(8, 4);
  DenseNet pool = DenseNet::create({4, 4}, {Activation::Relu}, 7);
  const auto cands = cluster_votes(votes, 3, 0.3, pool, 16);
  REQUIRE(cands.size() == 3);
  for (const Candidate& c : cands)
    REQUIRE((c.center - Vec3(0.5, -0.25, 1.0)).norm() < 1e-12);
}

TEST_CASE("two separated blobs cluster to their means") {
  Rng rng(4);
  VoteSet votes;
  Vec3 mean_a = Vec3::Zero(), mean_b = Vec3::Zero();
  for (int i = 0; i < 10; ++i) {
    const Vec3 p = Vec3(0, 0, 0) + 0.05 * Vec3(rng.normal(), rng.normal(), rng.normal());
    votes.positions.points.push_back(p);
    mean_a += p / 10;
  }
  for (int i = 0; i < 10; ++i) {
    const Vec3 p = Vec3(5, 0, 0) + 0.05 * Vec3(rng.normal(), rng.normal(), rng.normal());
    votes.positions.points.push_back(p);
    mean_b += p / 10;
  }
  votes.features = Eigen::MatrixXd::Random(20, 4);
  for (int i = 0; i < 20; ++i) votes.source_seed.push_back(i);
  DenseNet pool = DenseNet::create({4, 4}, {Activation::Relu}, 7);
  const auto cands = cluster_votes(votes, 2, 0.3, pool, 32);
  REQUIRE(cands.size() == 2);
  // one candidate per blob (order by x)
  std::vector<Vec3> centers{cands[0].center, cands[1].center};
  std::sort(centers.begin(), centers.end(),
            [](const Vec3& a, const Vec3& b) { return a.x() < b.x(); });
  REQUIRE((centers[0] - mean_a).norm() < 1e-9);
  REQUIRE((centers[1] - mean_b).norm() < 1e-9);
}

TEST_CASE("member lists equal the ball query contract") {
  Rng rng(5);
  VoteSet votes;
  votes.positions = test_support::random_cloud(50, rng);
  votes.features = Eigen::MatrixXd::Random(50, 4);
  for (int i = 0; i < 50; ++i) votes.source_seed.push_back(i);
  const ClusterPlan plan = make_cluster_plan(votes, 6, 0.4, 12);
  for (std::size_t c = 0; c < plan.candidate_votes.size(); ++c) {
    const auto expect = ball_query(
        votes.positions, votes.positions.points[plan.candidate_votes[c]], 0.4, 12);
    REQUIRE(plan.members[c] == expect);
  }
}

TEST_CASE("with zero offsets cluster centers equal seed neighborhood means") {
  Rng rng(6);
  SeedSet seeds = make_seeds(40, 4, rng);
  DenseNet zero_net = DenseNet::create({4, 7}, {Activation::None}, 1);
  zero_net.layers()[0].W.setZero();
  zero_net.layers()[0].b.setZero();
  const VoteSet votes = vote(seeds, zero_net);
  DenseNet pool = DenseNet::create({4, 4}, {Activation::Relu}, 7);
  ClusterPlan plan = make_cluster_plan(votes, 5, 0.5, 16);
  const auto cands = cluster_votes_with(votes, plan, pool, nullptr);
  for (std::size_t c = 0; c < cands.size(); ++c) {
    Vec3 mean = Vec3::Zero();
    for (int m : plan.members[c]) mean += seeds.positions.points[m];
    mean /= static_cast<double>(plan.members[c].size());
    REQUIRE((cands[c].center - mean).norm() == 0.0);
  }
}

TEST_CASE("vote loss") {
  Rng rng(7);
  SeedSet seeds = make_seeds(6, 4, rng);
  SeedLabels labels;
  labels.instance.assign(6, -1);
  labels.center.assign(6, Vec3::Zero());

  VoteSet votes;
  votes.positions = seeds.positions;
  votes.features = seeds.features;
  for (int i = 0; i < 6; ++i) votes.source_seed.push_back(i);

  SECTION("no object seeds -> zero with flag") {
    const VoteLossResult r = vote_loss(votes, labels);
    REQUIRE(r.value == 0.0);
    REQUIRE(r.no_object_seeds);
  }
  SECTION("votes exactly at centers -> zero") {
    labels.instance[2] = 0;
    labels.center[2] = votes.positions.points[2];
    const VoteLossResult r = vote_loss(votes, labels);
    REQUIRE(r.value == 0.0);
    REQUIRE_FALSE(r.no_object_seeds);
  }
  SECTION("single seed one meter from center gives 1.0") {
    labels.instance[3] = 0;
    labels.center[3] = votes.positions.points[3] + Vec3(1, 0, 0);
    REQUIRE(vote_loss(votes, labels).value == Catch::Approx(1.0));
  }
  SECTION("random fixture matches the direct formula") {
    for (int i = 0; i < 6; ++i) {
      labels.instance[i] = i % 2;
      labels.center[i] = Vec3(rng.normal(), rng.normal(), rng.normal());
    }
    double expect = 0;
    for (int i = 0; i < 6; ++i) {
      const Vec3 d = votes.positions.points[i] - labels.center[i];
      expect += std::abs(d.x()) + std::abs(d.y()) + std::abs(d.z());
    }
    expect /= 6;
    REQUIRE(vote_loss(votes, labels).value == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("seed labeling by boxes picks the lowest-index containing box") {
  SeedSet seeds;
  seeds.positions.points = {Vec3(0, 0, 0.5), Vec3(5, 5, 0.5)};
  seeds.features = Eigen::MatrixXd::Zero(2, 1);
  std::vector<OrientedBox3> boxes{
      OrientedBox3(Vec3(0, 0, 0.5), Vec3(2, 2, 2), 0),
      OrientedBox3(Vec3(0.1, 0, 0.5), Vec3(2, 2, 2), 0)};
  const SeedLabels labels = label_seeds_by_boxes(seeds, boxes);
  REQUIRE(labels.instance[0] == 0);
  REQUIRE(labels.instance[1] == -1);
  REQUIRE(labels.center[0] == boxes[0].center);
}
