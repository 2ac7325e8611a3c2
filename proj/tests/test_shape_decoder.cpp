#include <catch2/catch_amalgamated.hpp>

#include "anchorscene/shape_decoder.hpp"
#include "anchorscene/trainer.hpp"
#include "anchorscene/synth.hpp"
#include "test_support.hpp"

using namespace ancs;

namespace {

// Radial occupancy crossing 0.5 exactly at |p| = radius.
Eigen::VectorXd sphere_field(const std::vector<Vec3>& pts, double radius) {
  Eigen::VectorXd v(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    v(i) = std::clamp(0.5 + (radius - pts[i].norm()), 0.0, 1.0);
  return v;
}

PointCloud sphere_surface_samples(double radius, int n, Rng& rng) {
  PointCloud out;
  for (int i = 0; i < n; ++i) {
    Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    out.points.push_back(radius * dir.normalized());
  }
  return out;
}

int boundary_edges(const TriMesh& mesh) {
  std::map<std::pair<int, int>, int> edges;
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) {
      const int a = t[k], b = t[(k + 1) % 3];
      ++edges[{std::min(a, b), std::max(a, b)}];
    }
  int bad = 0;
  for (const auto& [e, count] : edges)
    if (count != 2) ++bad;
  return bad;
}

}  // namespace

TEST_CASE("shape encoding invariances") {
  Rng rng(3);
  const int fw = 6;
  DenseNet enc = DenseNet::create({3 + 2 * fw, 10, 12},
                                  {Activation::Relu, Activation::Relu}, 5);
  std::vector<Vec3> prior;
  for (int i = 0; i < 20; ++i)
    prior.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                       rng.uniform(-0.5, 0.5));
  Eigen::VectorXd fv(fw), fa(fw);
  for (int i = 0; i < fw; ++i) {
    fv(i) = rng.normal();
    fa(i) = rng.normal();
  }
  const ShapeEmbedding base = encode_shape(prior, {}, fv, fa, enc);

  SECTION("duplicated points do not change the embedding") {
    std::vector<Vec3> doubled = prior;
    doubled.insert(doubled.end(), prior.begin(), prior.end());
    const ShapeEmbedding dup = encode_shape(doubled, {}, fv, fa, enc);
    REQUIRE((dup.f - base.f).norm() == 0.0);
  }
  SECTION("permutation invariance is exact") {
    std::vector<Vec3> shuffled = prior;
    std::reverse(shuffled.begin(), shuffled.end());
    const ShapeEmbedding perm = encode_shape(shuffled, {}, fv, fa, enc);
    REQUIRE((perm.f - base.f).norm() == 0.0);
  }
  SECTION("empty prior falls back to the anchors with a flag") {
    EncodeForward fwd;
    const ShapeEmbedding fb =
        encode_shape_with({}, prior, fv, fa, enc, &fwd);
    REQUIRE(fwd.anchor_fallback);
    REQUIRE((fb.f - base.f).norm() == 0.0);
  }
  SECTION("composition oracle") {
    // per-point forward then channelwise max
    Eigen::MatrixXd outs(12, prior.size());
    for (std::size_t i = 0; i < prior.size(); ++i) {
      Eigen::VectorXd x(3 + 2 * fw);
      x << prior[i], fv, fa;
      DenseNet copy = enc;
      outs.col(i) = copy.forward(x);
    }
    const Eigen::VectorXd expect = outs.rowwise().maxCoeff();
    REQUIRE((base.f - expect).norm() < 1e-12);
  }
}

TEST_CASE("occupancy decoding") {
  Rng rng(7);
  const int ew = 10;
  DenseNet dec = DenseNet::create({ew + 3, 8, 1},
                                  {Activation::Relu, Activation::None}, 9);
  ShapeEmbedding emb;
  emb.f.resize(ew);
  for (int i = 0; i < ew; ++i) emb.f(i) = rng.normal();

  SECTION("zero net gives 0.5 everywhere") {
    DenseNet zero = dec;
    for (auto& l : zero.layers()) {
      l.W.setZero();
      l.b.setZero();
    }
    const Eigen::VectorXd occ =
        decode_occupancy(emb, {Vec3(0, 0, 0), Vec3(0.2, -0.3, 0.1)}, zero);
    REQUIRE(occ(0) == 0.5);
    REQUIRE(occ(1) == 0.5);
  }
  SECTION("batch equals per-query decode") {
    std::vector<Vec3> queries;
    for (int i = 0; i < 9; ++i)
      queries.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                           rng.uniform(-0.5, 0.5));
    const Eigen::VectorXd batch = decode_occupancy(emb, queries, dec);
    for (int i = 0; i < 9; ++i) {
      const Eigen::VectorXd one = decode_occupancy(emb, {queries[i]}, dec);
      REQUIRE(batch(i) == one(0));
    }
  }
  SECTION("out-of-cube queries evaluate but are flagged") {
    DecodeForward fwd;
    decode_occupancy_with(emb, {Vec3(2, 0, 0)}, dec, &fwd);
    REQUIRE(fwd.out_of_cube);
  }
}

TEST_CASE("marching cubes on the analytic sphere") {
  const double radius = 0.4;
  auto field = [&](const std::vector<Vec3>& pts) {
    return sphere_field(pts, radius);
  };
  const ExtractResult res64 = marching_cubes(field, 64, 0.5);
  REQUIRE_FALSE(res64.mesh.empty());
  const double expect = 4.0 / 3.0 * kPi * radius * radius * radius;
  REQUIRE(std::abs(mesh_volume(res64.mesh) - expect) < 0.05 * expect);
  REQUIRE(boundary_edges(res64.mesh) == 0);  // watertight

  // monotone Chamfer improvement over resolution
  Rng rng(5);
  const PointCloud surf = sphere_surface_samples(radius, 2048, rng);
  double prev = std::numeric_limits<double>::infinity();
  for (int res : {16, 32, 64}) {
    const ExtractResult r = marching_cubes(field, res, 0.5);
    PointCloud verts;
    verts.points = r.mesh.vertices;
    const double cd = chamfer_distance(verts, surf);
    REQUIRE(cd < prev);
    prev = cd;
  }
}

TEST_CASE("marching cubes degenerate fields") {
  auto zero_field = [](const std::vector<Vec3>& pts) {
    return Eigen::VectorXd::Zero(pts.size()).eval();
  };
  const ExtractResult r = marching_cubes(zero_field, 16, 0.5);
  REQUIRE(r.mesh.empty());
  REQUIRE(r.empty_surface);
  REQUIRE_THROWS(marching_cubes(zero_field, 4, 0.5));
  REQUIRE_THROWS(marching_cubes(zero_field, 16, 1.5));
}

TEST_CASE("alignment to scene boxes") {
  auto field = [&](const std::vector<Vec3>& pts) {
    return sphere_field(pts, 0.35);
  };
  const TriMesh canonical = marching_cubes(field, 16, 0.5).mesh;
  SECTION("identity box is a no-op") {
    const OrientedBox3 ident(Vec3(0, 0, 0), Vec3(1, 1, 1), 0);
    const TriMesh out = align_to_scene(canonical, ident);
    for (std::size_t i = 0; i < out.vertices.size(); ++i)
      REQUIRE((out.vertices[i] - canonical.vertices[i]).norm() < 1e-15);
  }
  SECTION("topology preserved, round trip recovers vertices") {
    const OrientedBox3 box(Vec3(1.5, -2, 0.4), Vec3(0.8, 1.2, 0.5), 0.9);
    const TriMesh out = align_to_scene(canonical, box);
    REQUIRE(out.vertices.size() == canonical.vertices.size());
    REQUIRE(out.triangles == canonical.triangles);
    for (std::size_t i = 0; i < out.vertices.size(); ++i) {
      const Vec3 back = world_to_canonical(out.vertices[i], box);
      REQUIRE((back - canonical.vertices[i]).norm() < 1e-9);
    }
  }
}

TEST_CASE("occupancy labels partition inside and outside") {
  Rng mesh_rng(3);
  const TriMesh crate = make_category_mesh(Category::BoxCrate, mesh_rng);
  Vec3 lo = crate.vertices[0], hi = lo;
  for (const Vec3& v : crate.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const OrientedBox3 frame(0.5 * (lo + hi), hi - lo, 0);
  const OccupancyLabels labels = make_occupancy_labels(crate, frame, 256, 256, 0.05, 7);
  REQUIRE(labels.queries.size() == 512);
  int inside = 0, disagreements = 0;
  for (std::size_t i = 0; i < labels.queries.size(); ++i) {
    REQUIRE(labels.queries[i].cwiseAbs().maxCoeff() <= 0.5 + 1e-12);
    // cross-check the parity label against the box (crate == its own box);
    // points sitting exactly on a face may land either way
    const Vec3 world = canonical_to_world(labels.queries[i], frame);
    if (labels.inside[i]) ++inside;
    const bool strictly_inside = point_in_box(frame, world, -1e-9);
    const bool strictly_outside = !point_in_box(frame, world, 1e-9);
    if (strictly_inside && !labels.inside[i]) ++disagreements;
    if (strictly_outside && labels.inside[i]) ++disagreements;
  }
  REQUIRE(disagreements == 0);
  REQUIRE(inside > 100);  // near-surface samples straddle the boundary
}

TEST_CASE("a small decoder overfits one sphere shape") {
  // one fixed shape: sphere of radius 0.4 in the canonical cube
  const double radius = 0.4;
  Rng rng(11);
  const int fw = 8;
  ShapeConfig cfg;
  cfg.feature_width = fw;
  cfg.embed_width = 32;
  cfg.enc_hidden = 32;
  cfg.dec_hidden = 48;
  ShapeModel model = ShapeModel::create(cfg, 13);

  ShapeTrainSample sample;
  const PointCloud surf = sphere_surface_samples(radius, 256, rng);
  sample.enc_points = surf.points;
  sample.anchor_points = sample.enc_points;
  sample.f_vote = Eigen::VectorXd::Zero(fw);
  sample.f_anchor = Eigen::VectorXd::Zero(fw);
  for (int i = 0; i < 1024; ++i) {
    Vec3 q(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    if (i % 2 == 0) {  // half the labels hug the surface
      Vec3 dir(rng.normal(), rng.normal(), rng.normal());
      q = (radius * dir.normalized() +
           0.05 * Vec3(rng.normal(), rng.normal(), rng.normal()))
              .cwiseMax(-0.5)
              .cwiseMin(0.5);
    }
    sample.labels.queries.push_back(q);
    sample.labels.inside.push_back(q.norm() < radius ? 1 : 0);
  }

  Rng pick(21);
  for (int step = 0; step < 2000; ++step) {
    GradTape enc_tape = model.enc.zero_tape();
    GradTape dec_tape = model.dec.zero_tape();
    std::vector<int> qidx(128);
    for (int i = 0; i < 128; ++i)
      qidx[i] = static_cast<int>(pick.uniform_index(1024));
    shape_sample_loss(model, sample, qidx, &enc_tape, &dec_tape);
    model.enc.adam_step(enc_tape, 1e-3);
    model.dec.adam_step(dec_tape, 1e-3);
  }

  // mean |occ - indicator| over a 10x10x10 grid
  EncodeForward ef;
  const ShapeEmbedding emb =
      encode_shape_with(sample.enc_points, sample.anchor_points, sample.f_vote,
                        sample.f_anchor, model.enc, &ef);
  std::vector<Vec3> grid;
  for (int x = 0; x < 10; ++x)
    for (int y = 0; y < 10; ++y)
      for (int z = 0; z < 10; ++z)
        grid.emplace_back(-0.45 + 0.1 * x, -0.45 + 0.1 * y, -0.45 + 0.1 * z);
  const Eigen::VectorXd occ = decode_occupancy(emb, grid, model.dec);
  double err = 0;
  for (int i = 0; i < 1000; ++i)
    err += std::abs(occ(i) - (grid[i].norm() < radius ? 1.0 : 0.0)) / 1000.0;
  REQUIRE(err < 0.1);
}
