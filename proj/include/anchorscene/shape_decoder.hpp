#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "anchorscene/anchors.hpp"
#include "anchorscene/geometry.hpp"
#include "anchorscene/marching_cubes_tables.hpp"
#include "anchorscene/nnet.hpp"

namespace ancs {

struct ShapeEmbedding {
  Eigen::VectorXd f;  // f_shape
};

// ---------------------------------------------------------------------------
// Canonical frames. The implicit field lives in the per-axis box frame
// [-0.5, 0.5]^3 (align_to_scene maps that cube onto the box). The shape
// encoder consumes isotropically scaled points so proportions survive.
// ---------------------------------------------------------------------------

inline Vec3 world_to_canonical(const Vec3& p, const OrientedBox3& box) {
  const Vec3 local = rotate_z(p - box.center, -box.yaw);
  return Vec3(local.x() / box.size.x(), local.y() / box.size.y(),
              local.z() / box.size.z());
}

inline Vec3 canonical_to_world(const Vec3& q, const OrientedBox3& box) {
  return rotate_z(Vec3(q.x() * box.size.x(), q.y() * box.size.y(),
                       q.z() * box.size.z()),
                  box.yaw) +
         box.center;
}

/// Encoder-side canonicalization: translate by -center, rotate by -yaw,
/// scale by 1 / max box extent.
inline std::vector<Vec3> canonicalize_isotropic(const std::vector<Vec3>& pts,
                                                const OrientedBox3& box) {
  const double scale = 1.0 / box.size.maxCoeff();
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const Vec3& p : pts)
    out.push_back(scale * rotate_z(p - box.center, -box.yaw));
  return out;
}

// ---------------------------------------------------------------------------
// Shape encoding: per-point net over [point, f_vote, f_anchor], max-pooled.
// ---------------------------------------------------------------------------

struct EncodeForward {
  NetCache cache;
  Eigen::MatrixXd outputs;      // embed width x n_points
  std::vector<int> argmax_col;  // winning point per channel
  int n_points = 0;
  bool anchor_fallback = false;
};

inline ShapeEmbedding encode_shape_with(const std::vector<Vec3>& prior,
                                        const std::vector<Vec3>& anchor_points,
                                        const Eigen::VectorXd& f_vote,
                                        const Eigen::VectorXd& f_anchor,
                                        const DenseNet& enc_net,
                                        EncodeForward* fwd) {
  EncodeForward local;
  EncodeForward& ef = fwd ? *fwd : local;
  const std::vector<Vec3>* pts = &prior;
  if (prior.empty()) {
    if (anchor_points.empty())
      throw std::invalid_argument("encode_shape: no points at all");
    pts = &anchor_points;
    ef.anchor_fallback = true;
  }
  const int n = static_cast<int>(pts->size());
  const int fw = static_cast<int>(f_vote.size() + f_anchor.size());
  if (enc_net.input_width() != 3 + fw)
    throw std::invalid_argument("encode_shape: net width mismatch");
  Eigen::MatrixXd X(3 + fw, n);
  for (int i = 0; i < n; ++i) {
    X.block<3, 1>(0, i) = (*pts)[i];
    X.block(3, i, f_vote.size(), 1) = f_vote;
    X.block(3 + f_vote.size(), i, f_anchor.size(), 1) = f_anchor;
  }
  ef.n_points = n;
  ef.outputs = enc_net.forward_batch(X, ef.cache);
  const int w = static_cast<int>(ef.outputs.rows());
  ShapeEmbedding emb;
  emb.f.resize(w);
  ef.argmax_col.assign(w, 0);
  for (int ch = 0; ch < w; ++ch) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (ef.outputs(ch, i) > ef.outputs(ch, best)) best = i;
    ef.argmax_col[ch] = best;
    emb.f(ch) = ef.outputs(ch, best);
  }
  return emb;
}

/// Contract operation. `prior` must already be canonicalized; when it is
/// empty the deformed anchors stand in (flagged via EncodeForward).
inline ShapeEmbedding encode_shape(const std::vector<Vec3>& prior,
                                   const std::vector<Vec3>& anchor_points,
                                   const Eigen::VectorXd& f_vote,
                                   const Eigen::VectorXd& f_anchor,
                                   const DenseNet& enc_net) {
  return encode_shape_with(prior, anchor_points, f_vote, f_anchor, enc_net,
                           nullptr);
}

/// Backward through pooling and the per-point net. Feature gradients are not
/// propagated further (the detector is frozen during shape training).
inline void encode_backward(const Eigen::VectorXd& d_emb,
                            const EncodeForward& fwd, const DenseNet& enc_net,
                            GradTape& tape) {
  Eigen::MatrixXd d_out =
      Eigen::MatrixXd::Zero(fwd.outputs.rows(), fwd.outputs.cols());
  for (int ch = 0; ch < d_emb.size(); ++ch)
    d_out(ch, fwd.argmax_col[ch]) += d_emb(ch);
  enc_net.backward_batch(d_out, fwd.cache, tape);
}

// ---------------------------------------------------------------------------
// Occupancy decoding: sigmoid(net([f_shape, query])).
// ---------------------------------------------------------------------------

struct DecodeForward {
  NetCache cache;
  Eigen::VectorXd probs;
  bool out_of_cube = false;
};

inline Eigen::VectorXd decode_occupancy_with(const ShapeEmbedding& emb,
                                             const std::vector<Vec3>& queries,
                                             const DenseNet& dec_net,
                                             DecodeForward* fwd) {
  DecodeForward local;
  DecodeForward& df = fwd ? *fwd : local;
  const int n = static_cast<int>(queries.size());
  const int w = static_cast<int>(emb.f.size());
  if (dec_net.input_width() != w + 3 || dec_net.output_width() != 1)
    throw std::invalid_argument("decode_occupancy: net width mismatch");
  Eigen::MatrixXd X(w + 3, n);
  for (int i = 0; i < n; ++i) {
    X.block(0, i, w, 1) = emb.f;
    X.block<3, 1>(w, i) = queries[i];
    if (queries[i].cwiseAbs().maxCoeff() > 0.5 + 1e-12) df.out_of_cube = true;
  }
  const Eigen::MatrixXd logits = dec_net.forward_batch(X, df.cache);
  df.probs.resize(n);
  for (int i = 0; i < n; ++i) df.probs(i) = logistic(logits(0, i));
  return df.probs;
}

inline Eigen::VectorXd decode_occupancy(const ShapeEmbedding& emb,
                                        const std::vector<Vec3>& queries,
                                        const DenseNet& dec_net) {
  return decode_occupancy_with(emb, queries, dec_net, nullptr);
}

/// Binary cross-entropy against inside/outside labels, with gradients wrt the
/// decoder logits pushed down to the net and the embedding.
struct OccupancyLossResult {
  double value = 0;
  Eigen::VectorXd d_emb;
};

inline OccupancyLossResult occupancy_bce_backward(
    const ShapeEmbedding& emb, const DecodeForward& fwd,
    const std::vector<char>& labels, const DenseNet& dec_net, GradTape& tape,
    double upstream = 1.0) {
  const int n = static_cast<int>(fwd.probs.size());
  OccupancyLossResult out;
  Eigen::MatrixXd d_logits(1, n);
  for (int i = 0; i < n; ++i) {
    const double p = std::clamp(fwd.probs(i), 1e-12, 1.0 - 1e-12);
    const double y = labels[i] ? 1.0 : 0.0;
    out.value += -(y * std::log(p) + (1 - y) * std::log(1 - p)) / n;
    d_logits(0, i) = upstream * (fwd.probs(i) - y) / n;
  }
  const Eigen::MatrixXd d_in = dec_net.backward_batch(d_logits, fwd.cache, tape);
  out.d_emb = d_in.topRows(emb.f.size()).rowwise().sum();
  return out;
}

// ---------------------------------------------------------------------------
// Iso-surface extraction over the canonical cube.
// ---------------------------------------------------------------------------

struct ExtractResult {
  TriMesh mesh;
  bool empty_surface = false;
};

/// Marching cubes over an axis-aligned `res`^3 sample grid of `field`
/// spanning [-0.5, 0.5]^3. Values above `iso` count as inside.
template <typename FieldFn>
ExtractResult marching_cubes(const FieldFn& field, int res, double iso) {
  if (res < 8) throw std::invalid_argument("marching_cubes: resolution < 8");
  if (!(iso > 0 && iso < 1))
    throw std::invalid_argument("marching_cubes: iso must be in (0,1)");
  const double step = 1.0 / (res - 1);
  auto coord = [&](int i) { return -0.5 + i * step; };
  std::vector<double> values(static_cast<std::size_t>(res) * res * res);
  auto vid = [&](int x, int y, int z) {
    return (static_cast<std::size_t>(z) * res + y) * res + x;
  };
  {
    std::vector<Vec3> grid;
    grid.reserve(values.size());
    for (int z = 0; z < res; ++z)
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x)
          grid.emplace_back(coord(x), coord(y), coord(z));
    const Eigen::VectorXd v = field(grid);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = v(i);
  }

  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> tris;
  std::unordered_map<std::uint64_t, int> edge_vertex;
  auto edge_key = [&](int x, int y, int z, int axis) {
    return ((static_cast<std::uint64_t>(z) * res + y) * res + x) * 4 + axis;
  };
  auto vertex_on_edge = [&](int x0, int y0, int z0, int x1, int y1, int z1,
                            double v0, double v1) {
    const int axis = x1 != x0 ? 0 : (y1 != y0 ? 1 : 2);
    const std::uint64_t key =
        edge_key(std::min(x0, x1), std::min(y0, y1), std::min(z0, z1), axis);
    auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    double t = 0.5;
    if (std::abs(v1 - v0) > 1e-300) t = (iso - v0) / (v1 - v0);
    t = std::clamp(t, 0.0, 1.0);
    const Vec3 a(coord(x0), coord(y0), coord(z0));
    const Vec3 b(coord(x1), coord(y1), coord(z1));
    const int idx = static_cast<int>(vertices.size());
    vertices.push_back(a + t * (b - a));
    edge_vertex.emplace(key, idx);
    return idx;
  };

  bool any_inside = false, any_outside = false;
  for (double v : values) (v > iso ? any_inside : any_outside) = true;

  for (int z = 0; z + 1 < res; ++z)
    for (int y = 0; y + 1 < res; ++y)
      for (int x = 0; x + 1 < res; ++x) {
        double corner[8];
        int cx[8], cy[8], cz[8];
        int cube_index = 0;
        for (int c = 0; c < 8; ++c) {
          cx[c] = x + detail::kCornerOffset[c][0];
          cy[c] = y + detail::kCornerOffset[c][1];
          cz[c] = z + detail::kCornerOffset[c][2];
          corner[c] = values[vid(cx[c], cy[c], cz[c])];
          if (corner[c] < iso) cube_index |= 1 << c;
        }
        if (detail::kEdgeTable[cube_index] == 0) continue;
        int edge_vert[12];
        for (int e = 0; e < 12; ++e) {
          if (!(detail::kEdgeTable[cube_index] & (1 << e))) continue;
          const int a = detail::kEdgeCorners[e][0];
          const int b = detail::kEdgeCorners[e][1];
          edge_vert[e] = vertex_on_edge(cx[a], cy[a], cz[a], cx[b], cy[b],
                                        cz[b], corner[a], corner[b]);
        }
        for (int t = 0; detail::kTriTable[cube_index][t] != -1; t += 3)
          tris.push_back({edge_vert[detail::kTriTable[cube_index][t]],
                          edge_vert[detail::kTriTable[cube_index][t + 1]],
                          edge_vert[detail::kTriTable[cube_index][t + 2]]});
      }

  ExtractResult out;
  out.mesh = make_trimesh(std::move(vertices), tris);
  out.empty_surface = out.mesh.empty() && !(any_inside && any_outside);
  return out;
}

/// Contract operation: decode the occupancy field on the canonical grid and
/// extract the iso surface.
inline ExtractResult extract_mesh(const ShapeEmbedding& emb,
                                  const DenseNet& dec_net, int resolution = 32,
                                  double iso = 0.5) {
  return marching_cubes(
      [&](const std::vector<Vec3>& grid) {
        return decode_occupancy(emb, grid, dec_net);
      },
      resolution, iso);
}

/// Maps a canonical-cube mesh onto a scene box: per-axis scale, yaw, then
/// translation. Topology is untouched.
inline TriMesh align_to_scene(const TriMesh& mesh, const OrientedBox3& box) {
  TriMesh out = mesh;
  for (Vec3& v : out.vertices) v = canonical_to_world(v, box);
  return out;
}

// ---------------------------------------------------------------------------
// Ground-truth occupancy labels (canonical queries + ray-parity indicator).
// ---------------------------------------------------------------------------

struct OccupancyLabels {
  std::vector<Vec3> queries;  // canonical cube coordinates
  std::vector<char> inside;
};

/// Half the queries are uniform in the cube, half hug the mesh surface
/// (surface samples + Gaussian jitter). Inside/outside is decided in world
/// space against the ground-truth mesh.
inline OccupancyLabels make_occupancy_labels(const TriMesh& gt_mesh,
                                             const OrientedBox3& frame,
                                             int n_uniform, int n_near,
                                             double near_sigma,
                                             std::uint64_t seed) {
  OccupancyLabels out;
  Rng rng(seed);
  out.queries.reserve(n_uniform + n_near);
  for (int i = 0; i < n_uniform; ++i)
    out.queries.emplace_back(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                             rng.uniform(-0.5, 0.5));
  if (n_near > 0) {
    const PointCloud surf =
        sample_mesh_surface(gt_mesh, n_near, derive_seed(seed, 0x5caf));
    for (const Vec3& p : surf.points) {
      Vec3 q = world_to_canonical(p, frame);
      q += Vec3(rng.normal(0, near_sigma), rng.normal(0, near_sigma),
                rng.normal(0, near_sigma));
      q = q.cwiseMax(-0.5).cwiseMin(0.5);
      out.queries.push_back(q);
    }
  }
  out.inside.reserve(out.queries.size());
  for (const Vec3& q : out.queries)
    out.inside.push_back(
        point_inside_mesh(gt_mesh, canonical_to_world(q, frame)) ? 1 : 0);
  return out;
}

}  // namespace ancs
