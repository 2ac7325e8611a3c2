#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "anchorscene/backbone.hpp"
#include "anchorscene/geometry.hpp"
#include "anchorscene/nnet.hpp"

namespace ancs {

/// Shape anchors for one candidate: a unit template deformed onto the
/// instance surface and translated to the cluster center.
struct AnchorSet {
  PointCloud tmpl;            // N unit-sphere points
  std::vector<Vec3> offsets;  // per-anchor deformation, each component in (-1,1)
  PointCloud deformed;        // tmpl + offsets + center
  Vec3 center = Vec3::Zero(); // c_i
};

struct DeformForward {
  NetCache cache;
  int n_anchors = 0;
  int feature_width = 0;
};

namespace detail {
// A saturated tanh rounds to exactly +-1.0 in double precision; the offsets
// contract is the open interval, so pin to the nearest interior double.
inline double open_unit(double x) {
  const double lim = std::nextafter(1.0, 0.0);
  return std::clamp(x, -lim, lim);
}
}  // namespace detail

/// deformed_j = template_j + tanh(net([template_j, f_vote])) + center.
inline AnchorSet deform_anchors(const PointCloud& tmpl,
                                const Eigen::VectorXd& f_vote,
                                const Vec3& center,
                                const DenseNet& deform_net,
                                DeformForward* fwd = nullptr) {
  const int n = static_cast<int>(tmpl.size());
  const int w = static_cast<int>(f_vote.size());
  if (deform_net.input_width() != 3 + w || deform_net.output_width() != 3)
    throw std::invalid_argument("deform_anchors: net width mismatch");
  if (deform_net.layers().back().act != Activation::Tanh)
    throw std::invalid_argument("deform_anchors: final activation must be tanh");
  Eigen::MatrixXd X(3 + w, n);
  for (int j = 0; j < n; ++j) {
    X.block<3, 1>(0, j) = tmpl.points[j];
    X.block(3, j, w, 1) = f_vote;
  }
  DeformForward local;
  DeformForward& df = fwd ? *fwd : local;
  df.n_anchors = n;
  df.feature_width = w;
  const Eigen::MatrixXd out = deform_net.forward_batch(X, df.cache);
  AnchorSet set;
  set.tmpl = tmpl;
  set.center = center;
  set.offsets.resize(n);
  set.deformed.points.resize(n);
  for (int j = 0; j < n; ++j) {
    set.offsets[j] = Vec3(detail::open_unit(out(0, j)),
                          detail::open_unit(out(1, j)),
                          detail::open_unit(out(2, j)));
    set.deformed.points[j] = tmpl.points[j] + set.offsets[j] + center;
  }
  return set;
}

/// Backward through the deformation layer. `d_deformed` is 3 x N. Returns
/// {d_f_vote, d_center}; the template is a constant.
inline std::pair<Eigen::VectorXd, Vec3> deform_backward(
    const Eigen::MatrixXd& d_deformed, const DeformForward& fwd,
    const DenseNet& deform_net, GradTape& tape) {
  const Eigen::MatrixXd d_in =
      deform_net.backward_batch(d_deformed, fwd.cache, tape);
  Eigen::VectorXd d_fvote = Eigen::VectorXd::Zero(fwd.feature_width);
  Vec3 d_center = Vec3::Zero();
  for (int j = 0; j < fwd.n_anchors; ++j) {
    d_fvote += d_in.block(3, j, fwd.feature_width, 1);
    d_center += d_deformed.col(j);
  }
  return {std::move(d_fvote), d_center};
}

/// Batched deformation across all candidates of a scene (columns grouped per
/// candidate, N anchors each).
inline std::vector<AnchorSet> deform_anchors_batch(
    const PointCloud& tmpl, const Eigen::MatrixXd& f_vote /* w x C */,
    const std::vector<Vec3>& centers, const DenseNet& deform_net,
    DeformForward& fwd) {
  const int n = static_cast<int>(tmpl.size());
  const int w = static_cast<int>(f_vote.rows());
  const int n_cand = static_cast<int>(centers.size());
  if (deform_net.input_width() != 3 + w || deform_net.output_width() != 3)
    throw std::invalid_argument("deform_anchors: net width mismatch");
  Eigen::MatrixXd X(3 + w, static_cast<Eigen::Index>(n) * n_cand);
  for (int c = 0; c < n_cand; ++c)
    for (int j = 0; j < n; ++j) {
      const Eigen::Index col = static_cast<Eigen::Index>(c) * n + j;
      X.block<3, 1>(0, col) = tmpl.points[j];
      X.block(3, col, w, 1) = f_vote.col(c);
    }
  fwd.n_anchors = n;
  fwd.feature_width = w;
  const Eigen::MatrixXd out = deform_net.forward_batch(X, fwd.cache);
  std::vector<AnchorSet> sets(n_cand);
  for (int c = 0; c < n_cand; ++c) {
    AnchorSet& s = sets[c];
    s.tmpl = tmpl;
    s.center = centers[c];
    s.offsets.resize(n);
    s.deformed.points.resize(n);
    for (int j = 0; j < n; ++j) {
      const Eigen::Index col = static_cast<Eigen::Index>(c) * n + j;
      s.offsets[j] = Vec3(detail::open_unit(out(0, col)),
                          detail::open_unit(out(1, col)),
                          detail::open_unit(out(2, col)));
      s.deformed.points[j] = tmpl.points[j] + s.offsets[j] + centers[c];
    }
  }
  return sets;
}

/// Backward of the batched deformation. `d_deformed_cols` is 3 x (N*C).
/// Returns d_f_vote (w x C) and per-candidate center gradients.
inline std::pair<Eigen::MatrixXd, std::vector<Vec3>> deform_backward_batch(
    const Eigen::MatrixXd& d_deformed_cols, int n_candidates,
    const DeformForward& fwd, const DenseNet& deform_net, GradTape& tape) {
  const Eigen::MatrixXd d_in =
      deform_net.backward_batch(d_deformed_cols, fwd.cache, tape);
  Eigen::MatrixXd d_fvote =
      Eigen::MatrixXd::Zero(fwd.feature_width, n_candidates);
  std::vector<Vec3> d_center(n_candidates, Vec3::Zero());
  for (int c = 0; c < n_candidates; ++c)
    for (int j = 0; j < fwd.n_anchors; ++j) {
      const Eigen::Index col =
          static_cast<Eigen::Index>(c) * fwd.n_anchors + j;
      d_fvote.col(c) += d_in.block(3, col, fwd.feature_width, 1);
      d_center[c] += d_deformed_cols.col(col);
    }
  return {std::move(d_fvote), std::move(d_center)};
}

/// Chamfer supervision of the deformed anchors against ground-truth surface
/// samples.
inline double anchor_loss(const AnchorSet& anchors,
                          const PointCloud& gt_surface) {
  return chamfer_distance(anchors.deformed, gt_surface);
}

/// d(chamfer)/d(first argument points), scaled by `upstream`. Assignments
/// (nearest neighbors) are treated as locally constant.
inline Eigen::MatrixXd chamfer_backward(const PointCloud& p,
                                        const PointCloud& q, double upstream) {
  const int np = static_cast<int>(p.size());
  const int nq = static_cast<int>(q.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, np);
  const double wp = upstream * 2.0 / np;
  for (int i = 0; i < np; ++i) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int j = 0; j < nq; ++j) {
      const double dist = (p.points[i] - q.points[j]).squaredNorm();
      if (dist < bd) {
        bd = dist;
        best = j;
      }
    }
    d.col(i) += wp * (p.points[i] - q.points[best]);
  }
  const double wq = upstream * 2.0 / nq;
  for (int j = 0; j < nq; ++j) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int i = 0; i < np; ++i) {
      const double dist = (q.points[j] - p.points[i]).squaredNorm();
      if (dist < bd) {
        bd = dist;
        best = i;
      }
    }
    d.col(best) += wq * (p.points[best] - q.points[j]);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Anchor-guided feature grouping: propagate seed features to the anchors by
// interpolation, refine with a net, average.
// ---------------------------------------------------------------------------

struct GroupForward {
  std::vector<InterpWeights> weights;  // per anchor
  NetCache fuse_cache;
  int n_anchors = 0;
};

inline Eigen::VectorXd group_anchor_features_with(const SeedSet& seeds,
                                                  const AnchorSet& anchors,
                                                  const DenseNet& fuse_net,
                                                  GroupForward* fwd) {
  if (!(seeds.features.cols() > 0))
    throw std::invalid_argument("group_anchor_features: seeds lack features");
  const int w = static_cast<int>(seeds.features.cols());
  const int n = static_cast<int>(anchors.deformed.size());
  GroupForward local;
  GroupForward& gf = fwd ? *fwd : local;
  gf.n_anchors = n;
  gf.weights.resize(n);
  Eigen::MatrixXd interp(w, n);
  for (int j = 0; j < n; ++j) {
    gf.weights[j] =
        interpolation_weights(seeds.positions.points, anchors.deformed.points[j]);
    interp.col(j).setZero();
    for (int k = 0; k < gf.weights[j].count; ++k)
      interp.col(j) += gf.weights[j].weight[k] *
                       seeds.features.row(gf.weights[j].index[k]).transpose();
  }
  const Eigen::MatrixXd per_anchor = fuse_net.forward_batch(interp, gf.fuse_cache);
  return per_anchor.rowwise().mean();
}

/// Contract operation: f_anchor for one candidate.
inline Eigen::VectorXd group_anchor_features(const SeedSet& seeds,
                                             const AnchorSet& anchors,
                                             const DenseNet& fuse_net) {
  return group_anchor_features_with(seeds, anchors, fuse_net, nullptr);
}

/// Backward: d f_anchor -> fuse-net tape + gradient wrt seed features
/// (width x n_seeds). Anchor positions act as fixed sampling locations here;
/// the deformation layer is trained through its Chamfer supervision.
inline Eigen::MatrixXd group_backward(const Eigen::VectorXd& d_fanchor,
                                      const GroupForward& fwd,
                                      const DenseNet& fuse_net, int n_seeds,
                                      GradTape& tape) {
  const int w = static_cast<int>(d_fanchor.size());
  Eigen::MatrixXd d_per_anchor(w, fwd.n_anchors);
  for (int j = 0; j < fwd.n_anchors; ++j)
    d_per_anchor.col(j) = d_fanchor / fwd.n_anchors;
  const Eigen::MatrixXd d_interp =
      fuse_net.backward_batch(d_per_anchor, fwd.fuse_cache, tape);
  Eigen::MatrixXd d_seed =
      Eigen::MatrixXd::Zero(d_interp.rows(), n_seeds);
  for (int j = 0; j < fwd.n_anchors; ++j)
    for (int k = 0; k < fwd.weights[j].count; ++k)
      d_seed.col(fwd.weights[j].index[k]) +=
          fwd.weights[j].weight[k] * d_interp.col(j);
  return d_seed;
}

// ---------------------------------------------------------------------------
// Anchor-guided instance point sampling: iteratively gather scan points
// within a radius of the working set, radius = min pairwise anchor distance.
// ---------------------------------------------------------------------------

struct InstanceSampleResult {
  std::vector<int> indices;  // selected scan points, ascending, deduplicated
  double radius = 0;
  bool degenerate_radius = false;  // anchors collapsed; floor applied
};

inline InstanceSampleResult sample_instance_points(const PointCloud& scan,
                                                   const AnchorSet& anchors,
                                                   int iterations = 2,
                                                   double radius_floor = 0.02) {
  if (iterations < 1)
    throw std::invalid_argument("sample_instance_points: iterations >= 1");
  const auto& a = anchors.deformed.points;
  const int n = static_cast<int>(a.size());
  if (n < 2)
    throw std::invalid_argument("sample_instance_points: need >= 2 anchors");
  double min_d2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      min_d2 = std::min(min_d2, (a[i] - a[j]).squaredNorm());
  InstanceSampleResult out;
  out.radius = std::sqrt(min_d2);
  if (out.radius < radius_floor) {
    out.radius = radius_floor;
    out.degenerate_radius = true;
  }
  const double r2 = out.radius * out.radius;

  std::vector<char> selected(scan.size(), 0);
  std::vector<Vec3> frontier = a;
  for (int it = 0; it < iterations; ++it) {
    std::vector<Vec3> next;
    for (std::size_t i = 0; i < scan.size(); ++i) {
      if (selected[i]) continue;
      const Vec3& p = scan.points[i];
      for (const Vec3& f : frontier) {
        if ((p - f).squaredNorm() <= r2) {
          selected[i] = 1;
          next.push_back(p);
          break;
        }
      }
    }
    if (next.empty()) break;
    frontier = std::move(next);
  }
  for (std::size_t i = 0; i < scan.size(); ++i)
    if (selected[i]) out.indices.push_back(static_cast<int>(i));
  return out;
}

inline PointCloud gather_points(const PointCloud& scan,
                                const std::vector<int>& indices) {
  PointCloud out;
  out.points.reserve(indices.size());
  for (int i : indices) out.points.push_back(scan.points[i]);
  return out;
}

/// The anchor-augmented cloud (scan plus deformed anchors) offered to the
/// shape encoder as extra structural evidence.
inline PointCloud augmented_cloud(const PointCloud& scan,
                                  const AnchorSet& anchors) {
  PointCloud out = scan;
  out.features.resize(0, 0);
  out.points.insert(out.points.end(), anchors.deformed.points.begin(),
                    anchors.deformed.points.end());
  return out;
}

}  // namespace ancs
