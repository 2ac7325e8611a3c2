#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "anchorscene/config.hpp"
#include "anchorscene/geometry.hpp"
#include "anchorscene/nnet.hpp"

namespace ancs {

/// Subsampled points carrying learned features (one row per seed).
struct SeedSet {
  PointCloud positions;
  Eigen::MatrixXd features;  // n_seeds x width
};

struct BackboneConfig {
  int min_points = 1024;
  int level1_centroids = 512;
  int level2_centroids = 128;
  double radius1 = 0.2;
  double radius2 = 0.4;
  int max_neighbors = 16;

  static BackboneConfig from_config(const Config& c) {
    BackboneConfig b;
    b.min_points = c.get_i("backbone.min_points");
    b.level1_centroids = c.get_i("backbone.level1_centroids");
    b.level2_centroids = c.get_i("backbone.level2_centroids");
    b.radius1 = c.get_d("backbone.radius1");
    b.radius2 = c.get_d("backbone.radius2");
    b.max_neighbors = c.get_i("backbone.max_neighbors");
    return b;
  }
};

/// Per-branch two-level set-abstraction stack.
struct SaStack {
  DenseNet level1;  // input 3 (relative coords)
  DenseNet level2;  // input 3 + level1 output width
};

/// Discrete sampling decisions of one abstraction level. Depends only on
/// point positions, so it is computed once per scene and reused across
/// branches and training steps.
struct SaLevelPlan {
  std::vector<int> centroids;
  std::vector<std::vector<int>> neighbors;  // per centroid, into the input set
};

inline SaLevelPlan make_sa_plan(const PointCloud& pts, int n_centroids,
                                double radius, int max_neighbors) {
  SaLevelPlan plan;
  plan.centroids =
      farthest_point_sample(pts, n_centroids, lexicographic_min_index(pts));
  plan.neighbors.reserve(plan.centroids.size());
  for (int c : plan.centroids) {
    std::vector<int> nbrs =
        ball_query(pts, pts.points[c], radius, max_neighbors);
    if (nbrs.empty()) nbrs.push_back(c);
    plan.neighbors.push_back(std::move(nbrs));
  }
  return plan;
}

struct GroupingPlan {
  SaLevelPlan l1, l2;
  std::vector<Vec3> l1_positions, l2_positions;
};

inline GroupingPlan make_grouping_plan(const PointCloud& scan,
                                       const BackboneConfig& cfg) {
  if (static_cast<int>(scan.size()) < cfg.min_points)
    throw std::invalid_argument("insufficient points");
  GroupingPlan plan;
  plan.l1 = make_sa_plan(scan, cfg.level1_centroids, cfg.radius1,
                         cfg.max_neighbors);
  for (int c : plan.l1.centroids) plan.l1_positions.push_back(scan.points[c]);
  PointCloud l1_cloud(plan.l1_positions);
  plan.l2 = make_sa_plan(l1_cloud, cfg.level2_centroids, cfg.radius2,
                         cfg.max_neighbors);
  for (int c : plan.l2.centroids)
    plan.l2_positions.push_back(plan.l1_positions[c]);
  return plan;
}

/// Forward record of one set-abstraction level (enough to backprop).
struct SaForward {
  NetCache cache;
  std::vector<int> col_centroid;  // flattened column -> centroid
  std::vector<int> col_source;    // flattened column -> input point
  Eigen::MatrixXd outputs;        // out_width x n_cols
  Eigen::MatrixXd features;       // out_width x n_centroids (max-pooled)
  std::vector<std::vector<int>> argmax_col;  // [centroid][channel]
  int in_feature_width = 0;
  int n_input_points = 0;
};

/// One abstraction level: per-neighbor net over [relative coords (+ input
/// feature)], max-pooled per centroid. `in_features` is width x n (may be
/// null for the raw-coordinate level).
inline SaForward sa_forward(const std::vector<Vec3>& points,
                            const Eigen::MatrixXd* in_features,
                            const SaLevelPlan& plan, const DenseNet& net) {
  SaForward f;
  f.in_feature_width =
      in_features ? static_cast<int>(in_features->rows()) : 0;
  f.n_input_points = static_cast<int>(points.size());
  std::size_t n_cols = 0;
  for (const auto& nbrs : plan.neighbors) n_cols += nbrs.size();
  const int in_width = 3 + f.in_feature_width;
  if (net.input_width() != in_width)
    throw std::invalid_argument("set_abstraction: net input width mismatch");

  Eigen::MatrixXd X(in_width, n_cols);
  f.col_centroid.reserve(n_cols);
  f.col_source.reserve(n_cols);
  std::size_t col = 0;
  for (std::size_t c = 0; c < plan.centroids.size(); ++c) {
    const Vec3& center = points[plan.centroids[c]];
    for (int j : plan.neighbors[c]) {
      X.block<3, 1>(0, col) = points[j] - center;
      if (in_features) X.block(3, col, f.in_feature_width, 1) = in_features->col(j);
      f.col_centroid.push_back(static_cast<int>(c));
      f.col_source.push_back(j);
      ++col;
    }
  }
  f.outputs = net.forward_batch(X, f.cache);
  const int out_w = static_cast<int>(f.outputs.rows());
  f.features = Eigen::MatrixXd::Constant(
      out_w, plan.centroids.size(), -std::numeric_limits<double>::infinity());
  f.argmax_col.assign(plan.centroids.size(), std::vector<int>(out_w, -1));
  for (std::size_t k = 0; k < n_cols; ++k) {
    const int c = f.col_centroid[k];
    for (int ch = 0; ch < out_w; ++ch)
      if (f.outputs(ch, k) > f.features(ch, c)) {
        f.features(ch, c) = f.outputs(ch, k);
        f.argmax_col[c][ch] = static_cast<int>(k);
      }
  }
  return f;
}

/// Backward through max-pool and the per-neighbor net. Returns the gradient
/// with respect to the input feature columns (0 x 0 when the level consumed
/// raw coordinates only).
inline Eigen::MatrixXd sa_backward(const Eigen::MatrixXd& d_features,
                                   const SaForward& f, const DenseNet& net,
                                   GradTape& tape) {
  const int out_w = static_cast<int>(f.outputs.rows());
  Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(out_w, f.outputs.cols());
  for (std::size_t c = 0; c < f.argmax_col.size(); ++c)
    for (int ch = 0; ch < out_w; ++ch) {
      const int k = f.argmax_col[c][ch];
      if (k >= 0) d_out(ch, k) += d_features(ch, c);
    }
  const Eigen::MatrixXd d_in = net.backward_batch(d_out, f.cache, tape);
  if (f.in_feature_width == 0) return Eigen::MatrixXd();
  Eigen::MatrixXd d_feat =
      Eigen::MatrixXd::Zero(f.in_feature_width, f.n_input_points);
  for (std::size_t k = 0; k < f.col_source.size(); ++k)
    d_feat.col(f.col_source[k]) +=
        d_in.block(3, k, f.in_feature_width, 1);
  return d_feat;
}

/// Contract operation: one set-abstraction level over a cloud.
inline SeedSet set_abstraction(const PointCloud& pc, int n_centroids,
                               double radius, const DenseNet& per_point_net,
                               int max_neighbors = 16) {
  if (n_centroids > static_cast<int>(pc.size()))
    throw std::invalid_argument("set_abstraction: more centroids than points");
  SaLevelPlan plan = make_sa_plan(pc, n_centroids, radius, max_neighbors);
  Eigen::MatrixXd feats_t;
  const Eigen::MatrixXd* in = nullptr;
  if (pc.has_features()) {
    feats_t = pc.features.transpose();
    in = &feats_t;
  }
  SaForward f = sa_forward(pc.points, in, plan, per_point_net);
  SeedSet out;
  for (int c : plan.centroids) out.positions.points.push_back(pc.points[c]);
  out.features = f.features.transpose();
  return out;
}

/// Runs one branch of the encoder on a prebuilt plan; forwards are retained
/// for training.
struct BranchEncoding {
  SaForward sa1, sa2;
  SeedSet seeds;
};

inline BranchEncoding encode_branch(const PointCloud& scan,
                                    const GroupingPlan& plan,
                                    const SaStack& stack) {
  BranchEncoding enc;
  Eigen::MatrixXd scan_feats;
  const Eigen::MatrixXd* in = nullptr;
  if (scan.has_features()) {
    scan_feats = scan.features.transpose();
    in = &scan_feats;
  }
  enc.sa1 = sa_forward(scan.points, in, plan.l1, stack.level1);
  enc.sa2 = sa_forward(plan.l1_positions, &enc.sa1.features, plan.l2,
                       stack.level2);
  enc.seeds.positions.points = plan.l2_positions;
  enc.seeds.features = enc.sa2.features.transpose();
  return enc;
}

/// Contract operation: the dual-branch encoder. Both branches share the
/// deterministic grouping plan; only the nets differ.
inline std::pair<SeedSet, SeedSet> dual_branch_encode(
    const PointCloud& scan, const SaStack& obj_net, const SaStack& wall_net,
    const BackboneConfig& cfg = {}) {
  const GroupingPlan plan = make_grouping_plan(scan, cfg);
  return {encode_branch(scan, plan, obj_net).seeds,
          encode_branch(scan, plan, wall_net).seeds};
}

}  // namespace ancs
