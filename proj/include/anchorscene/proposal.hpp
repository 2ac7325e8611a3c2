#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "anchorscene/backbone.hpp"
#include "anchorscene/geometry.hpp"
#include "anchorscene/nnet.hpp"

namespace ancs {

/// One vote per seed: predicted displacement toward the instance center plus
/// a feature residual.
struct VoteSet {
  PointCloud positions;
  Eigen::MatrixXd features;  // n_votes x width
  std::vector<int> source_seed;
};

struct VoteForward {
  NetCache cache;
  int width = 0;
};

/// vote position = seed position + offset; vote feature = seed feature +
/// residual, both predicted by `vote_net` (output width = 3 + feature width).
inline VoteSet vote(const SeedSet& seeds, const DenseNet& vote_net,
                    VoteForward* fwd = nullptr) {
  if (seeds.positions.empty()) throw std::invalid_argument("vote: no seeds");
  const int w = static_cast<int>(seeds.features.cols());
  if (vote_net.input_width() != w || vote_net.output_width() != 3 + w)
    throw std::invalid_argument("vote: net width mismatch");
  const Eigen::MatrixXd X = seeds.features.transpose();
  VoteForward local;
  VoteForward& vf = fwd ? *fwd : local;
  vf.width = w;
  const Eigen::MatrixXd out = vote_net.forward_batch(X, vf.cache);
  VoteSet votes;
  const int n = static_cast<int>(seeds.positions.size());
  votes.positions.points.resize(n);
  votes.features.resize(n, w);
  votes.source_seed.resize(n);
  for (int i = 0; i < n; ++i) {
    votes.positions.points[i] =
        seeds.positions.points[i] + Vec3(out(0, i), out(1, i), out(2, i));
    votes.features.row(i) =
        seeds.features.row(i) + out.block(3, i, w, 1).transpose();
    votes.source_seed[i] = i;
  }
  return votes;
}

/// Backward through the voting layer; accumulates into `tape` and returns the
/// gradient wrt seed features (width x n).
inline Eigen::MatrixXd vote_backward(const Eigen::MatrixXd& d_positions,
                                     const Eigen::MatrixXd& d_features,
                                     const VoteForward& fwd,
                                     const DenseNet& vote_net,
                                     GradTape& tape) {
  const int n = static_cast<int>(d_positions.cols());
  Eigen::MatrixXd d_out(3 + fwd.width, n);
  d_out.topRows(3) = d_positions;
  d_out.bottomRows(fwd.width) = d_features;
  Eigen::MatrixXd d_seed = vote_net.backward_batch(d_out, fwd.cache, tape);
  d_seed += d_features;  // residual connection
  return d_seed;
}

// ---------------------------------------------------------------------------
// Vote clustering.
// ---------------------------------------------------------------------------

struct Candidate {
  Vec3 center;             // c_i: mean of member vote positions
  Eigen::VectorXd f_vote;  // pooled proposal feature
  std::vector<int> member_votes;
};

struct ClusterPlan {
  std::vector<int> candidate_votes;        // FPS picks over votes
  std::vector<std::vector<int>> members;   // ball neighborhoods
};

inline ClusterPlan make_cluster_plan(const VoteSet& votes, int n_candidates,
                                     double radius, int max_members) {
  if (n_candidates > static_cast<int>(votes.positions.size()))
    throw std::invalid_argument("cluster_votes: more candidates than votes");
  ClusterPlan plan;
  plan.candidate_votes =
      farthest_point_sample(votes.positions, n_candidates,
                            lexicographic_min_index(votes.positions));
  for (int v : plan.candidate_votes) {
    std::vector<int> members = ball_query(
        votes.positions, votes.positions.points[v], radius, max_members);
    if (members.empty()) members.push_back(v);
    plan.members.push_back(std::move(members));
  }
  return plan;
}

struct ClusterForward {
  NetCache pool_cache;
  Eigen::MatrixXd pooled;                     // width x n_candidates
  std::vector<std::vector<int>> argmax_vote;  // [cand][channel] -> vote idx
};

inline std::vector<Candidate> cluster_votes_with(const VoteSet& votes,
                                                 const ClusterPlan& plan,
                                                 const DenseNet& pool_net,
                                                 ClusterForward* fwd) {
  const int w = static_cast<int>(votes.features.cols());
  const int n_cand = static_cast<int>(plan.candidate_votes.size());
  ClusterForward local;
  ClusterForward& cf = fwd ? *fwd : local;
  cf.pooled = Eigen::MatrixXd::Constant(
      w, n_cand, -std::numeric_limits<double>::infinity());
  cf.argmax_vote.assign(n_cand, std::vector<int>(w, -1));
  std::vector<Candidate> out(n_cand);
  for (int c = 0; c < n_cand; ++c) {
    Candidate& cand = out[c];
    cand.member_votes = plan.members[c];
    Vec3 mean = Vec3::Zero();
    for (int m : cand.member_votes) {
      mean += votes.positions.points[m];
      for (int ch = 0; ch < w; ++ch)
        if (votes.features(m, ch) > cf.pooled(ch, c)) {
          cf.pooled(ch, c) = votes.features(m, ch);
          cf.argmax_vote[c][ch] = m;
        }
    }
    cand.center = mean / static_cast<double>(cand.member_votes.size());
  }
  const Eigen::MatrixXd f = pool_net.forward_batch(cf.pooled, cf.pool_cache);
  for (int c = 0; c < n_cand; ++c) out[c].f_vote = f.col(c);
  return out;
}

/// Contract operation: FPS candidate picks, ball-query membership, mean
/// centers, max-pooled features through the pooling net.
inline std::vector<Candidate> cluster_votes(const VoteSet& votes,
                                            int n_candidates, double radius,
                                            const DenseNet& pool_net,
                                            int max_members = 16) {
  const ClusterPlan plan =
      make_cluster_plan(votes, n_candidates, radius, max_members);
  return cluster_votes_with(votes, plan, pool_net, nullptr);
}

/// Backward: gradients wrt f_vote columns and candidate centers are pushed
/// down to vote features / positions.
inline void cluster_backward(const Eigen::MatrixXd& d_fvote,
                             const Eigen::MatrixXd& d_center,
                             const VoteSet& votes, const ClusterPlan& plan,
                             const ClusterForward& fwd,
                             const DenseNet& pool_net, GradTape& pool_tape,
                             Eigen::MatrixXd& d_vote_features,
                             Eigen::MatrixXd& d_vote_positions) {
  const int w = static_cast<int>(votes.features.cols());
  const int n_votes = static_cast<int>(votes.positions.size());
  if (d_vote_features.size() == 0)
    d_vote_features = Eigen::MatrixXd::Zero(w, n_votes);
  if (d_vote_positions.size() == 0)
    d_vote_positions = Eigen::MatrixXd::Zero(3, n_votes);
  const Eigen::MatrixXd d_pooled =
      pool_net.backward_batch(d_fvote, fwd.pool_cache, pool_tape);
  for (std::size_t c = 0; c < plan.members.size(); ++c) {
    for (int ch = 0; ch < w; ++ch) {
      const int m = fwd.argmax_vote[c][ch];
      if (m >= 0) d_vote_features(ch, m) += d_pooled(ch, c);
    }
    const double inv = 1.0 / static_cast<double>(plan.members[c].size());
    for (int m : plan.members[c])
      d_vote_positions.col(m) += inv * d_center.col(c);
  }
}

// ---------------------------------------------------------------------------
// Vote regression loss.
// ---------------------------------------------------------------------------

/// Per-seed instance assignment; -1 marks background/clutter seeds.
struct SeedLabels {
  std::vector<int> instance;
  std::vector<Vec3> center;  // regression target, valid where instance >= 0
};

inline SeedLabels label_seeds_by_boxes(const SeedSet& seeds,
                                       const std::vector<OrientedBox3>& boxes,
                                       double pad = 0.0) {
  SeedLabels labels;
  labels.instance.assign(seeds.positions.size(), -1);
  labels.center.assign(seeds.positions.size(), Vec3::Zero());
  for (std::size_t i = 0; i < seeds.positions.size(); ++i)
    for (std::size_t b = 0; b < boxes.size(); ++b)
      if (point_in_box(boxes[b], seeds.positions.points[i], pad)) {
        labels.instance[i] = static_cast<int>(b);
        labels.center[i] = boxes[b].center;
        break;
      }
  return labels;
}

/// Wall votes regress toward the wall's center axis (the along-wall
/// coordinate keeps the seed's own projection; it is not locally inferable).
inline SeedLabels label_seeds_by_quads(const SeedSet& seeds,
                                       const std::vector<WallQuad>& quads,
                                       double thickness = 0.08,
                                       double pad = 0.0) {
  SeedLabels labels;
  labels.instance.assign(seeds.positions.size(), -1);
  labels.center.assign(seeds.positions.size(), Vec3::Zero());
  for (std::size_t i = 0; i < seeds.positions.size(); ++i)
    for (std::size_t q = 0; q < quads.size(); ++q)
      if (point_on_quad(quads[q], seeds.positions.points[i], thickness, pad)) {
        labels.instance[i] = static_cast<int>(q);
        labels.center[i] =
            quad_axis_point(quads[q], seeds.positions.points[i]);
        break;
      }
  return labels;
}

struct VoteLossResult {
  double value = 0;
  int seed_count = 0;
  bool no_object_seeds = false;
};

/// Mean L1 distance (per-axis sum) between votes of instance-surface seeds
/// and their instance centers; background seeds excluded.
inline VoteLossResult vote_loss(const VoteSet& votes,
                                const SeedLabels& labels) {
  VoteLossResult r;
  for (std::size_t i = 0; i < votes.positions.size(); ++i) {
    const int s = votes.source_seed[i];
    if (labels.instance[s] < 0) continue;
    const Vec3 d = votes.positions.points[i] - labels.center[s];
    r.value += std::abs(d.x()) + std::abs(d.y()) + std::abs(d.z());
    ++r.seed_count;
  }
  if (r.seed_count == 0) {
    r.no_object_seeds = true;
    r.value = 0;
  } else {
    r.value /= r.seed_count;
  }
  return r;
}

/// d(vote_loss)/d(vote positions), scaled by `upstream`.
inline Eigen::MatrixXd vote_loss_backward(const VoteSet& votes,
                                          const SeedLabels& labels,
                                          double upstream) {
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(3, votes.positions.size());
  int count = 0;
  for (std::size_t i = 0; i < votes.positions.size(); ++i)
    if (labels.instance[votes.source_seed[i]] >= 0) ++count;
  if (count == 0) return d;
  const double scale = upstream / count;
  for (std::size_t i = 0; i < votes.positions.size(); ++i) {
    const int s = votes.source_seed[i];
    if (labels.instance[s] < 0) continue;
    const Vec3 diff = votes.positions.points[i] - labels.center[s];
    for (int a = 0; a < 3; ++a)
      d(a, i) += scale * (diff[a] > 0 ? 1.0 : (diff[a] < 0 ? -1.0 : 0.0));
  }
  return d;
}

}  // namespace ancs
