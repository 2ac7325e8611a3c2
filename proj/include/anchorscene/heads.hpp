#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "anchorscene/anchors.hpp"
#include "anchorscene/geometry.hpp"
#include "anchorscene/nnet.hpp"
#include "anchorscene/proposal.hpp"

namespace ancs {

constexpr int kTargetNegative = -1;
constexpr int kTargetIgnore = -2;

// ---------------------------------------------------------------------------
// Parameter decoding. Decoder raw output layout:
//   boxes: [center 3][size 3][heading bins][heading residuals][classes][objectness 2]
//   quads: [center 3][size 2][heading bins][heading residuals][objectness 2]
// Sizes go through softplus; residuals through (pi/bins) * tanh.
// ---------------------------------------------------------------------------

struct DecodedParams {
  Vec3 center_offset = Vec3::Zero();   // relative to the cluster center
  Eigen::VectorXd size;                // strictly positive after decode
  Eigen::VectorXd heading_bin_logits;
  Eigen::VectorXd heading_residuals;   // each in (-pi/bins, pi/bins)
  Eigen::VectorXd class_logits;        // empty for wall quads
  Eigen::Vector2d objectness = Eigen::Vector2d::Zero();

  bool has_class() const { return class_logits.size() > 0; }
  int groups() const { return has_class() ? 6 : 5; }
};

using BoxParams = DecodedParams;

inline int decoder_output_width(int heading_bins, int n_classes) {
  return 3 + (n_classes > 0 ? 3 : 2) + 2 * heading_bins + n_classes + 2;
}

/// Slices and transforms one raw decoder column. n_classes = 0 decodes a
/// wall quad (2 size components, no class logits).
inline DecodedParams decode_params_raw(const Eigen::VectorXd& raw,
                                       int heading_bins, int n_classes) {
  const int n_size = n_classes > 0 ? 3 : 2;
  if (raw.size() != decoder_output_width(heading_bins, n_classes))
    throw std::invalid_argument("decode: raw width mismatch");
  DecodedParams p;
  int at = 0;
  p.center_offset = Vec3(raw(0), raw(1), raw(2));
  at += 3;
  p.size.resize(n_size);
  for (int i = 0; i < n_size; ++i) p.size(i) = softplus(raw(at + i));
  at += n_size;
  p.heading_bin_logits = raw.segment(at, heading_bins);
  at += heading_bins;
  p.heading_residuals =
      (kPi / heading_bins) * raw.segment(at, heading_bins).array().tanh();
  at += heading_bins;
  if (n_classes > 0) {
    p.class_logits = raw.segment(at, n_classes);
    at += n_classes;
  }
  p.objectness = raw.segment(at, 2);
  return p;
}

/// d(decoded)/d(raw): maps a DecodedParams-shaped gradient back onto the raw
/// decoder output column.
inline Eigen::VectorXd decode_params_backward(const DecodedParams& d,
                                              const Eigen::VectorXd& raw,
                                              int heading_bins,
                                              int n_classes) {
  const int n_size = n_classes > 0 ? 3 : 2;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(raw.size());
  int at = 0;
  out.segment<3>(0) = d.center_offset;
  at += 3;
  for (int i = 0; i < n_size; ++i)
    out(at + i) = d.size(i) * logistic(raw(at + i));
  at += n_size;
  out.segment(at, heading_bins) = d.heading_bin_logits;
  at += heading_bins;
  for (int i = 0; i < heading_bins; ++i) {
    const double t = std::tanh(raw(at + i));
    out(at + i) = d.heading_residuals(i) * (kPi / heading_bins) * (1 - t * t);
  }
  at += heading_bins;
  if (n_classes > 0) {
    out.segment(at, n_classes) = d.class_logits;
    at += n_classes;
  }
  out.segment(at, 2) = d.objectness;
  return out;
}

/// Contract operation: run the decoder net on a proposal feature and decode.
inline BoxParams decode_box(const Eigen::VectorXd& f, DenseNet& decoder,
                            int heading_bins, int n_classes) {
  if (decoder.input_width() != f.size() ||
      decoder.output_width() != decoder_output_width(heading_bins, n_classes))
    throw std::invalid_argument("decode_box: decoder width mismatch");
  return decode_params_raw(decoder.forward(f), heading_bins, n_classes);
}

// heading bin k covers yaw around center 2*pi*k/bins - pi
inline double heading_bin_center(int bin, int bins) {
  return 2.0 * kPi * bin / bins - kPi;
}

struct HeadingTarget {
  int bin = 0;
  double residual = 0;
};

inline HeadingTarget encode_heading(double yaw, int bins) {
  const double width = 2.0 * kPi / bins;
  const double shifted = normalize_angle(yaw);
  int bin = static_cast<int>(std::lround((shifted + kPi) / width));
  bin = ((bin % bins) + bins) % bins;
  HeadingTarget t;
  t.bin = bin;
  t.residual = normalize_angle(shifted - heading_bin_center(bin, bins));
  return t;
}

inline double decode_heading(int bin, double residual, int bins) {
  return normalize_angle(heading_bin_center(bin, bins) + residual);
}

// ---------------------------------------------------------------------------
// Prediction fusion (learnable per-group weights).
// ---------------------------------------------------------------------------

/// One weight per decoded parameter group, for each of the two sources.
/// Group order: center, size, heading bins, heading residuals, [class],
/// objectness.
struct FusionWeights {
  Eigen::VectorXd w1, w2;

  static FusionWeights init(int groups, double v1 = 0.5, double v2 = 0.5) {
    FusionWeights w;
    w.w1 = Eigen::VectorXd::Constant(groups, v1);
    w.w2 = Eigen::VectorXd::Constant(groups, v2);
    return w;
  }
};

inline DecodedParams fuse_predictions(const DecodedParams& vote,
                                      const DecodedParams& anchor,
                                      const FusionWeights& w) {
  if (vote.groups() != anchor.groups() || w.w1.size() != vote.groups())
    throw std::invalid_argument("fuse_predictions: group mismatch");
  const int oi = vote.has_class() ? 5 : 4;
  DecodedParams f;
  f.center_offset = w.w1(0) * vote.center_offset + w.w2(0) * anchor.center_offset;
  f.size = w.w1(1) * vote.size + w.w2(1) * anchor.size;
  f.heading_bin_logits =
      w.w1(2) * vote.heading_bin_logits + w.w2(2) * anchor.heading_bin_logits;
  f.heading_residuals =
      w.w1(3) * vote.heading_residuals + w.w2(3) * anchor.heading_residuals;
  if (vote.has_class())
    f.class_logits = w.w1(4) * vote.class_logits + w.w2(4) * anchor.class_logits;
  f.objectness = w.w1(oi) * vote.objectness + w.w2(oi) * anchor.objectness;
  return f;
}

/// Backward through the fusion: d(fused) -> d(vote side), d(anchor side),
/// and accumulated weight gradients.
inline void fuse_backward(const DecodedParams& d_fused,
                          const DecodedParams& vote,
                          const DecodedParams& anchor, const FusionWeights& w,
                          DecodedParams& d_vote, DecodedParams& d_anchor,
                          Eigen::VectorXd& d_w1, Eigen::VectorXd& d_w2) {
  const int oi = vote.has_class() ? 5 : 4;
  auto accum = [&](int g, const auto& dv, const auto& v, const auto& a,
                   auto& out_v, auto& out_a) {
    out_v = w.w1(g) * dv;
    out_a = w.w2(g) * dv;
    d_w1(g) += dv.cwiseProduct(v).sum();
    d_w2(g) += dv.cwiseProduct(a).sum();
  };
  accum(0, d_fused.center_offset, vote.center_offset, anchor.center_offset,
        d_vote.center_offset, d_anchor.center_offset);
  accum(1, d_fused.size, vote.size, anchor.size, d_vote.size, d_anchor.size);
  accum(2, d_fused.heading_bin_logits, vote.heading_bin_logits,
        anchor.heading_bin_logits, d_vote.heading_bin_logits,
        d_anchor.heading_bin_logits);
  accum(3, d_fused.heading_residuals, vote.heading_residuals,
        anchor.heading_residuals, d_vote.heading_residuals,
        d_anchor.heading_residuals);
  if (vote.has_class())
    accum(4, d_fused.class_logits, vote.class_logits, anchor.class_logits,
          d_vote.class_logits, d_anchor.class_logits);
  accum(oi, d_fused.objectness, vote.objectness, anchor.objectness,
        d_vote.objectness, d_anchor.objectness);
}

inline DecodedParams zero_like(const DecodedParams& p) {
  DecodedParams z;
  z.center_offset.setZero();
  z.size = Eigen::VectorXd::Zero(p.size.size());
  z.heading_bin_logits = Eigen::VectorXd::Zero(p.heading_bin_logits.size());
  z.heading_residuals = Eigen::VectorXd::Zero(p.heading_residuals.size());
  if (p.has_class()) z.class_logits = Eigen::VectorXd::Zero(p.class_logits.size());
  z.objectness.setZero();
  return z;
}

// ---------------------------------------------------------------------------
// Target assignment: positive within 0.3 m of the nearest ground-truth
// center, negative beyond 0.6 m, ignored in between.
// ---------------------------------------------------------------------------

inline std::vector<int> assign_targets(const std::vector<Vec3>& centers,
                                       const std::vector<Vec3>& gt_centers,
                                       double positive_radius = 0.3,
                                       double negative_radius = 0.6) {
  std::vector<int> out(centers.size(), kTargetNegative);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gt_centers.size(); ++g) {
      const double d = (centers[i] - gt_centers[g]).norm();
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(g);
      }
    }
    if (best < 0 || best_d > negative_radius)
      out[i] = kTargetNegative;
    else if (best_d < positive_radius)
      out[i] = best;
    else
      out[i] = kTargetIgnore;
  }
  return out;
}

/// Wall candidates are assigned by distance to the quad rectangle, not its
/// center: a wall patch cannot locate the midpoint of a long wall, while its
/// plane is locally observable. Same positive/negative band widths.
inline std::vector<int> assign_wall_targets(const std::vector<Vec3>& centers,
                                            const std::vector<WallQuad>& quads,
                                            double positive_radius = 0.3,
                                            double negative_radius = 0.6) {
  std::vector<int> out(centers.size(), kTargetNegative);
  for (std::size_t i = 0; i < centers.size(); ++i) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t q = 0; q < quads.size(); ++q) {
      const double d = quad_distance(quads[q], centers[i]);
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(q);
      }
    }
    if (best < 0 || best_d > negative_radius)
      out[i] = kTargetNegative;
    else if (best_d < positive_radius)
      out[i] = best;
    else
      out[i] = kTargetIgnore;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Single-head scaled dot-product self-attention with residual connection,
// used to relate wall proposals.
// ---------------------------------------------------------------------------

struct AttentionNets {
  DenseNet query, key, value;
};

struct AttentionForward {
  Eigen::MatrixXd X, Q, K, V, A;  // A: softmax weights, row i attends over j
  NetCache qc, kc, vc;
};

inline Eigen::MatrixXd wall_self_attention(const Eigen::MatrixXd& X,
                                           const AttentionNets& nets,
                                           AttentionForward* fwd = nullptr) {
  if (X.cols() < 1)
    throw std::invalid_argument("wall_self_attention: needs >= 1 proposal");
  AttentionForward local;
  AttentionForward& af = fwd ? *fwd : local;
  af.X = X;
  af.Q = nets.query.forward_batch(X, af.qc);
  af.K = nets.key.forward_batch(X, af.kc);
  af.V = nets.value.forward_batch(X, af.vc);
  const double scale = 1.0 / std::sqrt(static_cast<double>(af.Q.rows()));
  Eigen::MatrixXd S = scale * (af.Q.transpose() * af.K);  // (i,j)
  af.A.resizeLike(S);
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    const double m = S.row(i).maxCoeff();
    Eigen::ArrayXd e = (S.row(i).array() - m).exp();
    af.A.row(i) = (e / e.sum()).matrix();
  }
  return X + af.V * af.A.transpose();
}

inline Eigen::MatrixXd attention_backward(const Eigen::MatrixXd& dY,
                                          const AttentionForward& af,
                                          const AttentionNets& nets,
                                          GradTape& q_tape, GradTape& k_tape,
                                          GradTape& v_tape) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(af.Q.rows()));
  const Eigen::MatrixXd dV = dY * af.A;
  Eigen::MatrixXd dA = dY.transpose() * af.V;  // (i,j)
  Eigen::MatrixXd dS(dA.rows(), dA.cols());
  for (Eigen::Index i = 0; i < dA.rows(); ++i) {
    const double dot = dA.row(i).cwiseProduct(af.A.row(i)).sum();
    dS.row(i) = af.A.row(i).cwiseProduct(dA.row(i).array().matrix() -
                                         Eigen::RowVectorXd::Constant(
                                             dA.cols(), dot));
  }
  dS *= scale;
  const Eigen::MatrixXd dQ = af.K * dS.transpose();
  const Eigen::MatrixXd dK = af.Q * dS;
  Eigen::MatrixXd dX = dY;  // residual path
  dX += nets.query.backward_batch(dQ, af.qc, q_tape);
  dX += nets.key.backward_batch(dK, af.kc, k_tape);
  dX += nets.value.backward_batch(dV, af.vc, v_tape);
  return dX;
}

// ---------------------------------------------------------------------------
// Greedy non-maximum suppression with the rotated IoU.
// ---------------------------------------------------------------------------

inline std::vector<int> nms_3d(const std::vector<OrientedBox3>& boxes,
                               const std::vector<double>& scores,
                               double iou_threshold) {
  if (boxes.size() != scores.size())
    throw std::invalid_argument("nms_3d: count mismatch");
  std::vector<int> order(boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
  });
  std::vector<int> kept;
  std::vector<char> removed(boxes.size(), 0);
  for (int i : order) {
    if (removed[i]) continue;
    kept.push_back(i);
    for (int j : order)
      if (!removed[j] && j != i &&
          oriented_iou(boxes[i], boxes[j]) > iou_threshold)
        removed[j] = 1;
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Loss primitives.
// ---------------------------------------------------------------------------

struct ScalarGrad {
  double value = 0;
  Eigen::VectorXd grad;
};

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::ArrayXd e = (logits.array() - m).exp();
  return (e / e.sum()).matrix();
}

inline ScalarGrad softmax_cross_entropy(const Eigen::VectorXd& logits,
                                        int target) {
  const double m = logits.maxCoeff();
  Eigen::ArrayXd e = (logits.array() - m).exp();
  const double sum = e.sum();
  ScalarGrad out;
  out.value = std::log(sum) - (logits(target) - m);
  out.grad = (e / sum).matrix();
  out.grad(target) -= 1.0;
  return out;
}

inline double l1_value(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).cwiseAbs().sum();
}

inline Eigen::VectorXd l1_grad(const Eigen::VectorXd& a,
                               const Eigen::VectorXd& b) {
  return (a - b).cwiseSign();
}

// ---------------------------------------------------------------------------
// Composite detection loss: vote regression + objectness + box/quad parameter
// terms + per-branch anchor Chamfer terms, all mean-reduced, unit weights,
// plain sum.
// ---------------------------------------------------------------------------

struct SceneGtForLoss {
  std::vector<Vec3> obj_center;
  std::vector<Eigen::VectorXd> obj_size;  // 3-vectors
  std::vector<double> obj_yaw;
  std::vector<int> obj_class;
  std::vector<PointCloud> obj_surface;  // Chamfer targets per instance
  std::vector<WallQuad> walls;
  std::vector<PointCloud> wall_surface;
};

struct BranchPreds {
  std::vector<Vec3> centers;              // cluster centers c_i
  std::vector<DecodedParams> fused;
  std::vector<const AnchorSet*> anchors;  // nullable per candidate
  std::vector<int> targets;
  const VoteSet* votes = nullptr;
  const SeedLabels* labels = nullptr;
};

struct LossBreakdown {
  double vote_obj = 0, objectness_obj = 0, center_obj = 0, size_obj = 0,
         heading_bin_obj = 0, heading_res_obj = 0, class_obj = 0;
  double vote_wall = 0, objectness_wall = 0, center_wall = 0, size_wall = 0,
         heading_bin_wall = 0, heading_res_wall = 0;
  double anchor_obj = 0, anchor_wall = 0;
  bool no_positive_obj = false, no_positive_wall = false;
  bool no_object_seeds_obj = false, no_object_seeds_wall = false;

  double l_obj() const {
    return vote_obj + objectness_obj + center_obj + size_obj +
           heading_bin_obj + heading_res_obj + class_obj;
  }
  double l_wall() const {
    return vote_wall + objectness_wall + center_wall + size_wall +
           heading_bin_wall + heading_res_wall;
  }
  double total() const { return l_obj() + l_wall() + anchor_obj + anchor_wall; }

  void accumulate(const LossBreakdown& other, double weight) {
    vote_obj += weight * other.vote_obj;
    objectness_obj += weight * other.objectness_obj;
    center_obj += weight * other.center_obj;
    size_obj += weight * other.size_obj;
    heading_bin_obj += weight * other.heading_bin_obj;
    heading_res_obj += weight * other.heading_res_obj;
    class_obj += weight * other.class_obj;
    vote_wall += weight * other.vote_wall;
    objectness_wall += weight * other.objectness_wall;
    center_wall += weight * other.center_wall;
    size_wall += weight * other.size_wall;
    heading_bin_wall += weight * other.heading_bin_wall;
    heading_res_wall += weight * other.heading_res_wall;
    anchor_obj += weight * other.anchor_obj;
    anchor_wall += weight * other.anchor_wall;
    no_positive_obj = no_positive_obj || other.no_positive_obj;
    no_positive_wall = no_positive_wall || other.no_positive_wall;
    no_object_seeds_obj = no_object_seeds_obj || other.no_object_seeds_obj;
    no_object_seeds_wall = no_object_seeds_wall || other.no_object_seeds_wall;
  }
};

struct BranchGrads {
  std::vector<DecodedParams> d_fused;
  std::vector<Vec3> d_center;
  std::vector<Eigen::MatrixXd> d_anchor_points;  // 3 x N per positive
  Eigen::MatrixXd d_votes;                       // 3 x n_votes
};

struct DetectionLossGrads {
  BranchGrads obj, wall;
};

namespace detail {

struct BranchTermValues {
  double vote = 0, objectness = 0, center = 0, size = 0, heading_bin = 0,
         heading_res = 0, class_ce = 0, anchor = 0;
  bool no_positive = false, no_object_seeds = false;
};

// Wall anchors are supervised against a local window of the wall surface
// (|along - candidate projection| <= this), not the whole multi-meter quad
// that 18 unit-bounded anchors could never cover.
constexpr double kWallAnchorWindow = 1.0;

inline PointCloud wall_surface_window(const PointCloud& surface,
                                      const WallQuad& quad,
                                      const Vec3& candidate_center) {
  const Vec3 u = quad.along();
  const double at = (candidate_center - quad.center).dot(u);
  std::vector<std::pair<double, int>> by_dist;
  PointCloud out;
  for (int i = 0; i < static_cast<int>(surface.size()); ++i) {
    const double along = (surface.points[i] - quad.center).dot(u);
    const double d = std::abs(along - at);
    if (d <= kWallAnchorWindow) out.points.push_back(surface.points[i]);
    by_dist.emplace_back(d, i);
  }
  if (out.size() < 16) {  // degenerate window: take the nearest 16
    std::sort(by_dist.begin(), by_dist.end());
    out.points.clear();
    for (int k = 0; k < std::min<int>(16, by_dist.size()); ++k)
      out.points.push_back(surface.points[by_dist[k].second]);
  }
  return out;
}

inline BranchTermValues branch_loss(const BranchPreds& preds,
                                    const SceneGtForLoss& gt, bool is_wall,
                                    int heading_bins, BranchGrads* grads) {
  BranchTermValues t;
  const int n = static_cast<int>(preds.fused.size());
  if (grads) {
    grads->d_fused.resize(n);
    for (int i = 0; i < n; ++i) grads->d_fused[i] = zero_like(preds.fused[i]);
    grads->d_center.assign(n, Vec3::Zero());
    grads->d_anchor_points.assign(n, Eigen::MatrixXd());
  }

  if (preds.votes && preds.labels) {
    const VoteLossResult vres = vote_loss(*preds.votes, *preds.labels);
    t.vote = vres.value;
    t.no_object_seeds = vres.no_object_seeds;
    if (grads)
      grads->d_votes = vote_loss_backward(*preds.votes, *preds.labels, 1.0);
  }

  int n_scored = 0, n_pos = 0, n_anchored = 0;
  for (int i = 0; i < n; ++i) {
    if (preds.targets[i] != kTargetIgnore) ++n_scored;
    if (preds.targets[i] >= 0) {
      ++n_pos;
      if (preds.anchors[i]) ++n_anchored;
    }
  }
  t.no_positive = (n_pos == 0);

  for (int i = 0; i < n; ++i) {
    const int tgt = preds.targets[i];
    const DecodedParams& p = preds.fused[i];
    if (tgt != kTargetIgnore && n_scored > 0) {
      const ScalarGrad ce = softmax_cross_entropy(p.objectness, tgt >= 0 ? 1 : 0);
      t.objectness += ce.value / n_scored;
      if (grads) grads->d_fused[i].objectness += ce.grad / n_scored;
    }
    if (tgt < 0) continue;

    // branch-specific regression targets
    Vec3 gt_center;
    Eigen::VectorXd gt_size;
    double gt_yaw;
    int cls = -1;
    PointCloud anchor_target;
    if (is_wall) {
      const WallQuad& quad = gt.walls[tgt];
      gt_center = quad_axis_point(quad, preds.centers[i]);
      gt_size.resize(2);
      gt_size << quad.width, quad.height;
      // wall direction is a modulo-pi quantity: bin the doubled angle
      gt_yaw = normalize_angle(2.0 * quad.yaw);
      if (preds.anchors[i] && tgt < static_cast<int>(gt.wall_surface.size()))
        anchor_target = wall_surface_window(gt.wall_surface[tgt], quad,
                                            preds.centers[i]);
    } else {
      gt_center = gt.obj_center[tgt];
      gt_size = gt.obj_size[tgt];
      gt_yaw = gt.obj_yaw[tgt];
      cls = gt.obj_class[tgt];
      if (preds.anchors[i] && tgt < static_cast<int>(gt.obj_surface.size()))
        anchor_target = gt.obj_surface[tgt];
    }

    const Vec3 pred_center = preds.centers[i] + p.center_offset;
    t.center += l1_value(pred_center, gt_center) / n_pos;
    t.size += l1_value(p.size, gt_size) / n_pos;
    const HeadingTarget h = encode_heading(gt_yaw, heading_bins);
    const ScalarGrad hce = softmax_cross_entropy(p.heading_bin_logits, h.bin);
    t.heading_bin += hce.value / n_pos;
    t.heading_res += std::abs(p.heading_residuals(h.bin) - h.residual) / n_pos;
    ScalarGrad cce;
    if (cls >= 0) {
      cce = softmax_cross_entropy(p.class_logits, cls);
      t.class_ce += cce.value / n_pos;
    }
    if (preds.anchors[i] && !anchor_target.empty())
      t.anchor += anchor_loss(*preds.anchors[i], anchor_target) / n_anchored;

    if (grads) {
      DecodedParams& d = grads->d_fused[i];
      const Vec3 dc = l1_grad(pred_center, gt_center) / n_pos;
      d.center_offset += dc;
      Vec3 d_ci = dc;
      if (is_wall) {
        // the axis-projected target moves with the candidate: subtract the
        // projection Jacobian u u^T unless the clamp is active
        const WallQuad& quad = gt.walls[tgt];
        const Vec3 u = quad.along();
        const double along = (preds.centers[i] - quad.center).dot(u);
        if (std::abs(along) < 0.5 * quad.width) d_ci -= u * dc.dot(u);
      }
      grads->d_center[i] += d_ci;
      d.size += l1_grad(p.size, gt_size) / n_pos;
      d.heading_bin_logits += hce.grad / n_pos;
      const double r = p.heading_residuals(h.bin) - h.residual;
      d.heading_residuals(h.bin) +=
          (r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0)) / n_pos;
      if (cls >= 0) d.class_logits += cce.grad / n_pos;
      if (preds.anchors[i] && !anchor_target.empty())
        grads->d_anchor_points[i] = chamfer_backward(
            preds.anchors[i]->deformed, anchor_target, 1.0 / n_anchored);
    }
  }
  return t;
}

}  // namespace detail

/// Contract operation: composite detection loss over one scene with per-term
/// breakdown; optionally fills gradients for every smooth input.
inline LossBreakdown detection_loss(const BranchPreds& obj,
                                    const BranchPreds& wall,
                                    const SceneGtForLoss& gt, int heading_bins,
                                    DetectionLossGrads* grads = nullptr) {
  const detail::BranchTermValues to = detail::branch_loss(
      obj, gt, /*is_wall=*/false, heading_bins, grads ? &grads->obj : nullptr);
  const detail::BranchTermValues tw = detail::branch_loss(
      wall, gt, /*is_wall=*/true, heading_bins, grads ? &grads->wall : nullptr);

  LossBreakdown b;
  b.vote_obj = to.vote;
  b.objectness_obj = to.objectness;
  b.center_obj = to.center;
  b.size_obj = to.size;
  b.heading_bin_obj = to.heading_bin;
  b.heading_res_obj = to.heading_res;
  b.class_obj = to.class_ce;
  b.anchor_obj = to.anchor;
  b.no_positive_obj = to.no_positive;
  b.no_object_seeds_obj = to.no_object_seeds;
  b.vote_wall = tw.vote;
  b.objectness_wall = tw.objectness;
  b.center_wall = tw.center;
  b.size_wall = tw.size;
  b.heading_bin_wall = tw.heading_bin;
  b.heading_res_wall = tw.heading_res;
  b.anchor_wall = tw.anchor;
  b.no_positive_wall = tw.no_positive;
  b.no_object_seeds_wall = tw.no_object_seeds;
  return b;
}

}  // namespace ancs
