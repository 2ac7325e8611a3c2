#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anchorscene/geometry.hpp"

namespace ancs {

// ---------------------------------------------------------------------------
// Detection mAP: per class, confidence-ordered greedy matching against
// unmatched ground truth of the same scene, all-point PR interpolation.
// ---------------------------------------------------------------------------

struct EvalBox {
  OrientedBox3 box;
  std::string category;
  double score = 1.0;
  int scene = 0;
};

struct ApReport {
  std::map<std::string, double> per_class;
  double map = 0;
  std::vector<std::string> skipped_classes;  // zero ground truth
};

namespace detail {

inline double area_under_pr(const std::vector<char>& is_tp, int n_gt) {
  // all-point interpolation: integrate max-precision-at-recall>=r
  const int n = static_cast<int>(is_tp.size());
  if (n_gt == 0) return 0;
  std::vector<double> precision(n), recall(n);
  int tp = 0;
  for (int i = 0; i < n; ++i) {
    tp += is_tp[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / (i + 1);
    recall[i] = static_cast<double>(tp) / n_gt;
  }
  for (int i = n - 2; i >= 0; --i)
    precision[i] = std::max(precision[i], precision[i + 1]);
  double ap = 0, prev_recall = 0;
  for (int i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

template <typename MatchQuality>
ApReport ranked_ap(const std::vector<EvalBox>& preds,
                   const std::vector<EvalBox>& gts,
                   const MatchQuality& quality) {
  // quality(pred_i, gt_j) returns a matchable score or NaN when unmatchable;
  // larger is better.
  std::map<std::string, std::vector<int>> gt_by_class, pred_by_class;
  for (int g = 0; g < static_cast<int>(gts.size()); ++g)
    gt_by_class[gts[g].category].push_back(g);
  for (int p = 0; p < static_cast<int>(preds.size()); ++p)
    pred_by_class[preds[p].category].push_back(p);

  ApReport report;
  int classes_counted = 0;
  double ap_sum = 0;
  std::map<std::string, char> all_classes;
  for (const auto& [c, v] : gt_by_class) all_classes[c] = 1;
  for (const auto& [c, v] : pred_by_class) all_classes[c] = 1;

  for (const auto& [cls, flag] : all_classes) {
    const auto git = gt_by_class.find(cls);
    if (git == gt_by_class.end() || git->second.empty()) {
      report.skipped_classes.push_back(cls);
      continue;
    }
    const std::vector<int>& gt_idx = git->second;
    std::vector<int> order;
    if (auto pit = pred_by_class.find(cls); pit != pred_by_class.end())
      order = pit->second;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return preds[a].score > preds[b].score;
    });
    std::vector<char> gt_used(gt_idx.size(), 0);
    std::vector<char> is_tp(order.size(), 0);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const int p = order[k];
      int best = -1;
      double best_q = -std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < gt_idx.size(); ++g) {
        if (gt_used[g] || gts[gt_idx[g]].scene != preds[p].scene) continue;
        const double q = quality(p, gt_idx[g]);
        if (std::isnan(q)) continue;
        if (q > best_q) {
          best_q = q;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        gt_used[best] = 1;
        is_tp[k] = 1;
      }
    }
    const double ap = area_under_pr(is_tp, static_cast<int>(gt_idx.size()));
    report.per_class[cls] = ap;
    ap_sum += ap;
    ++classes_counted;
  }
  report.map = classes_counted > 0 ? ap_sum / classes_counted : 0.0;
  return report;
}

}  // namespace detail

inline ApReport detection_map(const std::vector<EvalBox>& preds,
                              const std::vector<EvalBox>& gts,
                              double iou_threshold) {
  return detail::ranked_ap(preds, gts, [&](int p, int g) {
    const double iou = oriented_iou(preds[p].box, gts[g].box);
    return iou >= iou_threshold ? iou
                                : std::numeric_limits<double>::quiet_NaN();
  });
}

// ---------------------------------------------------------------------------
// Chamfer-distance mAP over scene-aligned meshes.
// ---------------------------------------------------------------------------

struct EvalMesh {
  PointCloud samples;  // fixed-seed surface samples; empty mesh -> empty
  std::string category;
  double score = 1.0;
  int scene = 0;
};

inline EvalMesh make_eval_mesh(const TriMesh& mesh, const std::string& category,
                               double score, int scene, int n_samples,
                               std::uint64_t seed) {
  EvalMesh m;
  m.category = category;
  m.score = score;
  m.scene = scene;
  if (!mesh.empty()) m.samples = sample_mesh_surface(mesh, n_samples, seed);
  return m;
}

inline ApReport cd_map(const std::vector<EvalMesh>& preds,
                       const std::vector<EvalMesh>& gts, double cd_threshold) {
  std::vector<EvalBox> pboxes(preds.size()), gboxes(gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    pboxes[i] = {OrientedBox3(), preds[i].category, preds[i].score,
                 preds[i].scene};
  for (std::size_t i = 0; i < gts.size(); ++i)
    gboxes[i] = {OrientedBox3(), gts[i].category, gts[i].score, gts[i].scene};
  return detail::ranked_ap(pboxes, gboxes, [&](int p, int g) {
    if (preds[p].samples.empty() || gts[g].samples.empty())
      return std::numeric_limits<double>::quiet_NaN();
    const double cd = chamfer_distance(preds[p].samples, gts[g].samples);
    // smaller CD is better; negate so larger-is-better holds
    return cd <= cd_threshold ? -cd : std::numeric_limits<double>::quiet_NaN();
  });
}

// ---------------------------------------------------------------------------
// Layout corner F1: greedy globally-closest pairing under a distance cap.
// ---------------------------------------------------------------------------

struct LayoutScore {
  double precision = 0, recall = 0, f1 = 0;
  int matches = 0;
  bool both_empty = false;
};

inline LayoutScore layout_f1(const std::vector<Vec3>& pred_corners,
                             const std::vector<Vec3>& gt_corners,
                             double dist_threshold = 0.3) {
  LayoutScore s;
  if (pred_corners.empty() && gt_corners.empty()) {
    s.precision = s.recall = s.f1 = 1.0;
    s.both_empty = true;
    return s;
  }
  struct Pair {
    double d;
    int p, g;
  };
  std::vector<Pair> pairs;
  for (int p = 0; p < static_cast<int>(pred_corners.size()); ++p)
    for (int g = 0; g < static_cast<int>(gt_corners.size()); ++g) {
      const double d = (pred_corners[p] - gt_corners[g]).norm();
      if (d <= dist_threshold) pairs.push_back({d, p, g});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return a.d != b.d ? a.d < b.d : (a.p != b.p ? a.p < b.p : a.g < b.g);
  });
  std::vector<char> pu(pred_corners.size(), 0), gu(gt_corners.size(), 0);
  for (const Pair& pr : pairs) {
    if (pu[pr.p] || gu[pr.g]) continue;
    pu[pr.p] = gu[pr.g] = 1;
    ++s.matches;
  }
  s.precision = pred_corners.empty()
                    ? 1.0
                    : static_cast<double>(s.matches) / pred_corners.size();
  s.recall = gt_corners.empty()
                 ? 1.0
                 : static_cast<double>(s.matches) / gt_corners.size();
  s.f1 = (s.precision + s.recall) > 0
             ? 2 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

/// Aggregates per-scene corner sets into corpus-level precision/recall/F1.
inline LayoutScore layout_f1_corpus(
    const std::vector<std::vector<Vec3>>& pred_per_scene,
    const std::vector<std::vector<Vec3>>& gt_per_scene, double dist_threshold) {
  LayoutScore s;
  int n_pred = 0, n_gt = 0;
  for (std::size_t i = 0; i < pred_per_scene.size(); ++i) {
    const LayoutScore per = layout_f1(pred_per_scene[i], gt_per_scene[i],
                                      dist_threshold);
    s.matches += per.matches;
    n_pred += static_cast<int>(pred_per_scene[i].size());
    n_gt += static_cast<int>(gt_per_scene[i].size());
  }
  if (n_pred == 0 && n_gt == 0) {
    s.precision = s.recall = s.f1 = 1.0;
    s.both_empty = true;
    return s;
  }
  s.precision = n_pred ? static_cast<double>(s.matches) / n_pred : 1.0;
  s.recall = n_gt ? static_cast<double>(s.matches) / n_gt : 1.0;
  s.f1 = (s.precision + s.recall) > 0
             ? 2 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

inline nlohmann::json ap_report_json(const ApReport& r) {
  nlohmann::json j;
  j["mAP"] = r.map;
  j["per_class"] = r.per_class;
  j["skipped_classes"] = r.skipped_classes;
  return j;
}

}  // namespace ancs
