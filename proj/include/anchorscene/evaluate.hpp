#pragma once

#include <optional>
#include <string>
#include <vector>

#include "anchorscene/config.hpp"
#include "anchorscene/eval.hpp"
#include "anchorscene/synth.hpp"

namespace ancs {

struct SceneEvalData {
  std::vector<LoadedBox> boxes;
  std::vector<Vec3> corners;
};

/// Accepts a reconstruction output directory (`<root>/<id>/boxes.json`) or a
/// ground-truth corpus (`<root>/scenes/<id>/gt/boxes.json`); the two share
/// the boxes/layout/meshes schema.
inline std::optional<SceneEvalData> load_eval_scene(const fs::path& root,
                                                    const std::string& id) {
  fs::path dir;
  if (fs::exists(root / id / "boxes.json"))
    dir = root / id;
  else if (fs::exists(root / "scenes" / id / "gt" / "boxes.json"))
    dir = root / "scenes" / id / "gt";
  else
    return std::nullopt;
  SceneEvalData d;
  d.boxes = load_boxes_json(dir / "boxes.json");
  if (fs::exists(dir / "layout.json"))
    load_layout_json(dir / "layout.json", &d.corners, nullptr, nullptr);
  return d;
}

struct CorpusEvalReport {
  nlohmann::json json;
  std::string csv;
};

/// The full evaluation protocol: box mAP at each IoU threshold, mesh mAP at
/// each Chamfer threshold, corpus-level layout F1.
inline CorpusEvalReport evaluate_corpora(const fs::path& pred_root,
                                         const fs::path& gt_root,
                                         const Config& config) {
  const std::vector<double> iou_thresholds =
      config.get_list("eval.iou_thresholds");
  const std::vector<double> cd_thresholds =
      config.get_list("eval.cd_thresholds");
  const double layout_dist = config.get_d("eval.layout_dist");
  const int cd_samples = config.get_i("eval.cd_samples");

  const std::vector<std::string> ids = corpus_scene_ids(gt_root);

  std::vector<EvalBox> pred_boxes, gt_boxes;
  std::vector<EvalMesh> pred_meshes, gt_meshes;
  std::vector<std::vector<Vec3>> pred_corners(ids.size()),
      gt_corners(ids.size());

  for (std::size_t si = 0; si < ids.size(); ++si) {
    const auto gt = load_eval_scene(gt_root, ids[si]);
    if (!gt) throw std::runtime_error("missing ground truth for " + ids[si]);
    const auto pred = load_eval_scene(pred_root, ids[si]);
    gt_corners[si] = gt->corners;
    if (pred) pred_corners[si] = pred->corners;

    auto add = [&](const std::vector<LoadedBox>& boxes,
                   std::vector<EvalBox>& box_out,
                   std::vector<EvalMesh>& mesh_out, std::uint64_t tag) {
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        const LoadedBox& b = boxes[k];
        box_out.push_back({b.box, b.category, b.score, static_cast<int>(si)});
        TriMesh mesh;
        if (!b.mesh_path.empty() && fs::exists(b.mesh_path))
          mesh = read_obj(b.mesh_path);
        mesh_out.push_back(make_eval_mesh(mesh, b.category, b.score,
                                          static_cast<int>(si), cd_samples,
                                          derive_seed(tag, si, k)));
      }
    };
    add(gt->boxes, gt_boxes, gt_meshes, 0x97ea1);
    if (pred) add(pred->boxes, pred_boxes, pred_meshes, 0x94ed);
  }

  CorpusEvalReport out;
  out.json["scenes"] = ids.size();
  std::ostringstream csv;
  csv.precision(10);
  csv << "metric,class,value\n";

  char key[64];
  for (double thr : iou_thresholds) {
    const ApReport r = detection_map(pred_boxes, gt_boxes, thr);
    std::snprintf(key, sizeof(key), "iou_%.2f", thr);
    out.json["detection"][key] = ap_report_json(r);
    csv << "detection_mAP@" << key + 4 << ",all," << r.map << "\n";
    for (const auto& [cls, ap] : r.per_class)
      csv << "detection_AP@" << key + 4 << "," << cls << "," << ap << "\n";
  }
  for (double thr : cd_thresholds) {
    const ApReport r = cd_map(pred_meshes, gt_meshes, thr);
    std::snprintf(key, sizeof(key), "cd_%.3f", thr);
    out.json["reconstruction"][key] = ap_report_json(r);
    csv << "cd_mAP@" << key + 3 << ",all," << r.map << "\n";
    for (const auto& [cls, ap] : r.per_class)
      csv << "cd_AP@" << key + 3 << "," << cls << "," << ap << "\n";
  }
  const LayoutScore ls = layout_f1_corpus(pred_corners, gt_corners, layout_dist);
  out.json["layout"] = {{"precision", ls.precision},
                        {"recall", ls.recall},
                        {"f1", ls.f1},
                        {"threshold", layout_dist},
                        {"both_empty", ls.both_empty}};
  csv << "layout_precision,all," << ls.precision << "\n";
  csv << "layout_recall,all," << ls.recall << "\n";
  csv << "layout_f1,all," << ls.f1 << "\n";
  out.csv = csv.str();
  return out;
}

}  // namespace ancs
