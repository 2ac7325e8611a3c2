#pragma once

#include <string>
#include <vector>

#include "anchorscene/checkpoint.hpp"
#include "anchorscene/config.hpp"
#include "anchorscene/io.hpp"
#include "anchorscene/layout.hpp"
#include "anchorscene/pipeline.hpp"
#include "anchorscene/shape_decoder.hpp"
#include "anchorscene/synth.hpp"

namespace ancs {

struct ShapeConfig {
  int feature_width = 128;
  int embed_width = 256, enc_hidden = 128, dec_hidden = 128;
  int queries_uniform = 1024, queries_near = 1024;
  double near_sigma = 0.05;
  int prior_cap = 256, queries_per_step = 128;
  int grid_resolution = 32;
  double iso = 0.5;
  bool use_anchor_augment = true;

  static ShapeConfig from_config(const Config& c) {
    ShapeConfig s;
    s.feature_width = c.get_i("model.feature_width");
    s.embed_width = c.get_i("shape.embed_width");
    s.enc_hidden = c.get_i("shape.enc_hidden");
    s.dec_hidden = c.get_i("shape.dec_hidden");
    s.queries_uniform = c.get_i("shape.queries_uniform");
    s.queries_near = c.get_i("shape.queries_near");
    s.near_sigma = c.get_d("shape.near_sigma");
    s.prior_cap = c.get_i("shape.prior_cap");
    s.queries_per_step = c.get_i("shape.queries_per_step");
    s.grid_resolution = c.get_i("shape.grid_resolution");
    s.iso = c.get_d("shape.iso");
    s.use_anchor_augment = c.get_b("shape.use_anchor_augment");
    return s;
  }
};

struct ShapeModel {
  ShapeConfig cfg;
  DenseNet enc, dec;

  static ShapeModel create(const ShapeConfig& cfg, std::uint64_t seed) {
    ShapeModel m;
    m.cfg = cfg;
    m.enc = DenseNet::create(
        {3 + 2 * cfg.feature_width, cfg.enc_hidden, cfg.embed_width},
        {Activation::Relu, Activation::Relu}, derive_seed(seed, 0xe2c));
    m.dec = DenseNet::create(
        {cfg.embed_width + 3, cfg.dec_hidden, cfg.dec_hidden, 1},
        {Activation::Relu, Activation::Relu, Activation::None},
        derive_seed(seed, 0xdec));
    return m;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.nets["shape.enc"] = enc;
    ck.nets["shape.dec"] = dec;
    ck.meta["kind"] = "shape";
    return ck;
  }

  static ShapeModel from_checkpoint(const Checkpoint& ck,
                                    const ShapeConfig& cfg) {
    ShapeModel m;
    m.cfg = cfg;
    m.enc = ck.nets.at("shape.enc");
    m.dec = ck.nets.at("shape.dec");
    return m;
  }
};

enum class PriorMode { AnchorGuided, BoxCrop };

inline PriorMode prior_mode_from_string(const std::string& s) {
  if (s == "anchor") return PriorMode::AnchorGuided;
  if (s == "boxcrop") return PriorMode::BoxCrop;
  throw std::invalid_argument("unknown prior mode: " + s);
}

/// Gathers the geometry prior for one detection, either anchor-guided or by
/// cropping the predicted box (the sampling ablation baseline).
inline PointCloud build_prior(const PointCloud& scan,
                              const DetectedObject& det, PriorMode mode,
                              const ModelConfig& cfg) {
  if (mode == PriorMode::BoxCrop) {
    PointCloud out;
    for (const Vec3& p : scan.points)
      if (point_in_box(det.box, p, 0.05)) out.points.push_back(p);
    return out;
  }
  const InstanceSampleResult r = sample_instance_points(
      scan, det.anchors, cfg.sample_iterations, cfg.anchor_radius_floor);
  return gather_points(scan, r.indices);
}

/// Deterministic subsample keeping encoder batch sizes bounded.
inline std::vector<Vec3> cap_points(const std::vector<Vec3>& pts, int cap,
                                    std::uint64_t seed) {
  if (static_cast<int>(pts.size()) <= cap) return pts;
  Rng rng(seed);
  std::vector<int> idx(pts.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  for (std::size_t i = idx.size() - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_index(i + 1)]);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<Vec3> out;
  out.reserve(cap);
  for (int i : idx) out.push_back(pts[i]);
  return out;
}

struct ReconstructedObject {
  DetectedObject det;
  PointCloud prior;  // world-frame scan points
  TriMesh mesh;      // world-frame
  bool empty_mesh = false;
  bool anchor_fallback = false;
};

inline ReconstructedObject reconstruct_object(const ShapeModel& shape,
                                              const ModelConfig& det_cfg,
                                              const PointCloud& scan,
                                              const DetectedObject& det,
                                              PriorMode mode) {
  ReconstructedObject out;
  out.det = det;
  out.prior = build_prior(scan, det, mode, det_cfg);

  std::vector<Vec3> enc_world = out.prior.points;
  if (shape.cfg.use_anchor_augment && mode == PriorMode::AnchorGuided)
    enc_world.insert(enc_world.end(), det.anchors.deformed.points.begin(),
                     det.anchors.deformed.points.end());
  enc_world = cap_points(enc_world, shape.cfg.prior_cap, 0xca9);
  const std::vector<Vec3> enc_pts = canonicalize_isotropic(enc_world, det.box);
  const std::vector<Vec3> anchor_pts =
      canonicalize_isotropic(det.anchors.deformed.points, det.box);

  EncodeForward ef;
  const ShapeEmbedding emb = encode_shape_with(enc_pts, anchor_pts, det.f_vote,
                                               det.f_anchor, shape.enc, &ef);
  out.anchor_fallback = ef.anchor_fallback;
  const ExtractResult ex = extract_mesh(emb, shape.dec,
                                        shape.cfg.grid_resolution,
                                        shape.cfg.iso);
  out.empty_mesh = ex.mesh.empty();
  if (!out.empty_mesh) out.mesh = align_to_scene(ex.mesh, det.box);
  return out;
}

// ---------------------------------------------------------------------------
// Scene assembly: layout polyline from wall quads plus aligned object meshes.
// ---------------------------------------------------------------------------

struct ReconstructOptions {
  double objectness_cutoff = 0.5;
  double nms_iou = 0.25;
  PriorMode prior_mode = PriorMode::AnchorGuided;
  double merge_angle_deg = 15, merge_dist = 0.3, parallel_angle_deg = 5;

  static ReconstructOptions from_config(const Config& c) {
    ReconstructOptions o;
    o.objectness_cutoff = c.get_d("recon.objectness");
    o.nms_iou = c.get_d("recon.nms_iou");
    o.merge_angle_deg = c.get_d("layout.merge_angle_deg");
    o.merge_dist = c.get_d("layout.merge_dist");
    o.parallel_angle_deg = c.get_d("layout.parallel_angle_deg");
    return o;
  }
};

struct SceneModel {
  std::vector<ReconstructedObject> objects;
  std::vector<WallQuad> walls;
  LayoutPolyline layout;
  bool layout_failed = false;
};

inline SceneModel reconstruct_scene(const DetectorModel& det,
                                    const ShapeModel& shape,
                                    const PointCloud& scan,
                                    const ReconstructOptions& opts) {
  SceneModel model;
  const DetectionOutput detections =
      run_detector(det, scan, opts.objectness_cutoff, opts.nms_iou);
  for (const DetectedObject& d : detections.objects)
    model.objects.push_back(
        reconstruct_object(shape, det.cfg, scan, d, opts.prior_mode));
  for (const DetectedWall& w : detections.walls) model.walls.push_back(w.quad);
  if (model.walls.size() >= 2) {
    model.layout = quads_to_corners(model.walls, opts.merge_angle_deg,
                                    opts.merge_dist, opts.parallel_angle_deg);
  } else {
    model.layout_failed = true;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Export: boxes.json + per-object OBJ/JSON + layout OBJ/JSON + anchor debug
// PLY (anchors saturated, sampled prior points pale, hue per proposal).
// ---------------------------------------------------------------------------

inline nlohmann::json scene_model_boxes_json(const SceneModel& m) {
  nlohmann::json j;
  j["boxes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < m.objects.size(); ++i) {
    const ReconstructedObject& o = m.objects[i];
    char mesh_name[64];
    std::snprintf(mesh_name, sizeof(mesh_name), "meshes/obj_%03d.obj",
                  static_cast<int>(i));
    j["boxes"].push_back(
        {{"class", category_name(static_cast<Category>(o.det.category))},
         {"center",
          {o.det.box.center.x(), o.det.box.center.y(), o.det.box.center.z()}},
         {"size", {o.det.box.size.x(), o.det.box.size.y(), o.det.box.size.z()}},
         {"yaw", o.det.box.yaw},
         {"score", o.det.score},
         {"objectness", o.det.objectness},
         {"mesh", mesh_name}});
  }
  return j;
}

inline void write_scene_model(const fs::path& dir, const SceneModel& m) {
  fs::create_directories(dir / "meshes");
  atomic_write_file(dir / "boxes.json", scene_model_boxes_json(m).dump(2));
  for (std::size_t i = 0; i < m.objects.size(); ++i) {
    const ReconstructedObject& o = m.objects[i];
    char base[64];
    std::snprintf(base, sizeof(base), "obj_%03d", static_cast<int>(i));
    write_obj(dir / "meshes" / (std::string(base) + ".obj"), o.mesh);
    nlohmann::json side{
        {"class", category_name(static_cast<Category>(o.det.category))},
        {"score", o.det.score},
        {"objectness", o.det.objectness},
        {"center",
         {o.det.box.center.x(), o.det.box.center.y(), o.det.box.center.z()}},
        {"size", {o.det.box.size.x(), o.det.box.size.y(), o.det.box.size.z()}},
        {"yaw", o.det.box.yaw},
        {"empty_mesh", o.empty_mesh},
        {"prior_points", o.prior.size()}};
    atomic_write_file(dir / "meshes" / (std::string(base) + ".json"),
                      side.dump(2));
  }
  atomic_write_file(
      dir / "layout.json",
      layout_to_json(m.layout.corners, m.layout.closed, &m.walls).dump(2));
  double height = 0;
  for (const WallQuad& w : m.walls) height = std::max(height, w.height);
  if (!m.layout.corners.empty())
    write_obj(dir / "layout.obj",
              layout_to_mesh(m.layout, height > 0 ? height : 2.5));

  // anchor + prior debug cloud
  PointCloud debug;
  std::vector<PlyColor> colors;
  for (std::size_t i = 0; i < m.objects.size(); ++i) {
    const ReconstructedObject& o = m.objects[i];
    const double hue = std::fmod(0.61803398875 * i, 1.0) * 2 * kPi;
    const auto tone = [&](double s) {
      return PlyColor{
          static_cast<std::uint8_t>(127 + s * 120 * std::cos(hue)),
          static_cast<std::uint8_t>(127 + s * 120 * std::cos(hue + 2.1)),
          static_cast<std::uint8_t>(127 + s * 120 * std::cos(hue + 4.2))};
    };
    for (const Vec3& p : o.det.anchors.deformed.points) {
      debug.points.push_back(p);
      colors.push_back(tone(1.0));
    }
    for (const Vec3& p : o.prior.points) {
      debug.points.push_back(p);
      colors.push_back(tone(0.35));
    }
  }
  write_ply(dir / "anchors_debug.ply", debug, /*binary=*/true, &colors);
}

}  // namespace ancs
