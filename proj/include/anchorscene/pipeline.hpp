#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "anchorscene/anchors.hpp"
#include "anchorscene/backbone.hpp"
#include "anchorscene/checkpoint.hpp"
#include "anchorscene/config.hpp"
#include "anchorscene/heads.hpp"
#include "anchorscene/proposal.hpp"
#include "anchorscene/synth.hpp"

namespace ancs {

struct ModelConfig {
  BackboneConfig backbone;
  int feature_width = 128;
  int scan_feature_width = 1;  // height above the floor plane
  int l1_width = 64, hidden1 = 64, hidden2 = 128;
  int vote_hidden = 128;
  int obj_candidates = 64, wall_candidates = 16;
  double cluster_radius = 0.3;
  int max_members = 16;
  int anchor_count = 18;
  int gt_surface_samples = 512;
  double anchor_radius_floor = 0.02;
  int sample_iterations = 2;
  int deform_hidden = 64, fuse_hidden = 0;
  int heading_bins = 12, decoder_hidden = 128;
  double positive_radius = 0.3, negative_radius = 0.6;
  int n_classes = kNumCategories;

  static ModelConfig from_config(const Config& c) {
    ModelConfig m;
    m.backbone = BackboneConfig::from_config(c);
    m.feature_width = c.get_i("model.feature_width");
    m.l1_width = c.get_i("backbone.level1_width");
    m.hidden1 = c.get_i("backbone.hidden1");
    m.hidden2 = c.get_i("backbone.hidden2");
    m.vote_hidden = c.get_i("proposal.vote_hidden");
    m.obj_candidates = c.get_i("proposal.obj_candidates");
    m.wall_candidates = c.get_i("proposal.wall_candidates");
    m.cluster_radius = c.get_d("proposal.cluster_radius");
    m.max_members = c.get_i("proposal.max_members");
    m.anchor_count = c.get_i("anchors.count");
    m.gt_surface_samples = c.get_i("anchors.gt_samples");
    m.anchor_radius_floor = c.get_d("anchors.radius_floor");
    m.sample_iterations = c.get_i("anchors.sample_iterations");
    m.deform_hidden = c.get_i("anchors.deform_hidden");
    m.fuse_hidden = c.get_i("anchors.fuse_hidden");
    m.heading_bins = c.get_i("heads.heading_bins");
    m.decoder_hidden = c.get_i("heads.decoder_hidden");
    m.positive_radius = c.get_d("heads.positive_radius");
    m.negative_radius = c.get_d("heads.negative_radius");
    return m;
  }
};

struct BranchNets {
  SaStack sa;
  DenseNet vote, pool, deform, fuse, dec_vote, dec_anchor;
  FusionWeights w;
  AdamVector w1_adam, w2_adam;
};

/// The dual-branch anchor-guided detector. `use_anchor_branch = false` drops
/// the anchor path entirely (vote-only decoding), which is the detection
/// ablation baseline.
struct DetectorModel {
  ModelConfig cfg;
  BranchNets obj, wall;
  AttentionNets attn;
  PointCloud anchor_template;
  bool use_anchor_branch = true;

  static DetectorModel create(const ModelConfig& cfg, std::uint64_t seed) {
    DetectorModel m;
    m.cfg = cfg;
    m.anchor_template = sphere_template(cfg.anchor_count);
    const int fw = cfg.feature_width;
    auto mk = [&](std::uint64_t tag, std::vector<int> widths,
                  std::vector<Activation> acts) {
      return DenseNet::create(widths, acts, derive_seed(seed, tag));
    };
    auto make_branch = [&](BranchNets& b, bool is_wall, std::uint64_t base) {
      const int out_w = decoder_output_width(
          cfg.heading_bins, is_wall ? 0 : cfg.n_classes);
      b.sa.level1 = mk(base + 1,
                       {3 + cfg.scan_feature_width, cfg.hidden1, cfg.l1_width},
                       {Activation::Relu, Activation::Relu});
      b.sa.level2 = mk(base + 2, {3 + cfg.l1_width, cfg.hidden2, fw},
                       {Activation::Relu, Activation::Relu});
      b.vote = mk(base + 3, {fw, cfg.vote_hidden, 3 + fw},
                  {Activation::Relu, Activation::None});
      b.pool = mk(base + 4, {fw, fw}, {Activation::Relu});
      b.deform = mk(base + 5, {3 + fw, cfg.deform_hidden, 3},
                    {Activation::Relu, Activation::Tanh});
      if (cfg.fuse_hidden > 0)
        b.fuse = mk(base + 6, {fw, cfg.fuse_hidden, fw},
                    {Activation::Relu, Activation::Relu});
      else
        b.fuse = mk(base + 6, {fw, fw}, {Activation::Relu});
      b.dec_vote = mk(base + 7, {fw, cfg.decoder_hidden, out_w},
                      {Activation::Relu, Activation::None});
      b.dec_anchor = mk(base + 8, {fw, cfg.decoder_hidden, out_w},
                        {Activation::Relu, Activation::None});
      b.w = FusionWeights::init(is_wall ? 5 : 6);
    };
    make_branch(m.obj, false, 0x0b);
    make_branch(m.wall, true, 0xa11);
    m.attn.query = mk(0xc1, {fw, fw}, {Activation::None});
    m.attn.key = mk(0xc2, {fw, fw}, {Activation::None});
    m.attn.value = mk(0xc3, {fw, fw}, {Activation::None});
    return m;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    auto put_branch = [&](const BranchNets& b, const std::string& p) {
      ck.nets[p + ".sa1"] = b.sa.level1;
      ck.nets[p + ".sa2"] = b.sa.level2;
      ck.nets[p + ".vote"] = b.vote;
      ck.nets[p + ".pool"] = b.pool;
      ck.nets[p + ".deform"] = b.deform;
      ck.nets[p + ".fuse"] = b.fuse;
      ck.nets[p + ".dec_vote"] = b.dec_vote;
      ck.nets[p + ".dec_anchor"] = b.dec_anchor;
      ck.vectors[p + ".w1"] = b.w.w1;
      ck.vectors[p + ".w2"] = b.w.w2;
      if (b.w1_adam.m.size() > 0) ck.vector_adam[p + ".w1"] = b.w1_adam;
      if (b.w2_adam.m.size() > 0) ck.vector_adam[p + ".w2"] = b.w2_adam;
    };
    put_branch(obj, "obj");
    put_branch(wall, "wall");
    ck.nets["wall.attn_q"] = attn.query;
    ck.nets["wall.attn_k"] = attn.key;
    ck.nets["wall.attn_v"] = attn.value;
    ck.meta["kind"] = "detector";
    ck.meta["use_anchor_branch"] = use_anchor_branch ? "1" : "0";
    return ck;
  }

  static DetectorModel from_checkpoint(const Checkpoint& ck,
                                       const ModelConfig& cfg) {
    DetectorModel m;
    m.cfg = cfg;
    m.anchor_template = sphere_template(cfg.anchor_count);
    auto get_branch = [&](BranchNets& b, const std::string& p) {
      b.sa.level1 = ck.nets.at(p + ".sa1");
      b.sa.level2 = ck.nets.at(p + ".sa2");
      b.vote = ck.nets.at(p + ".vote");
      b.pool = ck.nets.at(p + ".pool");
      b.deform = ck.nets.at(p + ".deform");
      b.fuse = ck.nets.at(p + ".fuse");
      b.dec_vote = ck.nets.at(p + ".dec_vote");
      b.dec_anchor = ck.nets.at(p + ".dec_anchor");
      b.w.w1 = ck.vectors.at(p + ".w1");
      b.w.w2 = ck.vectors.at(p + ".w2");
      if (auto it = ck.vector_adam.find(p + ".w1"); it != ck.vector_adam.end())
        b.w1_adam = it->second;
      if (auto it = ck.vector_adam.find(p + ".w2"); it != ck.vector_adam.end())
        b.w2_adam = it->second;
    };
    get_branch(m.obj, "obj");
    get_branch(m.wall, "wall");
    m.attn.query = ck.nets.at("wall.attn_q");
    m.attn.key = ck.nets.at("wall.attn_k");
    m.attn.value = ck.nets.at("wall.attn_v");
    if (auto it = ck.meta.find("use_anchor_branch"); it != ck.meta.end())
      m.use_anchor_branch = it->second == "1";
    return m;
  }

  /// Fixed enumeration of every trainable net (for updates and audits).
  std::vector<std::pair<std::string, DenseNet*>> net_refs() {
    std::vector<std::pair<std::string, DenseNet*>> v;
    auto add_branch = [&](BranchNets& b, const std::string& p) {
      v.push_back({p + ".sa1", &b.sa.level1});
      v.push_back({p + ".sa2", &b.sa.level2});
      v.push_back({p + ".vote", &b.vote});
      v.push_back({p + ".pool", &b.pool});
      v.push_back({p + ".deform", &b.deform});
      v.push_back({p + ".fuse", &b.fuse});
      v.push_back({p + ".dec_vote", &b.dec_vote});
      v.push_back({p + ".dec_anchor", &b.dec_anchor});
    };
    add_branch(obj, "obj");
    add_branch(wall, "wall");
    v.push_back({"wall.attn_q", &attn.query});
    v.push_back({"wall.attn_k", &attn.key});
    v.push_back({"wall.attn_v", &attn.value});
    return v;
  }
};

struct BranchTapes {
  GradTape sa1, sa2, vote, pool, deform, fuse, dec_vote, dec_anchor;
  Eigen::VectorXd d_w1, d_w2;
};

struct DetectorTapes {
  BranchTapes obj, wall;
  GradTape attn_q, attn_k, attn_v;

  static DetectorTapes zero(const DetectorModel& m) {
    DetectorTapes t;
    auto zb = [](const BranchNets& b, BranchTapes& bt) {
      bt.sa1 = b.sa.level1.zero_tape();
      bt.sa2 = b.sa.level2.zero_tape();
      bt.vote = b.vote.zero_tape();
      bt.pool = b.pool.zero_tape();
      bt.deform = b.deform.zero_tape();
      bt.fuse = b.fuse.zero_tape();
      bt.dec_vote = b.dec_vote.zero_tape();
      bt.dec_anchor = b.dec_anchor.zero_tape();
      bt.d_w1 = Eigen::VectorXd::Zero(b.w.w1.size());
      bt.d_w2 = Eigen::VectorXd::Zero(b.w.w2.size());
    };
    zb(m.obj, t.obj);
    zb(m.wall, t.wall);
    t.attn_q = m.attn.query.zero_tape();
    t.attn_k = m.attn.key.zero_tape();
    t.attn_v = m.attn.value.zero_tape();
    return t;
  }

  void add_scaled(const DetectorTapes& o, double a) {
    auto ab = [a](BranchTapes& x, const BranchTapes& y) {
      x.sa1.add_scaled(y.sa1, a);
      x.sa2.add_scaled(y.sa2, a);
      x.vote.add_scaled(y.vote, a);
      x.pool.add_scaled(y.pool, a);
      x.deform.add_scaled(y.deform, a);
      x.fuse.add_scaled(y.fuse, a);
      x.dec_vote.add_scaled(y.dec_vote, a);
      x.dec_anchor.add_scaled(y.dec_anchor, a);
      x.d_w1 += a * y.d_w1;
      x.d_w2 += a * y.d_w2;
    };
    ab(obj, o.obj);
    ab(wall, o.wall);
    attn_q.add_scaled(o.attn_q, a);
    attn_k.add_scaled(o.attn_k, a);
    attn_v.add_scaled(o.attn_v, a);
  }
};

struct AdamHyper {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline void detector_adam_step(DetectorModel& m, DetectorTapes& t,
                               const AdamHyper& h) {
  auto step_branch = [&](BranchNets& b, BranchTapes& bt) {
    b.sa.level1.adam_step(bt.sa1, h.lr, h.beta1, h.beta2, h.eps);
    b.sa.level2.adam_step(bt.sa2, h.lr, h.beta1, h.beta2, h.eps);
    b.vote.adam_step(bt.vote, h.lr, h.beta1, h.beta2, h.eps);
    b.pool.adam_step(bt.pool, h.lr, h.beta1, h.beta2, h.eps);
    b.deform.adam_step(bt.deform, h.lr, h.beta1, h.beta2, h.eps);
    b.fuse.adam_step(bt.fuse, h.lr, h.beta1, h.beta2, h.eps);
    b.dec_vote.adam_step(bt.dec_vote, h.lr, h.beta1, h.beta2, h.eps);
    b.dec_anchor.adam_step(bt.dec_anchor, h.lr, h.beta1, h.beta2, h.eps);
    b.w1_adam.step(b.w.w1, bt.d_w1, h.lr, h.beta1, h.beta2, h.eps);
    b.w2_adam.step(b.w.w2, bt.d_w2, h.lr, h.beta1, h.beta2, h.eps);
  };
  step_branch(m.obj, t.obj);
  step_branch(m.wall, t.wall);
  m.attn.query.adam_step(t.attn_q, h.lr, h.beta1, h.beta2, h.eps);
  m.attn.key.adam_step(t.attn_k, h.lr, h.beta1, h.beta2, h.eps);
  m.attn.value.adam_step(t.attn_v, h.lr, h.beta1, h.beta2, h.eps);
}

// ---------------------------------------------------------------------------
// Per-scene training data (loaded once, reused every epoch).
// ---------------------------------------------------------------------------

struct SceneSample {
  std::string id;
  PointCloud scan;
  GroupingPlan plan;
  SceneGtForLoss gt;
  SeedLabels obj_labels, wall_labels;
  std::vector<OrientedBox3> gt_boxes;
  std::vector<TriMesh> gt_meshes;
  std::vector<int> gt_class;
};

/// The backbone consumes height above the floor plane as its only per-point
/// input feature; relative coordinates alone are translation-blind.
inline void add_height_feature(PointCloud& pc) {
  pc.features.resize(pc.size(), 1);
  for (std::size_t i = 0; i < pc.size(); ++i)
    pc.features(static_cast<Eigen::Index>(i), 0) = pc.points[i].z();
}

inline SceneSample prepare_scene(const std::string& id,
                                 const LoadedSceneGt& loaded,
                                 const ModelConfig& cfg, std::uint64_t seed) {
  SceneSample s;
  s.id = id;
  s.scan = loaded.scan;
  add_height_feature(s.scan);
  s.plan = make_grouping_plan(s.scan, cfg.backbone);

  for (std::size_t i = 0; i < loaded.boxes.size(); ++i) {
    const LoadedBox& lb = loaded.boxes[i];
    s.gt_boxes.push_back(lb.box);
    s.gt_class.push_back(static_cast<int>(category_from_name(lb.category)));
    s.gt.obj_center.push_back(lb.box.center);
    Eigen::VectorXd sz(3);
    sz << lb.box.size.x(), lb.box.size.y(), lb.box.size.z();
    s.gt.obj_size.push_back(sz);
    s.gt.obj_yaw.push_back(lb.box.yaw);
    s.gt.obj_class.push_back(s.gt_class.back());
    TriMesh mesh = read_obj(lb.mesh_path);
    s.gt.obj_surface.push_back(sample_mesh_surface(
        mesh, cfg.gt_surface_samples, derive_seed(seed, 0x90b5, i)));
    s.gt_meshes.push_back(std::move(mesh));
  }
  s.gt.walls = loaded.walls;
  for (std::size_t w = 0; w < loaded.walls.size(); ++w)
    s.gt.wall_surface.push_back(
        sample_mesh_surface(loaded.walls[w].mesh(), cfg.gt_surface_samples,
                            derive_seed(seed, 0xa11e, w)));

  SeedSet seeds;
  seeds.positions.points = s.plan.l2_positions;
  s.obj_labels = label_seeds_by_boxes(seeds, s.gt_boxes, 0.02);
  s.wall_labels = label_seeds_by_quads(seeds, loaded.walls, 0.08, 0.02);
  return s;
}

/// In-memory variant of prepare_scene for generated scenes (no disk round
/// trip); produces identical supervision given identical seeds.
inline SceneSample prepare_scene_from_synth(const std::string& id,
                                            const Scene& scene,
                                            const ScanResult& scan,
                                            const ModelConfig& cfg,
                                            std::uint64_t seed) {
  SceneSample s;
  s.id = id;
  s.scan = scan.cloud;
  add_height_feature(s.scan);
  s.plan = make_grouping_plan(s.scan, cfg.backbone);
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const GtObject& o = scene.objects[i];
    s.gt_boxes.push_back(o.box);
    s.gt_class.push_back(static_cast<int>(o.category));
    s.gt.obj_center.push_back(o.box.center);
    Eigen::VectorXd sz(3);
    sz << o.box.size.x(), o.box.size.y(), o.box.size.z();
    s.gt.obj_size.push_back(sz);
    s.gt.obj_yaw.push_back(o.box.yaw);
    s.gt.obj_class.push_back(s.gt_class.back());
    s.gt.obj_surface.push_back(sample_mesh_surface(
        o.mesh, cfg.gt_surface_samples, derive_seed(seed, 0x90b5, i)));
    s.gt_meshes.push_back(o.mesh);
  }
  s.gt.walls = scene.walls;
  for (std::size_t w = 0; w < scene.walls.size(); ++w)
    s.gt.wall_surface.push_back(
        sample_mesh_surface(scene.walls[w].mesh(), cfg.gt_surface_samples,
                            derive_seed(seed, 0xa11e, w)));
  SeedSet seeds;
  seeds.positions.points = s.plan.l2_positions;
  s.obj_labels = label_seeds_by_boxes(seeds, s.gt_boxes, 0.02);
  s.wall_labels = label_seeds_by_quads(seeds, scene.walls, 0.08, 0.02);
  return s;
}

// ---------------------------------------------------------------------------
// Full forward state of one branch (kept for backward).
// ---------------------------------------------------------------------------

struct BranchState {
  BranchEncoding enc;
  VoteForward vote_fwd;
  VoteSet votes;
  ClusterPlan cplan;
  ClusterForward cluster_fwd;
  std::vector<Candidate> candidates;
  Eigen::MatrixXd f_vote;  // width x n_candidates
  DeformForward deform_fwd;
  std::vector<AnchorSet> anchors;
  std::vector<GroupForward> group_fwd;
  Eigen::MatrixXd f_anchor, f_anchor_ref;  // width x n_candidates
  AttentionForward attn_fwd;
  bool attended = false;
  NetCache dec_vote_cache, dec_anchor_cache;
  Eigen::MatrixXd raw_vote, raw_anchor;
  std::vector<DecodedParams> theta_vote, theta_anchor, fused;
  std::vector<int> targets;
  std::vector<Vec3> centers;
};

/// Plans that must stay frozen while finite-differencing the loss.
struct FrozenPlan {
  bool valid = false;
  ClusterPlan obj_cplan, wall_cplan;
  std::vector<int> obj_targets, wall_targets;
};

namespace detail {

inline void forward_branch(const DetectorModel& model, const BranchNets& nets,
                           const SceneSample& scene, bool is_wall,
                           const ClusterPlan* frozen_cplan,
                           const std::vector<int>* frozen_targets,
                           BranchState& st) {
  const ModelConfig& cfg = model.cfg;
  st.enc = encode_branch(scene.scan, scene.plan, nets.sa);
  st.votes = vote(st.enc.seeds, nets.vote, &st.vote_fwd);
  const int n_cand = is_wall ? cfg.wall_candidates : cfg.obj_candidates;
  if (frozen_cplan)
    st.cplan = *frozen_cplan;
  else
    st.cplan = make_cluster_plan(st.votes,
                                 std::min<int>(n_cand, st.votes.positions.size()),
                                 cfg.cluster_radius, cfg.max_members);
  st.candidates = cluster_votes_with(st.votes, st.cplan, nets.pool,
                                     &st.cluster_fwd);
  const int C = static_cast<int>(st.candidates.size());
  st.f_vote.resize(cfg.feature_width, C);
  st.centers.resize(C);
  for (int i = 0; i < C; ++i) {
    st.f_vote.col(i) = st.candidates[i].f_vote;
    st.centers[i] = st.candidates[i].center;
  }

  if (model.use_anchor_branch) {
    st.anchors = deform_anchors_batch(model.anchor_template, st.f_vote,
                                      st.centers, nets.deform, st.deform_fwd);
    st.group_fwd.assign(C, {});
    st.f_anchor.resize(cfg.feature_width, C);
    for (int i = 0; i < C; ++i)
      st.f_anchor.col(i) = group_anchor_features_with(
          st.enc.seeds, st.anchors[i], nets.fuse, &st.group_fwd[i]);
    if (is_wall) {
      st.f_anchor_ref =
          wall_self_attention(st.f_anchor, model.attn, &st.attn_fwd);
      st.attended = true;
    } else {
      st.f_anchor_ref = st.f_anchor;
    }
  }

  const int n_classes = is_wall ? 0 : cfg.n_classes;
  st.raw_vote = nets.dec_vote.forward_batch(st.f_vote, st.dec_vote_cache);
  st.theta_vote.resize(C);
  for (int i = 0; i < C; ++i)
    st.theta_vote[i] =
        decode_params_raw(st.raw_vote.col(i), cfg.heading_bins, n_classes);
  if (model.use_anchor_branch) {
    st.raw_anchor =
        nets.dec_anchor.forward_batch(st.f_anchor_ref, st.dec_anchor_cache);
    st.theta_anchor.resize(C);
    st.fused.resize(C);
    for (int i = 0; i < C; ++i) {
      st.theta_anchor[i] = decode_params_raw(st.raw_anchor.col(i),
                                             cfg.heading_bins, n_classes);
      st.fused[i] = fuse_predictions(st.theta_vote[i], st.theta_anchor[i],
                                     nets.w);
    }
  } else {
    st.fused = st.theta_vote;
  }

  if (frozen_targets) {
    st.targets = *frozen_targets;
  } else if (is_wall) {
    st.targets = assign_wall_targets(st.centers, scene.gt.walls,
                                     cfg.positive_radius, cfg.negative_radius);
  } else {
    st.targets = assign_targets(st.centers, scene.gt.obj_center,
                                cfg.positive_radius, cfg.negative_radius);
  }
}

inline void backward_branch(const DetectorModel& model, const BranchNets& nets,
                            const SceneSample& scene, bool is_wall,
                            BranchState& st, const BranchGrads& grads,
                            BranchTapes& tapes, GradTape& attn_q,
                            GradTape& attn_k, GradTape& attn_v) {
  const ModelConfig& cfg = model.cfg;
  const int C = static_cast<int>(st.candidates.size());
  const int fw = cfg.feature_width;
  const int n_classes = is_wall ? 0 : cfg.n_classes;

  // fused parameter gradients -> two decoder streams + fusion weights
  Eigen::MatrixXd d_raw_vote =
      Eigen::MatrixXd::Zero(st.raw_vote.rows(), C);
  Eigen::MatrixXd d_raw_anchor;
  if (model.use_anchor_branch)
    d_raw_anchor = Eigen::MatrixXd::Zero(st.raw_anchor.rows(), C);
  for (int i = 0; i < C; ++i) {
    if (model.use_anchor_branch) {
      DecodedParams dv = zero_like(st.theta_vote[i]);
      DecodedParams da = zero_like(st.theta_anchor[i]);
      fuse_backward(grads.d_fused[i], st.theta_vote[i], st.theta_anchor[i],
                    nets.w, dv, da, tapes.d_w1, tapes.d_w2);
      d_raw_vote.col(i) = decode_params_backward(dv, st.raw_vote.col(i),
                                                 cfg.heading_bins, n_classes);
      d_raw_anchor.col(i) = decode_params_backward(
          da, st.raw_anchor.col(i), cfg.heading_bins, n_classes);
    } else {
      d_raw_vote.col(i) = decode_params_backward(
          grads.d_fused[i], st.raw_vote.col(i), cfg.heading_bins, n_classes);
    }
  }
  Eigen::MatrixXd d_f_vote =
      nets.dec_vote.backward_batch(d_raw_vote, st.dec_vote_cache,
                                   tapes.dec_vote);
  Eigen::MatrixXd d_seed_features =
      Eigen::MatrixXd::Zero(fw, st.enc.seeds.positions.size());
  std::vector<Vec3> d_center(C, Vec3::Zero());
  for (int i = 0; i < C; ++i) d_center[i] = grads.d_center[i];

  if (model.use_anchor_branch) {
    Eigen::MatrixXd d_f_anchor_ref = nets.dec_anchor.backward_batch(
        d_raw_anchor, st.dec_anchor_cache, tapes.dec_anchor);
    Eigen::MatrixXd d_f_anchor;
    if (st.attended)
      d_f_anchor = attention_backward(d_f_anchor_ref, st.attn_fwd, model.attn,
                                      attn_q, attn_k, attn_v);
    else
      d_f_anchor = d_f_anchor_ref;
    for (int i = 0; i < C; ++i)
      d_seed_features += group_backward(
          d_f_anchor.col(i), st.group_fwd[i], nets.fuse,
          static_cast<int>(st.enc.seeds.positions.size()), tapes.fuse);

    // anchor Chamfer gradients -> deformation net, f_vote, centers
    const int N = cfg.anchor_count;
    Eigen::MatrixXd d_deformed =
        Eigen::MatrixXd::Zero(3, static_cast<Eigen::Index>(N) * C);
    bool any_anchor_grad = false;
    for (int i = 0; i < C; ++i) {
      if (grads.d_anchor_points[i].size() == 0) continue;
      any_anchor_grad = true;
      d_deformed.block(0, static_cast<Eigen::Index>(i) * N, 3, N) =
          grads.d_anchor_points[i];
    }
    if (any_anchor_grad) {
      auto [d_fvote_deform, d_center_deform] = deform_backward_batch(
          d_deformed, C, st.deform_fwd, nets.deform, tapes.deform);
      d_f_vote += d_fvote_deform;
      for (int i = 0; i < C; ++i) d_center[i] += d_center_deform[i];
    }
  }

  // pool/cluster backward
  Eigen::MatrixXd d_center_mat(3, C);
  for (int i = 0; i < C; ++i) d_center_mat.col(i) = d_center[i];
  Eigen::MatrixXd d_vote_features, d_vote_positions;
  cluster_backward(d_f_vote, d_center_mat, st.votes, st.cplan, st.cluster_fwd,
                   nets.pool, tapes.pool, d_vote_features, d_vote_positions);
  if (grads.d_votes.size() > 0) d_vote_positions += grads.d_votes;

  // votes -> seed features
  d_seed_features +=
      vote_backward(d_vote_positions, d_vote_features, st.vote_fwd, nets.vote,
                    tapes.vote);

  // set abstraction stack
  const Eigen::MatrixXd d_l1 =
      sa_backward(d_seed_features, st.enc.sa2, nets.sa.level2, tapes.sa2);
  sa_backward(d_l1, st.enc.sa1, nets.sa.level1, tapes.sa1);
}

}  // namespace detail

struct SceneForward {
  BranchState obj, wall;
};

/// Runs the full detector on one scene and evaluates the composite loss.
/// When `tapes` is non-null the full backward pass accumulates into it.
/// `frozen` pins the discrete clustering/targets so the loss becomes a
/// smooth function of the parameters (used by gradient checks).
inline LossBreakdown detector_scene_loss(const DetectorModel& model,
                                         const SceneSample& scene,
                                         DetectorTapes* tapes = nullptr,
                                         FrozenPlan* frozen = nullptr,
                                         SceneForward* out_fwd = nullptr) {
  SceneForward local;
  SceneForward& fwd = out_fwd ? *out_fwd : local;
  const bool use_frozen = frozen && frozen->valid;
  detail::forward_branch(model, model.obj, scene, false,
                         use_frozen ? &frozen->obj_cplan : nullptr,
                         use_frozen ? &frozen->obj_targets : nullptr, fwd.obj);
  detail::forward_branch(model, model.wall, scene, true,
                         use_frozen ? &frozen->wall_cplan : nullptr,
                         use_frozen ? &frozen->wall_targets : nullptr,
                         fwd.wall);
  if (frozen && !frozen->valid) {
    frozen->obj_cplan = fwd.obj.cplan;
    frozen->wall_cplan = fwd.wall.cplan;
    frozen->obj_targets = fwd.obj.targets;
    frozen->wall_targets = fwd.wall.targets;
    frozen->valid = true;
  }

  auto fill_preds = [&](BranchState& st, const SeedLabels& labels,
                        BranchPreds& p) {
    p.centers = st.centers;
    p.fused = st.fused;
    p.targets = st.targets;
    p.anchors.assign(st.fused.size(), nullptr);
    if (model.use_anchor_branch)
      for (std::size_t i = 0; i < st.anchors.size(); ++i)
        p.anchors[i] = &st.anchors[i];
    p.votes = &st.votes;
    p.labels = &labels;
  };
  BranchPreds obj_preds, wall_preds;
  fill_preds(fwd.obj, scene.obj_labels, obj_preds);
  fill_preds(fwd.wall, scene.wall_labels, wall_preds);

  DetectionLossGrads grads;
  const LossBreakdown breakdown =
      detection_loss(obj_preds, wall_preds, scene.gt, model.cfg.heading_bins,
                     tapes ? &grads : nullptr);
  if (tapes) {
    detail::backward_branch(model, model.obj, scene, false, fwd.obj, grads.obj,
                            tapes->obj, tapes->attn_q, tapes->attn_k,
                            tapes->attn_v);
    detail::backward_branch(model, model.wall, scene, true, fwd.wall,
                            grads.wall, tapes->wall, tapes->attn_q,
                            tapes->attn_k, tapes->attn_v);
  }
  return breakdown;
}

// ---------------------------------------------------------------------------
// Inference.
// ---------------------------------------------------------------------------

struct DetectedObject {
  OrientedBox3 box;
  int category = 0;
  double score = 0;        // objectness * class confidence
  double objectness = 0;   // P(object)
  Eigen::VectorXd f_vote, f_anchor;
  AnchorSet anchors;
};

struct DetectedWall {
  WallQuad quad;  // score field carries objectness
  AnchorSet anchors;
};

struct DetectionOutput {
  std::vector<DetectedObject> objects;  // NMS-filtered, above cutoff
  std::vector<DetectedWall> walls;
};

inline double objectness_probability(const Eigen::Vector2d& logits) {
  const double m = logits.maxCoeff();
  const double e0 = std::exp(logits(0) - m), e1 = std::exp(logits(1) - m);
  return e1 / (e0 + e1);
}

inline OrientedBox3 params_to_box(const Vec3& center,
                                  const DecodedParams& p, int heading_bins) {
  int bin = 0;
  p.heading_bin_logits.maxCoeff(&bin);
  const double yaw =
      decode_heading(bin, p.heading_residuals(bin), heading_bins);
  const Vec3 size(std::max(p.size(0), 1e-4), std::max(p.size(1), 1e-4),
                  std::max(p.size(2), 1e-4));
  return OrientedBox3(center + p.center_offset, size, yaw);
}

inline WallQuad params_to_quad(const Vec3& center, const DecodedParams& p,
                               int heading_bins) {
  int bin = 0;
  p.heading_bin_logits.maxCoeff(&bin);
  WallQuad q;
  q.center = center + p.center_offset;
  // wall headings are binned on the doubled angle (direction modulo pi)
  q.yaw = 0.5 * decode_heading(bin, p.heading_residuals(bin), heading_bins);
  q.width = std::max(p.size(0), 1e-4);
  q.height = std::max(p.size(1), 1e-4);
  return q;
}

inline DetectionOutput run_detector(const DetectorModel& model,
                                    const PointCloud& scan,
                                    double objectness_cutoff = 0.5,
                                    double nms_iou = 0.25) {
  SceneSample scene;
  scene.scan = scan;
  add_height_feature(scene.scan);
  scene.plan = make_grouping_plan(scene.scan, model.cfg.backbone);
  BranchState obj_st, wall_st;
  detail::forward_branch(model, model.obj, scene, false, nullptr, nullptr,
                         obj_st);
  detail::forward_branch(model, model.wall, scene, true, nullptr, nullptr,
                         wall_st);

  DetectionOutput out;
  const int C = static_cast<int>(obj_st.fused.size());
  std::vector<OrientedBox3> boxes(C);
  std::vector<double> scores(C);
  std::vector<DetectedObject> all(C);
  for (int i = 0; i < C; ++i) {
    const DecodedParams& p = obj_st.fused[i];
    DetectedObject d;
    d.box = params_to_box(obj_st.centers[i], p, model.cfg.heading_bins);
    d.objectness = objectness_probability(p.objectness);
    Eigen::Index cls = 0;
    const Eigen::VectorXd probs = softmax(p.class_logits);
    probs.maxCoeff(&cls);
    d.category = static_cast<int>(cls);
    d.score = d.objectness * probs(cls);
    d.f_vote = obj_st.f_vote.col(i);
    if (model.use_anchor_branch) {
      d.f_anchor = obj_st.f_anchor_ref.col(i);
      d.anchors = obj_st.anchors[i];
    } else {
      d.f_anchor = Eigen::VectorXd::Zero(model.cfg.feature_width);
    }
    boxes[i] = d.box;
    scores[i] = d.score;
    all[i] = std::move(d);
  }
  for (int keep : nms_3d(boxes, scores, nms_iou))
    if (all[keep].objectness > objectness_cutoff)
      out.objects.push_back(std::move(all[keep]));

  for (int i = 0; i < static_cast<int>(wall_st.fused.size()); ++i) {
    const DecodedParams& p = wall_st.fused[i];
    const double prob = objectness_probability(p.objectness);
    if (prob <= objectness_cutoff) continue;
    DetectedWall w;
    w.quad = params_to_quad(wall_st.centers[i], p, model.cfg.heading_bins);
    w.quad.score = prob;
    if (model.use_anchor_branch) w.anchors = wall_st.anchors[i];
    out.walls.push_back(std::move(w));
  }
  return out;
}

}  // namespace ancs
