#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "anchorscene/config.hpp"
#include "anchorscene/pipeline.hpp"
#include "anchorscene/reconstruct.hpp"
#include "anchorscene/synth.hpp"

namespace ancs {

struct TrainOptions {
  std::uint64_t seed = 1;
  int det_epochs = 30, det_batch = 8;
  double det_lr = 1e-3;
  int shape_epochs = 100, shape_batch = 32;
  double shape_lr = 1e-4;
  int pretrain_epochs = 12;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double plateau_factor = 0.5, plateau_min_delta = 1e-4;
  int plateau_patience = 10;
  double objectness_cutoff = 0.5, nms_iou = 0.25;
  int proposal_pool_cap = 600;

  static TrainOptions from_config(const Config& c) {
    TrainOptions o;
    o.seed = c.get_u64("train.seed");
    o.det_epochs = c.get_i("train.det_epochs");
    o.det_batch = c.get_i("train.det_batch");
    o.det_lr = c.get_d("train.det_lr");
    o.shape_epochs = c.get_i("train.shape_epochs");
    o.shape_batch = c.get_i("train.shape_batch");
    o.shape_lr = c.get_d("train.shape_lr");
    o.pretrain_epochs = c.get_i("train.pretrain_epochs");
    o.beta1 = c.get_d("train.adam_beta1");
    o.beta2 = c.get_d("train.adam_beta2");
    o.eps = c.get_d("train.adam_eps");
    o.plateau_factor = c.get_d("train.plateau_factor");
    o.plateau_min_delta = c.get_d("train.plateau_min_delta");
    o.plateau_patience = c.get_i("train.plateau_patience");
    o.objectness_cutoff = c.get_d("recon.objectness");
    o.nms_iou = c.get_d("recon.nms_iou");
    o.proposal_pool_cap = c.get_i("shape.proposal_pool_cap");
    return o;
  }
};

/// Halves the learning rate when the monitored loss has not improved by
/// min_delta for `patience` consecutive epochs.
struct PlateauScheduler {
  double factor = 0.5, min_delta = 1e-4;
  int patience = 10;
  double best = std::numeric_limits<double>::infinity();
  int stale = 0;

  bool step(double loss, double* lr) {
    if (loss < best - min_delta) {
      best = loss;
      stale = 0;
      return false;
    }
    if (++stale >= patience) {
      *lr *= factor;
      stale = 0;
      return true;
    }
    return false;
  }
};

// ---------------------------------------------------------------------------
// Corpus loading.
// ---------------------------------------------------------------------------

struct CorpusCache {
  std::vector<SceneSample> scenes;
};

inline CorpusCache load_corpus(const fs::path& root, const ModelConfig& cfg,
                               std::uint64_t seed, int max_scenes = -1) {
  CorpusCache corpus;
  const std::vector<std::string> ids = corpus_scene_ids(root);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (max_scenes >= 0 && static_cast<int>(i) >= max_scenes) break;
    const LoadedSceneGt loaded = load_scene_gt(root / "scenes" / ids[i]);
    corpus.scenes.push_back(
        prepare_scene(ids[i], loaded, cfg, derive_seed(seed, 0x10ad, i)));
  }
  if (corpus.scenes.empty()) throw std::runtime_error("empty corpus: " + root.string());
  return corpus;
}

// ---------------------------------------------------------------------------
// Stage 1: detector training.
// ---------------------------------------------------------------------------

struct DetectorTrainState {
  DetectorModel model;
  int epoch = 0;
  double lr = 1e-3;
  PlateauScheduler sched;
};

/// Per-group fusion weights, exported for inspection of how the vote and
/// anchor streams split responsibility across parameter groups.
inline nlohmann::json fusion_weights_json(const DetectorModel& m) {
  auto branch = [](const BranchNets& b, bool has_class) {
    nlohmann::json j;
    std::vector<std::string> groups = {"center", "size", "heading_bin",
                                       "heading_res"};
    if (has_class) groups.push_back("class");
    groups.push_back("objectness");
    j["groups"] = groups;
    j["w_vote"] = std::vector<double>(b.w.w1.data(), b.w.w1.data() + b.w.w1.size());
    j["w_anchor"] =
        std::vector<double>(b.w.w2.data(), b.w.w2.data() + b.w.w2.size());
    return j;
  };
  nlohmann::json j;
  j["object"] = branch(m.obj, true);
  j["wall"] = branch(m.wall, false);
  return j;
}

inline void save_detector(const DetectorTrainState& st, const fs::path& path) {
  Checkpoint ck = st.model.to_checkpoint();
  ck.meta["epoch"] = std::to_string(st.epoch);
  std::ostringstream lr;
  lr.precision(17);
  lr << st.lr;
  ck.meta["lr"] = lr.str();
  std::ostringstream best;
  best.precision(17);
  best << st.sched.best;
  ck.meta["sched_best"] = best.str();
  ck.meta["sched_stale"] = std::to_string(st.sched.stale);
  ck.save(path);
  atomic_write_file(fs::path(path) += ".json", ck.debug_json().dump());
  atomic_write_file(fs::path(path) += ".fusion.json",
                    fusion_weights_json(st.model).dump(2));
}

inline DetectorTrainState load_detector(const fs::path& path,
                                        const ModelConfig& cfg) {
  const Checkpoint ck = Checkpoint::load(path);
  DetectorTrainState st;
  st.model = DetectorModel::from_checkpoint(ck, cfg);
  if (auto it = ck.meta.find("epoch"); it != ck.meta.end())
    st.epoch = std::stoi(it->second);
  if (auto it = ck.meta.find("lr"); it != ck.meta.end())
    st.lr = std::stod(it->second);
  if (auto it = ck.meta.find("sched_best"); it != ck.meta.end())
    st.sched.best = std::stod(it->second);
  if (auto it = ck.meta.find("sched_stale"); it != ck.meta.end())
    st.sched.stale = std::stoi(it->second);
  return st;
}

inline void shuffle_indices(std::vector<int>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}

/// Runs `epochs_to_run` epochs of Eq-style composite-loss minimization.
/// Per-epoch CSV rows are appended to `csv` when given. Deterministic given
/// (corpus, options, starting state).
inline void train_detector(DetectorTrainState& st, const CorpusCache& corpus,
                           const TrainOptions& opts, int epochs_to_run,
                           std::string* csv = nullptr,
                           bool log_stdout = false) {
  if (corpus.scenes.empty()) throw std::invalid_argument("empty corpus");
  if (st.epoch == 0) {
    st.lr = opts.det_lr;
    st.sched.factor = opts.plateau_factor;
    st.sched.min_delta = opts.plateau_min_delta;
    st.sched.patience = opts.plateau_patience;
  }
  if (csv && csv->empty())
    *csv = "epoch,lr,total,vote_obj,objectness_obj,center_obj,size_obj,"
           "heading_bin_obj,heading_res_obj,class_obj,vote_wall,"
           "objectness_wall,center_wall,size_wall,heading_bin_wall,"
           "heading_res_wall,anchor_obj,anchor_wall\n";

  const int n = static_cast<int>(corpus.scenes.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int e = 0; e < epochs_to_run; ++e) {
    Rng epoch_rng(derive_seed(opts.seed, 0xe90c, st.epoch));
    shuffle_indices(order, epoch_rng);
    LossBreakdown epoch_sum;
    for (int at = 0; at < n; at += opts.det_batch) {
      const int batch_n = std::min(opts.det_batch, n - at);
      DetectorTapes tapes = DetectorTapes::zero(st.model);
      for (int k = 0; k < batch_n; ++k) {
        DetectorTapes scene_tapes = DetectorTapes::zero(st.model);
        const LossBreakdown b = detector_scene_loss(
            st.model, corpus.scenes[order[at + k]], &scene_tapes);
        tapes.add_scaled(scene_tapes, 1.0 / batch_n);
        epoch_sum.accumulate(b, 1.0 / n);
      }
      detector_adam_step(st.model, tapes,
                         {st.lr, opts.beta1, opts.beta2, opts.eps});
    }
    ++st.epoch;
    st.sched.step(epoch_sum.total(), &st.lr);
    if (csv) {
      std::ostringstream row;
      row.precision(17);
      row << st.epoch << "," << st.lr << "," << epoch_sum.total() << ","
          << epoch_sum.vote_obj << "," << epoch_sum.objectness_obj << ","
          << epoch_sum.center_obj << "," << epoch_sum.size_obj << ","
          << epoch_sum.heading_bin_obj << "," << epoch_sum.heading_res_obj
          << "," << epoch_sum.class_obj << "," << epoch_sum.vote_wall << ","
          << epoch_sum.objectness_wall << "," << epoch_sum.center_wall << ","
          << epoch_sum.size_wall << "," << epoch_sum.heading_bin_wall << ","
          << epoch_sum.heading_res_wall << "," << epoch_sum.anchor_obj << ","
          << epoch_sum.anchor_wall << "\n";
      *csv += row.str();
    }
    if (log_stdout)
      std::printf("[det] epoch %d lr %.2e total %.4f\n", st.epoch, st.lr,
                  epoch_sum.total());
  }
}

// ---------------------------------------------------------------------------
// Stage 2: shape training on detector proposals (detector frozen).
// ---------------------------------------------------------------------------

struct ShapeTrainSample {
  std::vector<Vec3> enc_points;     // canonicalized prior (+ anchors)
  std::vector<Vec3> anchor_points;  // canonicalized anchors (fallback input)
  Eigen::VectorXd f_vote, f_anchor;
  OccupancyLabels labels;
};

/// Runs the frozen detector over the corpus and turns every positive-matched
/// proposal into a shape-training sample. Prior points come from the
/// anchor-guided sampler or from box cropping (ablation).
inline std::vector<ShapeTrainSample> build_shape_pool(
    const DetectorModel& det, const CorpusCache& corpus,
    const ShapeConfig& shape_cfg, const TrainOptions& opts, PriorMode mode,
    bool* no_positive_flag = nullptr) {
  std::vector<ShapeTrainSample> pool;
  for (std::size_t s = 0; s < corpus.scenes.size(); ++s) {
    const SceneSample& scene = corpus.scenes[s];
    const DetectionOutput detections = run_detector(
        det, scene.scan, opts.objectness_cutoff, opts.nms_iou);
    for (std::size_t d = 0; d < detections.objects.size(); ++d) {
      const DetectedObject& obj = detections.objects[d];
      // positive match to the nearest ground-truth instance
      int best = -1;
      double best_dist = det.cfg.positive_radius;
      for (std::size_t g = 0; g < scene.gt_boxes.size(); ++g) {
        const double dist = (obj.box.center - scene.gt_boxes[g].center).norm();
        if (dist < best_dist) {
          best_dist = dist;
          best = static_cast<int>(g);
        }
      }
      if (best < 0) continue;
      ShapeTrainSample sample;
      const PointCloud prior = build_prior(scene.scan, obj, mode, det.cfg);
      std::vector<Vec3> enc_world = prior.points;
      if (shape_cfg.use_anchor_augment && mode == PriorMode::AnchorGuided)
        enc_world.insert(enc_world.end(), obj.anchors.deformed.points.begin(),
                         obj.anchors.deformed.points.end());
      enc_world =
          cap_points(enc_world, shape_cfg.prior_cap,
                     derive_seed(opts.seed, 0xca9, s, d));
      sample.enc_points = canonicalize_isotropic(enc_world, obj.box);
      sample.anchor_points =
          canonicalize_isotropic(obj.anchors.deformed.points, obj.box);
      sample.f_vote = obj.f_vote;
      sample.f_anchor = obj.f_anchor;
      sample.labels = make_occupancy_labels(
          scene.gt_meshes[best], obj.box, shape_cfg.queries_uniform,
          shape_cfg.queries_near, shape_cfg.near_sigma,
          derive_seed(opts.seed, 0x0cc, s, d));
      pool.push_back(std::move(sample));
    }
  }
  if (no_positive_flag) *no_positive_flag = pool.empty();
  if (static_cast<int>(pool.size()) > opts.proposal_pool_cap) {
    Rng rng(derive_seed(opts.seed, 0x9001));
    std::vector<int> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    shuffle_indices(idx, rng);
    idx.resize(opts.proposal_pool_cap);
    std::sort(idx.begin(), idx.end());
    std::vector<ShapeTrainSample> kept;
    kept.reserve(idx.size());
    for (int i : idx) kept.push_back(std::move(pool[i]));
    pool = std::move(kept);
  }
  return pool;
}

/// Ground-truth-mesh pool (perfect priors, zero proposal features); stands in
/// for the external shape-pretraining corpus.
inline std::vector<ShapeTrainSample> build_pretrain_pool(
    const CorpusCache& corpus, const ShapeConfig& shape_cfg,
    const TrainOptions& opts) {
  std::vector<ShapeTrainSample> pool;
  const int fw = shape_cfg.feature_width;
  for (std::size_t s = 0; s < corpus.scenes.size(); ++s) {
    const SceneSample& scene = corpus.scenes[s];
    for (std::size_t g = 0; g < scene.gt_meshes.size(); ++g) {
      ShapeTrainSample sample;
      const PointCloud surf =
          sample_mesh_surface(scene.gt_meshes[g], shape_cfg.prior_cap,
                              derive_seed(opts.seed, 0x97e, s, g));
      sample.enc_points =
          canonicalize_isotropic(surf.points, scene.gt_boxes[g]);
      sample.anchor_points = sample.enc_points;
      sample.f_vote = Eigen::VectorXd::Zero(fw);
      sample.f_anchor = Eigen::VectorXd::Zero(fw);
      sample.labels = make_occupancy_labels(
          scene.gt_meshes[g], scene.gt_boxes[g], shape_cfg.queries_uniform,
          shape_cfg.queries_near, shape_cfg.near_sigma,
          derive_seed(opts.seed, 0x97f, s, g));
      pool.push_back(std::move(sample));
    }
  }
  if (static_cast<int>(pool.size()) > opts.proposal_pool_cap) {
    Rng rng(derive_seed(opts.seed, 0x9002));
    std::vector<int> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    shuffle_indices(idx, rng);
    idx.resize(opts.proposal_pool_cap);
    std::sort(idx.begin(), idx.end());
    std::vector<ShapeTrainSample> kept;
    for (int i : idx) kept.push_back(std::move(pool[i]));
    pool = std::move(kept);
  }
  return pool;
}

/// One occupancy BCE step over a query subset of one sample; accumulates
/// encoder/decoder tapes, returns the loss.
inline double shape_sample_loss(const ShapeModel& model,
                                const ShapeTrainSample& sample,
                                const std::vector<int>& query_idx,
                                GradTape* enc_tape, GradTape* dec_tape) {
  EncodeForward ef;
  const ShapeEmbedding emb =
      encode_shape_with(sample.enc_points, sample.anchor_points, sample.f_vote,
                        sample.f_anchor, model.enc, &ef);
  std::vector<Vec3> queries;
  std::vector<char> labels;
  queries.reserve(query_idx.size());
  for (int q : query_idx) {
    queries.push_back(sample.labels.queries[q]);
    labels.push_back(sample.labels.inside[q]);
  }
  DecodeForward df;
  decode_occupancy_with(emb, queries, model.dec, &df);
  if (!enc_tape || !dec_tape) {
    double loss = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double p = std::clamp(df.probs(static_cast<int>(i)), 1e-12,
                                  1.0 - 1e-12);
      const double y = labels[i] ? 1.0 : 0.0;
      loss += -(y * std::log(p) + (1 - y) * std::log(1 - p)) / labels.size();
    }
    return loss;
  }
  const OccupancyLossResult r =
      occupancy_bce_backward(emb, df, labels, model.dec, *dec_tape);
  encode_backward(r.d_emb, ef, model.enc, *enc_tape);
  return r.value;
}

struct ShapeTrainState {
  ShapeModel model;
  int epoch = 0;
  double lr = 1e-4;
  PlateauScheduler sched;
};

inline void save_shape(const ShapeTrainState& st, const fs::path& path) {
  Checkpoint ck = st.model.to_checkpoint();
  ck.meta["epoch"] = std::to_string(st.epoch);
  ck.save(path);
  atomic_write_file(fs::path(path) += ".json", ck.debug_json().dump());
}

inline ShapeTrainState load_shape(const fs::path& path,
                                  const ShapeConfig& cfg) {
  const Checkpoint ck = Checkpoint::load(path);
  ShapeTrainState st;
  st.model = ShapeModel::from_checkpoint(ck, cfg);
  if (auto it = ck.meta.find("epoch"); it != ck.meta.end())
    st.epoch = std::stoi(it->second);
  return st;
}

/// Minimizes occupancy BCE over the proposal pool. Per step each sample
/// contributes `queries_per_step` labels chosen by a seeded rotation.
inline void train_shapes(ShapeTrainState& st,
                         const std::vector<ShapeTrainSample>& pool,
                         const TrainOptions& opts, int epochs_to_run,
                         double lr, std::string* csv = nullptr,
                         bool log_stdout = false,
                         std::uint64_t stream_tag = 0x5a9e) {
  if (pool.empty()) {
    if (log_stdout) std::printf("[shape] empty pool; epochs skipped\n");
    return;
  }
  if (st.epoch == 0) {
    st.lr = lr;
    st.sched.factor = opts.plateau_factor;
    st.sched.min_delta = opts.plateau_min_delta;
    st.sched.patience = opts.plateau_patience;
  }
  if (csv && csv->empty()) *csv = "epoch,lr,bce\n";
  const int n = static_cast<int>(pool.size());
  const ShapeConfig& cfg = st.model.cfg;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int e = 0; e < epochs_to_run; ++e) {
    Rng epoch_rng(derive_seed(opts.seed, stream_tag, st.epoch));
    shuffle_indices(order, epoch_rng);
    double epoch_loss = 0;
    for (int at = 0; at < n; at += opts.shape_batch) {
      const int batch_n = std::min(opts.shape_batch, n - at);
      GradTape enc_tape = st.model.enc.zero_tape();
      GradTape dec_tape = st.model.dec.zero_tape();
      double batch_loss = 0;
      for (int k = 0; k < batch_n; ++k) {
        const ShapeTrainSample& sample = pool[order[at + k]];
        const int n_q = static_cast<int>(sample.labels.queries.size());
        const int take = std::min(cfg.queries_per_step, n_q);
        std::vector<int> qidx(take);
        Rng qrng(derive_seed(opts.seed, stream_tag + 1, st.epoch,
                             static_cast<std::uint64_t>(order[at + k])));
        for (int i = 0; i < take; ++i)
          qidx[i] = static_cast<int>(qrng.uniform_index(n_q));
        batch_loss += shape_sample_loss(st.model, sample, qidx, &enc_tape,
                                        &dec_tape) /
                      batch_n;
      }
      enc_tape.scale(1.0 / batch_n);
      dec_tape.scale(1.0 / batch_n);
      st.model.enc.adam_step(enc_tape, st.lr, opts.beta1, opts.beta2, opts.eps);
      st.model.dec.adam_step(dec_tape, st.lr, opts.beta1, opts.beta2, opts.eps);
      epoch_loss += batch_loss * batch_n / n;
    }
    ++st.epoch;
    st.sched.step(epoch_loss, &st.lr);
    if (csv) {
      std::ostringstream row;
      row.precision(17);
      row << st.epoch << "," << st.lr << "," << epoch_loss << "\n";
      *csv += row.str();
    }
    if (log_stdout)
      std::printf("[shape] epoch %d lr %.2e bce %.4f\n", st.epoch, st.lr,
                  epoch_loss);
  }
}

}  // namespace ancs
