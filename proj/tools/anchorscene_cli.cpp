// anchorscene: anchor-guided indoor scene understanding on synthetic scans.
//
// Subcommands: gen, train-det, train-shape, reconstruct, evaluate.
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>

#include "anchorscene/config.hpp"
#include "anchorscene/evaluate.hpp"
#include "anchorscene/pipeline.hpp"
#include "anchorscene/reconstruct.hpp"
#include "anchorscene/synth.hpp"
#include "anchorscene/trainer.hpp"

namespace {

using namespace ancs;

Config load_config_opt(const std::string& path) {
  return path.empty() ? Config::defaults() : Config::load(path);
}

int cmd_gen(const std::string& spec_path, int count, const std::string& out,
            long seed) {
  Config config = load_config_opt(spec_path);
  if (seed >= 0) config.set("train.seed", std::to_string(seed));
  SceneSpec spec = SceneSpec::from_config(config);
  generate_corpus(out, spec, count, config);
  std::printf("generated %d scenes under %s\n", count, out.c_str());
  return 0;
}

int cmd_train_det(const std::string& corpus_dir, const std::string& config_path,
                  const std::string& out, const std::string& resume, long seed,
                  int epochs_override, bool vote_only) {
  Config config = load_config_opt(config_path);
  if (seed >= 0) config.set("train.seed", std::to_string(seed));
  const ModelConfig mcfg = ModelConfig::from_config(config);
  const TrainOptions opts = TrainOptions::from_config(config);

  DetectorTrainState st;
  if (!resume.empty()) {
    st = load_detector(resume, mcfg);
  } else {
    st.model = DetectorModel::create(mcfg, derive_seed(opts.seed, 0xde7));
    st.model.use_anchor_branch = !vote_only;
  }
  const CorpusCache corpus = load_corpus(corpus_dir, mcfg, opts.seed);
  const int target_epochs =
      epochs_override > 0 ? epochs_override : opts.det_epochs;
  std::string csv;
  train_detector(st, corpus, opts, target_epochs - st.epoch, &csv,
                 /*log_stdout=*/true);
  save_detector(st, out);
  atomic_write_file(fs::path(out) += ".metrics.csv", csv);
  std::printf("detector checkpoint: %s (epoch %d)\n", out.c_str(), st.epoch);
  return 0;
}

int cmd_train_shape(const std::string& corpus_dir,
                    const std::string& det_ckpt,
                    const std::string& config_path, const std::string& out,
                    long seed, const std::string& prior_mode_str,
                    int epochs_override, bool no_pretrain) {
  Config config = load_config_opt(config_path);
  if (seed >= 0) config.set("train.seed", std::to_string(seed));
  const ModelConfig mcfg = ModelConfig::from_config(config);
  const ShapeConfig scfg = ShapeConfig::from_config(config);
  const TrainOptions opts = TrainOptions::from_config(config);
  const PriorMode mode = prior_mode_from_string(prior_mode_str);

  const DetectorTrainState det = load_detector(det_ckpt, mcfg);
  const CorpusCache corpus = load_corpus(corpus_dir, mcfg, opts.seed);

  ShapeTrainState st;
  st.model = ShapeModel::create(scfg, derive_seed(opts.seed, 0x5a9));
  std::string csv;
  if (!no_pretrain && opts.pretrain_epochs > 0) {
    const auto pre_pool = build_pretrain_pool(corpus, scfg, opts);
    train_shapes(st, pre_pool, opts, opts.pretrain_epochs, opts.shape_lr, &csv,
                 true, 0x94e7);
  }
  bool no_positive = false;
  const auto pool = build_shape_pool(det.model, corpus, scfg, opts, mode,
                                     &no_positive);
  if (no_positive)
    std::fprintf(stderr, "warning: no positive proposals; stage-2 epochs skipped\n");
  // fresh scheduler for the main stage
  st.epoch = 0;
  st.sched = PlateauScheduler{opts.plateau_factor, opts.plateau_min_delta,
                              opts.plateau_patience};
  const int target_epochs =
      epochs_override > 0 ? epochs_override : opts.shape_epochs;
  train_shapes(st, pool, opts, target_epochs, opts.shape_lr, &csv, true);
  save_shape(st, out);
  atomic_write_file(fs::path(out) += ".metrics.csv", csv);
  std::printf("shape checkpoint: %s (pool %zu)\n", out.c_str(), pool.size());
  return 0;
}

int cmd_reconstruct(const std::string& scan_path, const std::string& corpus_dir,
                    const std::string& det_ckpt, const std::string& shape_ckpt,
                    const std::string& config_path, const std::string& out,
                    long seed, double objectness, double nms_iou,
                    const std::string& prior_mode_str) {
  Config config = load_config_opt(config_path);
  if (seed >= 0) config.set("train.seed", std::to_string(seed));
  const ModelConfig mcfg = ModelConfig::from_config(config);
  const ShapeConfig scfg = ShapeConfig::from_config(config);
  const DetectorTrainState det = load_detector(det_ckpt, mcfg);
  const ShapeTrainState shape = load_shape(shape_ckpt, scfg);

  ReconstructOptions opts = ReconstructOptions::from_config(config);
  if (objectness >= 0) opts.objectness_cutoff = objectness;
  if (nms_iou >= 0) opts.nms_iou = nms_iou;
  opts.prior_mode = prior_mode_from_string(prior_mode_str);

  int total_objects = 0;
  if (!scan_path.empty()) {
    const PointCloud scan = read_ply(scan_path);
    const SceneModel model =
        reconstruct_scene(det.model, shape.model, scan, opts);
    write_scene_model(out, model);
    total_objects = static_cast<int>(model.objects.size());
  } else {
    for (const std::string& id : corpus_scene_ids(corpus_dir)) {
      const PointCloud scan =
          read_ply(fs::path(corpus_dir) / "scenes" / id / "scan.ply");
      const SceneModel model =
          reconstruct_scene(det.model, shape.model, scan, opts);
      write_scene_model(fs::path(out) / id, model);
      total_objects += static_cast<int>(model.objects.size());
    }
  }
  std::printf("reconstructed %d object(s) into %s\n", total_objects,
              out.c_str());
  return 0;
}

int cmd_evaluate(const std::string& pred, const std::string& gt,
                 const std::string& report, const std::string& config_path) {
  const Config config = load_config_opt(config_path);
  const CorpusEvalReport r = evaluate_corpora(pred, gt, config);
  atomic_write_file(report, r.json.dump(2));
  atomic_write_file(fs::path(report) += ".csv", r.csv);
  std::printf("%s\n", r.json.dump(2).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anchor-guided indoor scene understanding"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  std::string gen_spec, gen_out;
  int gen_count = 10;
  long gen_seed = -1;
  gen->add_option("--spec", gen_spec, "scene spec (config file)")
      ->check(CLI::ExistingFile);
  gen->add_option("--count", gen_count, "number of scenes")->required();
  gen->add_option("--out", gen_out, "output corpus directory")->required();
  gen->add_option("--seed", gen_seed, "rng seed override");

  // train-det
  auto* tdet = app.add_subcommand("train-det", "train the dual-branch detector");
  std::string tdet_corpus, tdet_config, tdet_out, tdet_resume;
  long tdet_seed = -1;
  int tdet_epochs = -1;
  bool tdet_vote_only = false;
  tdet->add_option("--corpus", tdet_corpus, "corpus directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  tdet->add_option("--config", tdet_config, "config file")
      ->check(CLI::ExistingFile);
  tdet->add_option("--out", tdet_out, "output checkpoint")->required();
  tdet->add_option("--resume", tdet_resume, "resume from checkpoint")
      ->check(CLI::ExistingFile);
  tdet->add_option("--seed", tdet_seed, "rng seed override");
  tdet->add_option("--epochs", tdet_epochs, "override epoch count");
  tdet->add_flag("--vote-only", tdet_vote_only,
                 "ablation: disable the anchor branch");

  // train-shape
  auto* tshape = app.add_subcommand("train-shape", "train the shape decoder");
  std::string ts_corpus, ts_det, ts_config, ts_out, ts_prior = "anchor";
  long ts_seed = -1;
  int ts_epochs = -1;
  bool ts_no_pretrain = false;
  tshape->add_option("--corpus", ts_corpus, "corpus directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  tshape->add_option("--det", ts_det, "detector checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  tshape->add_option("--config", ts_config, "config file")
      ->check(CLI::ExistingFile);
  tshape->add_option("--out", ts_out, "output checkpoint")->required();
  tshape->add_option("--seed", ts_seed, "rng seed override");
  tshape->add_option("--prior-mode", ts_prior, "anchor | boxcrop");
  tshape->add_option("--epochs", ts_epochs, "override epoch count");
  tshape->add_flag("--no-pretrain", ts_no_pretrain, "skip mesh pretraining");

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "build a semantic scene model");
  std::string rec_scan, rec_corpus, rec_det, rec_shape, rec_config, rec_out;
  std::string rec_prior = "anchor";
  long rec_seed = -1;
  double rec_obj = -1, rec_nms = -1;
  rec->add_option("--scan", rec_scan, "input scan (ply)")
      ->check(CLI::ExistingFile);
  rec->add_option("--corpus", rec_corpus, "reconstruct every corpus scene")
      ->check(CLI::ExistingDirectory);
  rec->add_option("--det", rec_det, "detector checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  rec->add_option("--shape", rec_shape, "shape checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  rec->add_option("--config", rec_config, "config file")
      ->check(CLI::ExistingFile);
  rec->add_option("--out", rec_out, "output directory")->required();
  rec->add_option("--seed", rec_seed, "rng seed override");
  rec->add_option("--objectness", rec_obj, "objectness cutoff override");
  rec->add_option("--nms-iou", rec_nms, "NMS IoU override");
  rec->add_option("--prior-mode", rec_prior, "anchor | boxcrop");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score predictions against ground truth");
  std::string ev_pred, ev_gt, ev_report, ev_config;
  ev->add_option("--pred", ev_pred, "prediction directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  ev->add_option("--gt", ev_gt, "ground-truth corpus directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  ev->add_option("--report", ev_report, "output report json")->required();
  ev->add_option("--config", ev_config, "config file")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_spec, gen_count, gen_out, gen_seed);
    if (tdet->parsed())
      return cmd_train_det(tdet_corpus, tdet_config, tdet_out, tdet_resume,
                           tdet_seed, tdet_epochs, tdet_vote_only);
    if (tshape->parsed())
      return cmd_train_shape(ts_corpus, ts_det, ts_config, ts_out, ts_seed,
                             ts_prior, ts_epochs, ts_no_pretrain);
    if (rec->parsed()) {
      if (rec_scan.empty() == rec_corpus.empty()) {
        std::fprintf(stderr, "reconstruct: give exactly one of --scan / --corpus\n");
        return 2;
      }
      return cmd_reconstruct(rec_scan, rec_corpus, rec_det, rec_shape,
                             rec_config, rec_out, rec_seed, rec_obj, rec_nms,
                             rec_prior);
    }
    if (ev->parsed()) return cmd_evaluate(ev_pred, ev_gt, ev_report, ev_config);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
