#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "anchorscene/io.hpp"

namespace ancs {

// Key-value run configuration. Text format: one `key = value` per line,
// `#` starts a comment, unknown keys are rejected so typos fail loudly.
class Config {
 public:
  static Config defaults() {
    Config c;
    auto& kv = c.kv_;
    // synthetic scenes
    kv["scene.room_w_min"] = "4.0";
    kv["scene.room_w_max"] = "5.2";
    kv["scene.room_d_min"] = "4.4";
    kv["scene.room_d_max"] = "6.0";
    kv["scene.objects_min"] = "2";
    kv["scene.objects_max"] = "5";
    kv["scene.clearance"] = "0.3";       // min inter-object footprint gap (m)
    kv["scene.l_shape_prob"] = "0.3";
    kv["scene.wall_h_min"] = "2.3";
    kv["scene.wall_h_max"] = "2.7";
    kv["scene.category_mix"] = "1,1,1,1,1,1";  // box_crate,cylinder_bin,table,chair,l_sofa,wall_display
    // simulated scans
    kv["scan.density"] = "80";           // points per m^2 of surface
    kv["scan.noise_sigma"] = "0.005";
    kv["scan.bottom_cull"] = "true";
    kv["scan.sectors"] = "2";            // occluded angular sectors
    // backbone
    kv["backbone.min_points"] = "1024";
    kv["backbone.level1_centroids"] = "512";
    kv["backbone.level2_centroids"] = "128";
    kv["backbone.radius1"] = "0.2";
    kv["backbone.radius2"] = "0.4";
    kv["backbone.max_neighbors"] = "16";
    kv["backbone.level1_width"] = "64";
    kv["backbone.hidden1"] = "64";
    kv["backbone.hidden2"] = "128";
    kv["model.feature_width"] = "128";
    // proposals
    kv["proposal.obj_candidates"] = "64";
    kv["proposal.wall_candidates"] = "16";
    kv["proposal.cluster_radius"] = "0.3";
    kv["proposal.max_members"] = "16";
    kv["proposal.vote_hidden"] = "128";
    // shape anchors
    kv["anchors.count"] = "18";
    kv["anchors.gt_samples"] = "512";    // surface samples for the Chamfer target
    kv["anchors.radius_floor"] = "0.02";
    kv["anchors.sample_iterations"] = "2";
    kv["anchors.deform_hidden"] = "64";
    kv["anchors.fuse_hidden"] = "0";     // 0: single affine layer
    // prediction heads
    kv["heads.heading_bins"] = "12";
    kv["heads.positive_radius"] = "0.3";
    kv["heads.negative_radius"] = "0.6";
    kv["heads.decoder_hidden"] = "128";
    // shape embedding / occupancy decoder
    kv["shape.embed_width"] = "256";
    kv["shape.enc_hidden"] = "128";
    kv["shape.dec_hidden"] = "128";
    kv["shape.queries_uniform"] = "1024";
    kv["shape.queries_near"] = "1024";
    kv["shape.near_sigma"] = "0.05";
    kv["shape.prior_cap"] = "256";       // encoder points per sample per step
    kv["shape.queries_per_step"] = "128";
    kv["shape.grid_resolution"] = "32";
    kv["shape.iso"] = "0.5";
    kv["shape.use_anchor_augment"] = "true";
    kv["shape.proposal_pool_cap"] = "600";
    // training
    kv["train.seed"] = "1";
    kv["train.det_epochs"] = "30";
    kv["train.det_batch"] = "8";
    kv["train.det_lr"] = "1e-3";
    kv["train.shape_epochs"] = "100";
    kv["train.shape_batch"] = "32";
    kv["train.shape_lr"] = "1e-4";
    kv["train.pretrain_epochs"] = "12";
    kv["train.adam_beta1"] = "0.9";
    kv["train.adam_beta2"] = "0.999";
    kv["train.adam_eps"] = "1e-8";
    kv["train.plateau_factor"] = "0.5";
    kv["train.plateau_patience"] = "10";
    kv["train.plateau_min_delta"] = "1e-4";
    // reconstruction
    kv["recon.objectness"] = "0.5";
    kv["recon.nms_iou"] = "0.25";
    // layout post-processing
    kv["layout.merge_angle_deg"] = "15";
    kv["layout.merge_dist"] = "0.3";
    kv["layout.parallel_angle_deg"] = "5";
    // evaluation
    kv["eval.iou_thresholds"] = "0.25,0.5";
    kv["eval.cd_thresholds"] = "0.1,0.047";
    kv["eval.layout_dist"] = "0.3";
    kv["eval.cd_samples"] = "2048";
    return c;
  }

  /// Defaults overlaid with the given file.
  static Config load(const fs::path& path) {
    Config c = defaults();
    c.merge_text(read_file(path), path.string());
    return c;
  }

  void merge_text(const std::string& text, const std::string& origin = "<text>") {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        if (line.find_first_not_of(" \t\r") != std::string::npos)
          throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                   ": expected `key = value`");
        continue;
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (!kv_.count(key))
        throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                 ": unknown config key `" + key + "`");
      kv_[key] = value;
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (!kv_.count(key)) throw std::invalid_argument("unknown config key: " + key);
    kv_[key] = value;
  }

  const std::string& get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw std::invalid_argument("unknown config key: " + key);
    return it->second;
  }

  double get_d(const std::string& key) const { return std::stod(get(key)); }
  int get_i(const std::string& key) const { return std::stoi(get(key)); }
  std::uint64_t get_u64(const std::string& key) const {
    return std::stoull(get(key));
  }
  bool get_b(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key " + key + ": expected bool, got " + v);
  }
  std::vector<double> get_list(const std::string& key) const {
    std::vector<double> out;
    std::istringstream ss(get(key));
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
  }

  std::string encode() const {
    std::ostringstream out;
    for (const auto& [k, v] : kv_) out << k << " = " << v << "\n";
    return out.str();
  }

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  static std::string trim(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace ancs
